"""Common exception base for the package.

Every domain error raised by evplug derives from EvplugError so the CLI
can map any of them to a runtime-failure exit code without enumerating.
"""


class EvplugError(Exception):
    pass
