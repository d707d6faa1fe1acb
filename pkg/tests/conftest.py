from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evplug.experiment import make_rig
from evplug.ports import load_port_model
from evplug.robot import load_ur10


@pytest.fixture(scope="session")
def chain():
    return load_ur10()


@pytest.fixture(scope="session")
def rig():
    return make_rig()


@pytest.fixture(scope="session")
def port_type2():
    return load_port_model("type2")


@pytest.fixture(scope="session")
def port_type1():
    return load_port_model("type1")
