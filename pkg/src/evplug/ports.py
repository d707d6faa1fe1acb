"""Charging-port face models loaded from versioned JSON assets.

A port model lives in its own right-handed frame: the contact face is the
z = 0 plane, +Z points outward (toward a viewer facing the port), and all
pin centers are coplanar in that plane.  The same geometry describes the
mating plug face, which carries the identical contact pattern.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import EvplugError
from .jsonio import load_json

ASSET_DIR_ENV = "EVPLUG_ASSET_DIR"
_PORT_SCHEMA = "evplug-port-v1"
_PIN_COUNT = {"type1": 5, "type2": 7}
_COPLANAR_TOL = 1e-9


class AssetError(EvplugError):
    """Asset file missing, unreadable, or schema mismatch."""


@dataclass(frozen=True)
class PinSpec:
    label: str
    center: np.ndarray  # (3,) port frame, z = 0
    radius: float


@dataclass(frozen=True)
class CirclePrimitive:
    center: np.ndarray  # (2,) in-plane
    radius: float


@dataclass(frozen=True)
class LinePrimitive:
    p0: np.ndarray  # (2,) in-plane
    p1: np.ndarray


@dataclass(frozen=True)
class PortModel:
    kind: str
    pins: tuple[PinSpec, ...]
    outline: tuple
    slot_direction: np.ndarray  # unit, in-plane
    face_radius: float
    insertion_depth: float

    def __post_init__(self) -> None:
        if self.kind not in _PIN_COUNT:
            raise ValueError(f"unknown port kind {self.kind!r}")
        if len(self.pins) != _PIN_COUNT[self.kind]:
            raise ValueError(
                f"{self.kind} requires {_PIN_COUNT[self.kind]} pins, got {len(self.pins)}"
            )
        labels = [p.label for p in self.pins]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate pin labels: {labels}")
        for p in self.pins:
            if abs(p.center[2]) > _COPLANAR_TOL:
                raise ValueError(f"pin {p.label} off the z=0 plane: z={p.center[2]}")
            if p.radius <= 0:
                raise ValueError(f"pin {p.label} has non-positive radius")
        s = self.slot_direction
        if abs(np.linalg.norm(s) - 1.0) > 1e-9 or abs(s[2]) > 1e-12:
            raise ValueError("slot_direction must be a unit vector in the port plane")
        if self.insertion_depth <= 0:
            raise ValueError("insertion depth must be positive")

    def pin_labels(self) -> tuple[str, ...]:
        return tuple(p.label for p in self.pins)

    def pin_array(self) -> np.ndarray:
        """Pin centers as an (n, 3) array in model order."""
        return np.array([p.center for p in self.pins])

    def pin(self, label: str) -> PinSpec:
        for p in self.pins:
            if p.label == label:
                return p
        raise KeyError(label)


def asset_path(name: str) -> str:
    """Resolve an asset file, honoring the EVPLUG_ASSET_DIR override."""
    override = os.environ.get(ASSET_DIR_ENV)
    if override:
        cand = os.path.join(override, name)
        if os.path.exists(cand):
            return cand
        raise AssetError(f"{name} not found in {ASSET_DIR_ENV}={override}")
    ref = resources.files("evplug.assets").joinpath(name)
    with resources.as_file(ref) as p:
        return str(p)


def load_port_model(kind: str) -> PortModel:
    if kind not in _PIN_COUNT:
        raise AssetError(f"unknown port kind {kind!r}; expected one of {sorted(_PIN_COUNT)}")
    try:
        data = load_json(asset_path(f"port_{kind}.json"))
    except OSError as e:
        raise AssetError(f"cannot read port asset for {kind!r}: {e}") from e
    if data.get("schema") != _PORT_SCHEMA:
        raise AssetError(
            f"port asset schema mismatch: {data.get('schema')!r} != {_PORT_SCHEMA!r}"
        )
    pins = tuple(
        PinSpec(
            label=str(p["label"]),
            center=np.asarray(p["center"], dtype=float),
            radius=float(p["radius"]),
        )
        for p in data["pins"]
    )
    outline = []
    for prim in data["outline"]:
        if prim["type"] == "circle":
            outline.append(
                CirclePrimitive(np.asarray(prim["center"], dtype=float), float(prim["radius"]))
            )
        elif prim["type"] == "line":
            outline.append(
                LinePrimitive(np.asarray(prim["p0"], dtype=float), np.asarray(prim["p1"], dtype=float))
            )
        else:
            raise AssetError(f"unknown outline primitive {prim['type']!r}")
    return PortModel(
        kind=str(data["kind"]),
        pins=pins,
        outline=tuple(outline),
        slot_direction=np.asarray(data["slot_direction"], dtype=float),
        face_radius=float(data["face_radius"]),
        insertion_depth=float(data["insertion_depth"]),
    )
