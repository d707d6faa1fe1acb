from __future__ import annotations

import json
import math
import os

import numpy as np
import pytest

from evplug.jsonio import dump_canonical, dumps_canonical, format_float, load_json
from evplug.pgm import read_pgm, write_pgm
from evplug.ports import (
    ASSET_DIR_ENV,
    AssetError,
    PinSpec,
    PortModel,
    asset_path,
    load_port_model,
)


def test_format_float_round_trips_doubles():
    rng = np.random.default_rng(0)
    values = [0.1, 1.0 / 3.0, math.pi, 1e-300, 2**53 + 1.0]
    values += list(rng.uniform(-1e6, 1e6, 50))
    for v in values:
        assert float(format_float(v)) == v


def test_format_float_normalizes_zero_and_marks_floats():
    assert format_float(0.0) == "0.0"
    assert format_float(-0.0) == "0.0"
    assert format_float(3.0) == "3.0"  # no bare integer literals
    with pytest.raises(ValueError):
        format_float(float("nan"))
    with pytest.raises(ValueError):
        format_float(float("inf"))


def test_dumps_canonical_sorts_keys_and_is_stable():
    obj = {"b": 1, "a": [1.5, None, True, "x"], "c": {"z": 0.0, "y": 2}}
    s1 = dumps_canonical(obj)
    s2 = dumps_canonical({"c": {"y": 2, "z": 0.0}, "a": [1.5, None, True, "x"], "b": 1})
    assert s1 == s2
    assert s1.index('"a"') < s1.index('"b"') < s1.index('"c"')
    assert json.loads(s1) == obj


def test_dumps_canonical_rejects_unserializable():
    with pytest.raises(TypeError):
        dumps_canonical({"x": object()})
    with pytest.raises(TypeError):
        dumps_canonical({1: "non-string key"})


def test_dump_canonical_writes_byte_identical_files(tmp_path):
    obj = {"values": [math.pi, 1e-9, 42], "name": "run"}
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    dump_canonical(obj, p1)
    dump_canonical(obj, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes().endswith(b"\n")
    assert load_json(p1) == json.loads(dumps_canonical(obj))


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(48, 64), dtype=np.uint8)
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    np.testing.assert_array_equal(back, img)
    assert back.dtype == np.uint8


def test_pgm_reader_skips_comments(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    path = tmp_path / "c.pgm"
    with open(path, "wb") as fh:
        fh.write(b"P5\n# a comment line\n4 3\n# another\n255\n")
        fh.write(img.tobytes())
    np.testing.assert_array_equal(read_pgm(path), img)


def test_pgm_rejects_bad_inputs(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros((4, 4), dtype=float))
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros((4, 4, 3), dtype=np.uint8))
    bad_magic = tmp_path / "bad.pgm"
    bad_magic.write_bytes(b"P2\n4 3\n255\n" + b"0" * 12)
    with pytest.raises(ValueError):
        read_pgm(bad_magic)
    truncated = tmp_path / "short.pgm"
    truncated.write_bytes(b"P5\n4 3\n255\n" + b"\x00" * 5)
    with pytest.raises(ValueError):
        read_pgm(truncated)


def test_port_models_load_with_expected_pin_counts(port_type1, port_type2):
    assert port_type1.kind == "type1" and len(port_type1.pins) == 5
    assert port_type2.kind == "type2" and len(port_type2.pins) == 7
    for port in (port_type1, port_type2):
        assert port.face_radius > 0
        assert port.insertion_depth > 0
        assert np.linalg.norm(port.slot_direction) == pytest.approx(1.0)
        arr = port.pin_array()
        assert arr.shape == (len(port.pins), 3)
        np.testing.assert_array_equal(arr[:, 2], 0.0)
    assert port_type2.pin("PE").label == "PE"
    with pytest.raises(KeyError):
        port_type2.pin("nope")


def test_unknown_port_kind_raises():
    with pytest.raises(AssetError):
        load_port_model("type9")


def test_asset_dir_override(tmp_path, monkeypatch, port_type2):
    monkeypatch.setenv(ASSET_DIR_ENV, str(tmp_path))
    with pytest.raises(AssetError):
        asset_path("port_type2.json")  # empty override dir
    src = None
    monkeypatch.delenv(ASSET_DIR_ENV)
    src = asset_path("port_type2.json")
    with open(src, "rb") as fh:
        payload = fh.read()
    (tmp_path / "port_type2.json").write_bytes(payload)
    monkeypatch.setenv(ASSET_DIR_ENV, str(tmp_path))
    override = load_port_model("type2")
    assert override.pin_labels() == port_type2.pin_labels()


def test_port_model_validation_rules(port_type2):
    pins = port_type2.pins
    with pytest.raises(ValueError):
        PortModel(kind="type3", pins=pins, outline=(),
                  slot_direction=np.array([0.0, 1.0, 0.0]),
                  face_radius=0.035, insertion_depth=0.025)
    with pytest.raises(ValueError):
        PortModel(kind="type2", pins=pins[:5],
                  outline=(), slot_direction=np.array([0.0, 1.0, 0.0]),
                  face_radius=0.035, insertion_depth=0.025)
    lifted = pins[:6] + (PinSpec(pins[6].label,
                                 np.array([0.0, 0.0, 0.01]), 0.003),)
    with pytest.raises(ValueError):
        PortModel(kind="type2", pins=lifted, outline=(),
                  slot_direction=np.array([0.0, 1.0, 0.0]),
                  face_radius=0.035, insertion_depth=0.025)
    with pytest.raises(ValueError):
        PortModel(kind="type2", pins=pins, outline=(),
                  slot_direction=np.array([0.0, 2.0, 0.0]),
                  face_radius=0.035, insertion_depth=0.025)
