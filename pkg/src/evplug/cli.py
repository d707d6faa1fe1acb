"""Command line interface.

Subcommands: render, calibrate, detect, run-experiment, report.  Every
command is deterministic for a fixed seed and writes JSON through the
canonical 17-significant-digit serializer, so repeated invocations are
byte-identical.  Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .detection import build_port_templates, detect_port
from .errors import EvplugError
from .experiment import (
    ExperimentConfig,
    PRESETS,
    make_rig,
    noise_preset,
    port_pose,
    run_calibration,
    run_experiment,
)
from .jsonio import dump_canonical, dumps_canonical, load_json
from .pgm import write_pgm
from .ports import load_port_model
from .render import render_views
from .scene import SceneConfig, StereoRig, port_pin_pixels

_RUNS_SCHEMA = "evplug-runs-v1"
_CSV_COLUMNS = (
    "run", "port_angle_deg", "category", "residual_angle_deg", "max_force_n",
    "halted", "unplug_ok", "match_score", "n_pins_used", "error",
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: _Parser, *names: str) -> None:
    if "config" in names:
        p.add_argument("--config", help="JSON config file")
    if "seed" in names:
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    if "port-type" in names:
        p.add_argument("--port-type", choices=("type1", "type2"), default=None,
                       help="charging port model (default type2)")
    if "port-angle" in names:
        p.add_argument("--port-angle", type=float, default=None, metavar="DEG",
                       help="port yaw toward camera 2 (default 10)")
    if "runs" in names:
        p.add_argument("--runs", type=int, default=None, metavar="N")
    if "noise" in names:
        p.add_argument("--noise", choices=sorted(PRESETS), default=None,
                       help="noise preset")
    if "out" in names:
        p.add_argument("--out", default="out", metavar="DIR", help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="evplug", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", parents=[], help="render a stereo pair plus ground truth")
    _add_common(p, "config", "seed", "port-type", "port-angle", "noise", "out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("calibrate", help="synthesize poses and solve the hand-eye problem")
    _add_common(p, "seed", "port-type", "runs", "noise", "out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="render a scene and run stereo port detection")
    _add_common(p, "config", "seed", "port-type", "port-angle", "noise", "out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("run-experiment", help="full plug-in experiment batch")
    _add_common(p, "config", "seed", "port-type", "port-angle", "runs", "noise", "out")
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("report", help="summarize a runs.jsonl log")
    p.add_argument("log", help="runs.jsonl produced by run-experiment")
    p.add_argument("--out", default=None, metavar="DIR",
                   help="CSV output directory (default: alongside the log)")
    p.set_defaults(func=cmd_report)
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise EvplugError(
            f"config parse error in {path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc


def _scene_from_args(args) -> tuple[SceneConfig, StereoRig]:
    rig = make_rig()
    if args.config is not None:
        cfg = _load_config(args.config)
        if "rig" in cfg:
            rig = StereoRig.from_json(cfg["rig"])
        scene = SceneConfig.from_json(cfg["scene"] if "scene" in cfg else cfg)
        return scene, rig
    preset = noise_preset(args.noise or "none")
    port = load_port_model(args.port_type or "type2")
    angle = 10.0 if args.port_angle is None else args.port_angle
    scene = SceneConfig(
        port_pose=port_pose(angle),
        port=port,
        pixel_noise_sigma=preset.grey_sigma,
        rng_seed=args.seed,
    )
    return scene, rig


def cmd_render(args) -> int:
    scene, rig = _scene_from_args(args)
    img1, img2 = render_views(scene, rig)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "cam1.pgm", img1)
    write_pgm(out / "cam2.pgm", img2)
    pins = port_pin_pixels(scene, rig)
    truth = {
        "schema": "evplug-groundtruth-v1",
        "scene": scene.to_json(),
        "rig": rig.to_json(),
        "pin_pixels": {
            label: {"cam1": list(p1), "cam2": list(p2)}
            for label, (p1, p2) in pins.items()
        },
    }
    dump_canonical(truth, out / "ground_truth.json")
    print(f"wrote cam1.pgm, cam2.pgm, ground_truth.json to {out}")
    return 0


def cmd_calibrate(args) -> int:
    preset = noise_preset(args.noise or "none")
    port = load_port_model(args.port_type or "type2")
    n_poses = 26 if args.runs is None else args.runs
    result = run_calibration(port, n_poses, preset.coord_sigma_px, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_canonical(result.to_json(), out / "calibration.json")
    worst = max(t for _, t in result.per_pair_residual)
    print(f"calibrated from {n_poses} poses (noise preset {preset.name})")
    print(f"mean translation error: {result.mean_translation_error * 1e3:.4f} mm")
    print(f"worst pair translation residual: {worst * 1e3:.4f} mm")
    print(f"wrote {out / 'calibration.json'}")
    return 0


def cmd_detect(args) -> int:
    scene, rig = _scene_from_args(args)
    preset = noise_preset(args.noise or "none")
    img1, img2 = render_views(scene, rig)
    frontal = SceneConfig(port_pose=port_pose(0.0), port=scene.port)
    templates = build_port_templates(frontal, rig)
    rng = np.random.default_rng(args.seed)
    result = detect_port(
        img1, img2, rig, scene.port, templates,
        coord_noise_sigma=preset.coord_sigma_px, rng=rng,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_canonical(result.to_json(), out / "detection.json")
    est = result.estimate.pose
    true_cam = rig.T_world_cam1.inverse().compose(scene.port_pose)
    gap = float(np.linalg.norm(est.translation - true_cam.translation))
    print(f"match scores: cam1 {result.match1.score:.4f}, cam2 {result.match2.score:.4f}")
    print(f"pins used: {', '.join(result.used_labels)}")
    print(f"estimated port at {est.translation.round(6).tolist()} (camera frame)")
    print(f"translation gap to ground truth: {gap * 1e3:.4f} mm")
    print(f"wrote {out / 'detection.json'}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    cfg = {f.name: f.default for f in dataclass_fields(ExperimentConfig)}
    if args.config is not None:
        overrides = _load_config(args.config)
        unknown = set(overrides) - set(cfg)
        if unknown:
            raise EvplugError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(overrides)
    if args.port_type is not None:
        cfg["port_type"] = args.port_type
    if args.port_angle is not None:
        cfg["port_angle_deg"] = args.port_angle
    if args.runs is not None:
        cfg["runs"] = args.runs
    if args.noise is not None:
        cfg["noise"] = args.noise
    cfg["seed"] = args.seed
    return ExperimentConfig(**cfg)


def cmd_run_experiment(args) -> int:
    cfg = _experiment_config(args)
    result = run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_canonical(result, out / "experiment.json")
    header = {
        "schema": _RUNS_SCHEMA,
        "config": result["config"],
        "calibration_error_m": result["calibration"]["mean_translation_error"],
    }
    with open(out / "runs.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(header) + "\n")
        for record in result["runs"]:
            fh.write(dumps_canonical(record) + "\n")
    for record in result["runs"]:
        if record["error"] is None:
            print(
                f"run {record['run']}: {record['category']} "
                f"(residual {record['residual_angle_deg']:.2f} deg, "
                f"max force {record['max_force_n']:.1f} N)"
            )
        else:
            print(f"run {record['run']}: ERROR {record['error']}")
    summary = result["summary"]
    print(f"summary at {cfg.port_angle_deg:g} deg over {cfg.runs} runs:")
    for label in ("Success", "Success: Misalignment", "Failed: Missed rotation"):
        print(f"  {label}: {summary[label]}")
    if summary["errors"]:
        print(f"  errors: {summary['errors']}")
    print(f"  success rate: {summary['success_rate']:.2f}")
    print(f"wrote {out / 'experiment.json'} and {out / 'runs.jsonl'}")
    return 0


def _read_runs_log(path: str) -> tuple[dict | None, list[dict]]:
    try:
        raw = open(path, encoding="utf-8").read()
    except FileNotFoundError:
        raise EvplugError(f"log not found: {path}")
    records = []
    header = None
    offset = 0
    for line in raw.splitlines(keepends=True):
        if line.strip():
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvplugError(
                    f"parse error in {path} at byte {offset + exc.pos}: {exc.msg}"
                )
            if header is None and "schema" in obj:
                if obj["schema"] != _RUNS_SCHEMA:
                    raise EvplugError(
                        f"schema mismatch: expected {_RUNS_SCHEMA}, got {obj['schema']!r}"
                    )
                header = obj
            else:
                records.append(obj)
        offset += len(line.encode())
    if header is None and records:
        raise EvplugError(f"schema mismatch: no {_RUNS_SCHEMA} header line in {path}")
    return header, records


def cmd_report(args) -> int:
    header, records = _read_runs_log(args.log)
    if not records:
        print("0 runs")
        return 0
    angles = sorted({r["port_angle_deg"] for r in records})
    by_angle = {a: [r for r in records if r["port_angle_deg"] == a] for a in angles}
    rows = max(len(v) for v in by_angle.values())
    headers = ["Exp"] + [f"Charging Port Angle {a:g} deg" for a in angles]
    cells = []
    for i in range(rows):
        row = [str(i + 1)]
        for a in angles:
            group = by_angle[a]
            if i < len(group):
                r = group[i]
                row.append(r["category"] if r["error"] is None else "Error")
            else:
                row.append("-")
        cells.append(row)
    widths = [max(len(h), *(len(row[j]) for row in cells)) for j, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in cells:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    print()
    for a in angles:
        group = by_angle[a]
        ok = sum(1 for r in group if r["error"] is None and r["category"].startswith("Success"))
        print(f"{a:g} deg: {ok}/{len(group)} connected")
    if header is not None:
        print(f"calibration error: {header['calibration_error_m'] * 1e3:.4f} mm")
    out_dir = Path(args.out) if args.out is not None else Path(args.log).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for r in records:
            writer.writerow(["" if r.get(c) is None else r.get(c) for c in _CSV_COLUMNS])
    print(f"wrote {csv_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EvplugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
