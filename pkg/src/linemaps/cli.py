"""Command-line harness: data generation, extraction benchmark, SLAM runs, rendering.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .bench import METRIC_FIELDS, run_extraction_benchmark
from .errors import ConfigError, IndeterminateSystem, LinemapsError
from .extraction import ExtractorConfig
from .render import render_svg
from .simulator import (
    SensorModel,
    benchmark_environment,
    cast_scan,
    dead_reckoning,
    derive_seed,
    door_wall_scene,
    dumps_environment,
    load_environment,
    noisy_odometry,
    read_scan_log,
    read_scan_log_meta,
    sample_poses,
    waypoint_trajectory,
    write_scan_log,
)
from .slam import SlamConfig, run_slam, summarize_log, trajectory_errors

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# extra SeedSequence stream ids so pose and odometry draws never share a scan's stream
POSE_STREAM = 2**32
ODOM_STREAM = 2**32 + 1

DEFAULT_EXTRACTORS = ["SW", "SW+ORT", "SM", "SM+ORT", "LT", "LT+ORT", "SR", "SR+ORT"]


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _env_from_spec(spec: str, base: Path | None = None):
    if spec == "benchmark":
        return benchmark_environment()
    if spec == "door-wall":
        return door_wall_scene(wall_y=3.0)
    p = Path(spec)
    if base is not None and not p.is_absolute():
        p = base / p
    if not p.exists():
        raise ConfigError(f"environment file {p} not found")
    return load_environment(p)


def _env_identity(spec: str, base: Path | None = None) -> str:
    """Path-independent identity of an environment spec, for config hashes."""
    if spec in ("benchmark", "door-wall"):
        return spec
    p = Path(spec)
    if base is not None and not p.is_absolute():
        p = base / p
    return "sha256:" + hashlib.sha256(p.read_bytes()).hexdigest() if p.exists() else spec


def _load_config(path: str) -> tuple[dict, Path]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg, p.parent


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------------------
# commands


def cmd_gen_env(args) -> int:
    if args.kind == "benchmark":
        env = benchmark_environment()
    else:
        env = door_wall_scene(door_offset=args.door_offset, wall_y=3.0)
    cfg = {"command": "gen-env", "kind": args.kind, "door_offset": args.door_offset, "seed": args.seed}
    meta = {"config_hash": config_hash(cfg), "seed": args.seed, "kind": args.kind}
    out = Path(args.out)
    _write(out, dumps_environment(env))
    _write(out.with_name(out.name + ".meta.json"), json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _read_waypoints(path: str) -> list:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"trajectory file {p} not found")
    wp = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(wp, list) or len(wp) < 2:
        raise ConfigError("trajectory must be a JSON list of at least two [x, y] waypoints")
    return wp


def cmd_gen_scans(args) -> int:
    env = _env_from_spec(args.env)
    if args.sigma < 0:
        raise ConfigError("--sigma must be non-negative")
    sensor = SensorModel(
        max_range=args.max_range,
        fov=math.radians(args.fov_deg),
        angular_resolution=math.radians(args.resolution_deg),
        sigma=args.sigma,
    )
    cfg = {
        "command": "gen-scans",
        "env": _env_identity(args.env),
        "poses": args.poses,
        "step": args.step,
        "odom_sigma": list(args.odom_sigma),
        "seed": args.seed,
        "sensor": sensor.to_json(),
    }
    if args.trajectory:
        poses = waypoint_trajectory(_read_waypoints(args.trajectory), args.step)
        cfg["waypoints"] = _read_waypoints(args.trajectory)
        odom = noisy_odometry(poses, args.odom_sigma, derive_seed(args.seed, ODOM_STREAM))
    else:
        if args.poses is None or args.poses < 1:
            raise ConfigError("--poses must be a positive count when no --trajectory is given")
        poses = sample_poses(env, args.poses, derive_seed(args.seed, POSE_STREAM))
        odom = None
    scans = []
    for k, pose in enumerate(poses):
        scan = cast_scan(env, pose, sensor, derive_seed(args.seed, k), pose_id=k)
        if odom is not None and k > 0:
            scan.odom = odom[k - 1]
        scans.append(scan)
    meta = {"config_hash": config_hash(cfg), "seed": args.seed, "sensor": sensor.to_json(), "count": len(scans)}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_scan_log(scans, args.out, meta)
    return EXIT_OK


def _metrics_csv(result, names, chash: str, seed) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["config_hash", "seed"] + METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    for name in names:
        row = result.metrics[name].row(name)
        w.writerow({"config_hash": chash, "seed": seed, **row})
    return buf.getvalue()


def _table(result, names, with_speed: bool) -> str:
    head = f"{'extractor':<8} {'TP%':>7} {'ND%':>7} {'prec%':>7} {'err_r mm':>9} {'err_a rad':>10}"
    if with_speed:
        head += f" {'speed Hz':>9}"
    rows = [head]
    for n in names:
        m = result.metrics[n]
        row = f"{n:<8} {m.tp_rate:7.2f} {m.nd_rate:7.2f} {m.precision:7.2f} {m.mean_err_r:9.3f} {m.mean_err_alpha:10.5f}"
        if with_speed:
            row += f" {m.speed:9.1f}"
        rows.append(row)
    return "\n".join(rows) + "\n"


def cmd_bench_extract(args) -> int:
    cfg, base = _load_config(args.config)
    known = {"scans", "env", "extractors", "tol_r", "tol_alpha", "min_hits", "timing_passes", "extractor_options", "out"}
    extra = set(cfg) - known
    if extra:
        raise ConfigError(f"unknown bench-extract options: {sorted(extra)}")
    if "scans" not in cfg:
        raise ConfigError("bench-extract config needs 'scans'")
    scans_path = _resolve(base, cfg["scans"])
    if not scans_path.exists():
        raise ConfigError(f"scan log {scans_path} not found")
    env = _env_from_spec(cfg.get("env", "benchmark"), base)
    names = cfg.get("extractors", DEFAULT_EXTRACTORS)
    opts = cfg.get("extractor_options", {})
    try:
        extractors = [ExtractorConfig.from_name(n, **opts) for n in names]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad extractor configuration: {exc}") from exc
    scans = read_scan_log(scans_path)
    if any(s.pose is None for s in scans):
        raise ConfigError("bench-extract needs scans with ground-truth poses")
    meta = read_scan_log_meta(scans_path)
    seed = meta.get("seed", "")
    out = Path(args.out or _resolve(base, cfg.get("out", "bench_out")))
    eff = {k: v for k, v in cfg.items() if k not in ("out", "scans")}
    eff["env"] = _env_identity(cfg.get("env", "benchmark"), base)
    eff["scan_log_hash"] = meta.get("config_hash", "")
    chash = config_hash(eff)
    result = run_extraction_benchmark(
        scans,
        env,
        extractors,
        tol_r=cfg.get("tol_r", 0.05),
        tol_alpha=cfg.get("tol_alpha", 0.05),
        min_hits=cfg.get("min_hits", 8),
        timing_passes=cfg.get("timing_passes", 3),
    )
    _write(out / "metrics.csv", _metrics_csv(result, names, chash, seed))
    header = (
        f"# config_hash={chash} seed={seed}\n"
        "# TP = matched found / visible truth; ND = unmatched visible truth / visible truth;\n"
        "# prec = matched found / found; errors over matched pairs\n"
    )
    _write(out / "table.txt", header + _table(result, names, with_speed=False))
    tbuf = io.StringIO()
    tw = csv.writer(tbuf, lineterminator="\n")
    tw.writerow(["config_hash", "seed", "extractor", "speed_hz"])
    for n in names:
        tw.writerow([chash, seed, n, f"{result.metrics[n].speed:.3f}"])
    _write(out / "timing.csv", tbuf.getvalue())
    sys.stdout.write(_table(result, names, with_speed=True))
    return EXIT_OK


def _map_doc(result, meta: dict) -> dict:
    lms = []
    for lid in sorted(result.estimate.landmarks):
        line = result.estimate.landmarks[lid]
        occ, free = result.evidence[lid]
        lms.append(
            {
                "id": lid,
                "r": line.r,
                "alpha": line.alpha,
                "cov": np.asarray(result.landmark_cov[lid]).tolist(),
                "occupied": occ.as_pairs(),
                "free": free.as_pairs(),
            }
        )
    traj = [list(result.estimate.poses[k].as_array()) for k in sorted(result.estimate.poses)]
    return {"meta": meta, "landmarks": lms, "trajectory": traj}


def cmd_slam(args) -> int:
    cfg, base = _load_config(args.config)
    if "scans" not in cfg:
        raise ConfigError("slam config needs 'scans'")
    scans_path = _resolve(base, cfg["scans"])
    if not scans_path.exists():
        raise ConfigError(f"scan log {scans_path} not found")
    env_spec = cfg.get("env")
    env = _env_from_spec(env_spec, base) if env_spec else None
    slam_opts = {k: v for k, v in cfg.items() if k not in ("scans", "env", "out")}
    try:
        slam_cfg = SlamConfig.from_json(slam_opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad slam configuration: {exc}") from exc
    scans = read_scan_log(scans_path)
    if not scans:
        raise ConfigError("scan log is empty")
    log_meta = read_scan_log_meta(scans_path)
    seed = log_meta.get("seed", "")
    eff = {"slam": slam_cfg.to_json(), "env": _env_identity(env_spec, base) if env_spec else None, "scan_log_hash": log_meta.get("config_hash", "")}
    chash = config_hash(eff)
    meta = {"config_hash": chash, "seed": seed}
    out = Path(args.out or _resolve(base, cfg.get("out", "slam_out")))

    result = run_slam(scans, slam_cfg)

    doc = _map_doc(result, meta)
    _write(out / "map.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    lines = [json.dumps({**r, "meta": meta}, sort_keys=True) for r in result.log]
    _write(out / "associations.jsonl", "\n".join(lines) + "\n")
    tbuf = io.StringIO()
    tw = csv.writer(tbuf, lineterminator="\n")
    tw.writerow(["# config_hash", chash, "seed", seed])
    tw.writerow(["index", "pose_id", "x", "y", "theta", "gt_x", "gt_y", "gt_theta"])
    for k, pid in enumerate(result.pose_ids):
        p = result.estimate.poses[k]
        g = scans[k].pose
        gt = [repr(g.x), repr(g.y), repr(g.theta)] if g is not None else ["", "", ""]
        tw.writerow([k, pid, repr(p.x), repr(p.y), repr(p.theta)] + gt)
    _write(out / "trajectory.csv", tbuf.getvalue())
    summary = {"meta": meta, "association": summarize_log(result.log), "landmarks": len(result.estimate.landmarks)}
    if all(s.pose is not None for s in scans):
        truth = [s.pose for s in scans]
        est = [result.estimate.poses[k] for k in range(len(scans))]
        dr = dead_reckoning(truth[0], [s.odom for s in scans[1:]])
        rmse, rmse_th = trajectory_errors(est, truth)
        dr_rmse, dr_th = trajectory_errors(dr, truth)
        summary["trajectory"] = {"rmse_xy": rmse, "rmse_theta": rmse_th, "dead_reckoning_rmse_xy": dr_rmse, "dead_reckoning_rmse_theta": dr_th}
    _write(out / "summary.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    result.graph.dump(out / "graph.json", result.estimate)
    _write(out / "map.svg", render_svg(doc, env))
    return EXIT_OK


def cmd_render(args) -> int:
    p = Path(args.map)
    if not p.exists():
        raise ConfigError(f"map file {p} not found")
    doc = json.loads(p.read_text(encoding="utf-8"))
    env = _env_from_spec(args.env) if args.env else None
    _write(Path(args.out), render_svg(doc, env))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="linemaps", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-env", help="write an environment JSON file")
    g.add_argument("--out", required=True)
    g.add_argument("--kind", choices=["benchmark", "door-wall"], default="benchmark")
    g.add_argument("--door-offset", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_env)

    s = sub.add_parser("gen-scans", help="simulate a scan log")
    s.add_argument("--env", default="benchmark", help="environment file, 'benchmark' or 'door-wall'")
    s.add_argument("--poses", type=int, help="number of random poses")
    s.add_argument("--trajectory", help="JSON waypoints; scans along the path with noisy odometry")
    s.add_argument("--step", type=float, default=0.25)
    s.add_argument("--odom-sigma", type=float, nargs=3, default=[0.02, 0.02, 0.01], metavar=("SX", "SY", "STH"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float, default=0.01)
    s.add_argument("--max-range", type=float, default=30.0)
    s.add_argument("--fov-deg", type=float, default=180.0)
    s.add_argument("--resolution-deg", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_scans)

    b = sub.add_parser("bench-extract", help="compare line extractors against ground truth")
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_extract)

    m = sub.add_parser("slam", help="run the SLAM pipeline over a scan log")
    m.add_argument("--config", required=True)
    m.add_argument("--out")
    m.set_defaults(func=cmd_slam)

    r = sub.add_parser("render", help="render a map JSON to SVG")
    r.add_argument("--map", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--env")
    r.set_defaults(func=cmd_render)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IndeterminateSystem as exc:
        print(f"runtime failure: {exc} (variable {exc.variable})", file=sys.stderr)
        return EXIT_RUNTIME
    except LinemapsError as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
