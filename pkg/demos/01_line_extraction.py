"""Extract lines from one simulated scan with and without odds-ratio merging."""

from __future__ import annotations

from linemaps.bench import match_lines, visible_truth_lines
from linemaps.extraction import ExtractorConfig, extract
from linemaps.simulator import SensorModel, benchmark_environment, cast_scan, derive_seed, sample_poses


def main() -> None:
    env = benchmark_environment()
    sensor = SensorModel(sigma=0.01)
    pose = sample_poses(env, 1, rng_seed=derive_seed(10, 2**32))[0]
    scan = cast_scan(env, pose, sensor, derive_seed(10, 0))
    truth = visible_truth_lines(env, pose, sensor)
    print(f"pose ({pose.x:.2f}, {pose.y:.2f}, {pose.theta:.2f}), {len(truth)} visible walls")
    for name in ("SM", "SM+ORT"):
        lines, _ = extract(scan, ExtractorConfig.from_name(name))
        m = match_lines(lines, truth)
        print(f"{name:7s} {len(lines):3d} lines, {len(m.pairs)} matched, err_r {m.mean_err_r:.2f} mm")


if __name__ == "__main__":
    main()
