"""Full SLAM around a loop: smoothed trajectory against dead reckoning."""

from __future__ import annotations

from linemaps.simulator import (
    SensorModel,
    benchmark_environment,
    cast_scan,
    dead_reckoning,
    derive_seed,
    noisy_odometry,
    waypoint_trajectory,
)
from linemaps.slam import run_slam, summarize_log, trajectory_errors

LOOP = [(1, 7), (6, 7), (6, 9.2), (1, 9.2), (1, 7)]


def main() -> None:
    env = benchmark_environment()
    poses = waypoint_trajectory(LOOP, 0.25)
    odom = noisy_odometry(poses, (0.02, 0.02, 0.01), derive_seed(0, 2**32 + 1))
    sensor = SensorModel(sigma=0.01)
    scans = []
    for k, p in enumerate(poses):
        s = cast_scan(env, p, sensor, derive_seed(0, k), pose_id=k)
        s.odom = odom[k - 1] if k else None
        scans.append(s)
    res = run_slam(scans)
    est = [res.estimate.poses[k] for k in range(len(poses))]
    slam_xy, slam_th = trajectory_errors(est, poses)
    dr_xy, dr_th = trajectory_errors(dead_reckoning(poses[0], odom), poses)
    print(f"{len(poses)} poses, {len(res.estimate.landmarks)} line landmarks")
    print(f"dead reckoning RMSE {dr_xy:.3f} m {dr_th:.4f} rad")
    print(f"smoothed       RMSE {slam_xy:.3f} m {slam_th:.4f} rad")
    print("associations", summarize_log(res.log))


if __name__ == "__main__":
    main()
