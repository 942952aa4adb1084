"""Deterministic 2D lidar simulation over a segment environment.

Random streams: every scan draws its range noise from
``numpy.random.default_rng(seed)``.  When a run produces many scans from one
master seed, scan ``k`` uses ``derive_seed(master, k)``, i.e. the first 64-bit
word of ``SeedSequence([master, k])``.  PCG64 under SeedSequence is stable
across numpy versions, so golden scans reproduce bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SamplingExhausted
from .geometry import Pose2, point_segment_distance, wrap_angle

MIN_RANGE = 1e-3
DEFAULT_BOX = (-5.0, -5.0, 5.0, 5.0)


@dataclass(frozen=True)
class GroundTruthSegment:
    a: tuple[float, float]
    b: tuple[float, float]
    id: int

    def __post_init__(self):
        a = (float(self.a[0]), float(self.a[1]))
        b = (float(self.b[0]), float(self.b[1]))
        if a == b:
            raise ValueError(f"segment {self.id} has coincident endpoints")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def to_json(self) -> dict:
        return {"a": list(self.a), "b": list(self.b), "id": self.id}


@dataclass(frozen=True)
class SensorModel:
    max_range: float = 30.0
    fov: float = math.pi
    angular_resolution: float = math.radians(0.5)
    sigma: float = 0.01

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if not 0 < self.angular_resolution <= self.fov:
            raise ValueError("need 0 < angular_resolution <= fov")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def n_beams(self) -> int:
        return int(math.floor(self.fov / self.angular_resolution + 1e-9)) + 1

    def bearings(self) -> np.ndarray:
        return -0.5 * self.fov + self.angular_resolution * np.arange(self.n_beams)

    def to_json(self) -> dict:
        return {
            "max_range": self.max_range,
            "fov": self.fov,
            "angular_resolution": self.angular_resolution,
            "sigma": self.sigma,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SensorModel":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class LaserScan:
    pose_id: int
    bearings: np.ndarray
    ranges: np.ndarray
    hits: np.ndarray
    sensor: SensorModel
    pose: Pose2 | None = None  # ground truth, when known
    odom: tuple[float, float, float] | None = None
    segment_ids: np.ndarray | None = field(default=None, repr=False)

    @property
    def beams(self) -> list[tuple[float, float, bool]]:
        return list(zip(self.bearings.tolist(), self.ranges.tolist(), self.hits.tolist()))

    @property
    def hit_indices(self) -> np.ndarray:
        return np.flatnonzero(self.hits)

    def points(self) -> np.ndarray:
        """Cartesian endpoint of every beam in the sensor frame, shape (N, 2)."""
        return np.column_stack(
            (self.ranges * np.cos(self.bearings), self.ranges * np.sin(self.bearings))
        )


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, np.uint64)[0])


def _segment_arrays(env: Sequence[GroundTruthSegment]):
    if not env:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=int)
    a = np.array([s.a for s in env], dtype=float)
    b = np.array([s.b for s in env], dtype=float)
    ids = np.array([s.id for s in env], dtype=int)
    return a, b, ids


def ray_cast(env, origin, angles, max_range: float):
    """First intersection distance per ray; ``inf`` where nothing is hit.

    Returns ``(distance, segment_id)`` with id ``-1`` for misses.
    """
    a, b, ids = _segment_arrays(env)
    angles = np.asarray(angles, dtype=float)
    if len(a) == 0:
        return np.full(len(angles), np.inf), np.full(len(angles), -1)
    o = np.asarray(origin, dtype=float)
    d = np.column_stack((np.cos(angles), np.sin(angles)))  # (B, 2)
    e = b - a  # (S, 2)
    ao = a - o  # (S, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]) / denom
        u = (ao[None, :, 0] * d[:, None, 1] - ao[None, :, 1] * d[:, None, 0]) / denom
    ok = (np.abs(denom) > 1e-12) & (t > 1e-12) & (u >= 0.0) & (u <= 1.0)
    t = np.where(ok, t, np.inf)
    k = np.argmin(t, axis=1)
    dist = t[np.arange(len(angles)), k]
    seg = np.where(np.isfinite(dist) & (dist <= max_range), ids[k], -1)
    dist = np.where(dist <= max_range, dist, np.inf)
    return dist, seg


def cast_scan(
    env: Sequence[GroundTruthSegment],
    pose: Pose2,
    sensor: SensorModel,
    rng_seed: int,
    pose_id: int = 0,
) -> LaserScan:
    """Simulate one scan with Gaussian range noise.

    An empty environment is not an error: every beam comes back with ``hit`` false.
    """
    bearings = sensor.bearings()
    true, seg = ray_cast(env, (pose.x, pose.y), pose.theta + bearings, sensor.max_range)
    hits = np.isfinite(true)
    noise = np.random.default_rng(rng_seed).normal(0.0, 1.0, len(bearings)) * sensor.sigma
    ranges = np.where(hits, np.clip(np.where(hits, true, 0.0) + noise, MIN_RANGE, sensor.max_range), sensor.max_range)
    return LaserScan(
        pose_id=pose_id,
        bearings=bearings,
        ranges=ranges,
        hits=hits,
        sensor=sensor,
        pose=pose,
        segment_ids=seg,
    )


def bounding_box(env: Sequence[GroundTruthSegment]) -> tuple[float, float, float, float]:
    if not env:
        return DEFAULT_BOX
    a, b, _ = _segment_arrays(env)
    pts = np.vstack((a, b))
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def clearance(env: Sequence[GroundTruthSegment], pts) -> np.ndarray:
    """Distance from each point to the nearest segment (``inf`` for an empty env)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    best = np.full(len(pts), np.inf)
    for s in env:
        best = np.minimum(best, point_segment_distance(pts, s.a, s.b))
    return best


def sample_poses(
    env: Sequence[GroundTruthSegment],
    count: int,
    rng_seed: int,
    clearance_radius: float = 0.2,
    box: tuple[float, float, float, float] | None = None,
    max_attempts: int | None = None,
) -> list[Pose2]:
    """Uniform poses in the environment's bounding box, away from every segment."""
    if count < 1:
        raise ValueError("count must be at least 1")
    x0, y0, x1, y1 = box or bounding_box(env)
    rng = np.random.default_rng(rng_seed)
    limit = max_attempts if max_attempts is not None else 1000 * count
    poses: list[Pose2] = []
    attempts = 0
    while len(poses) < count:
        if attempts >= limit:
            raise SamplingExhausted(f"only {len(poses)} of {count} poses after {attempts} draws")
        attempts += 1
        x, y, th = rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-math.pi, math.pi)
        if clearance(env, [(x, y)])[0] < clearance_radius:
            continue
        poses.append(Pose2(x, y, th))
    return poses


def waypoint_trajectory(waypoints, step: float) -> list[Pose2]:
    """Poses every ``step`` meters along a polyline, heading along travel.

    The vertex pose of each leg already carries that leg's heading.
    """
    wp = np.asarray(waypoints, dtype=float)
    poses: list[Pose2] = []
    for p, q in zip(wp[:-1], wp[1:]):
        d = q - p
        length = float(np.hypot(*d))
        heading = math.atan2(d[1], d[0])
        n = max(int(round(length / step)), 1)
        for k in range(n):
            x, y = p + d * (k / n)
            poses.append(Pose2(x, y, heading))
    last = wp[-1]
    d = wp[-1] - wp[-2]
    poses.append(Pose2(last[0], last[1], math.atan2(d[1], d[0])))
    return poses


def odometry_increments(poses: Sequence[Pose2]) -> list[tuple[float, float, float]]:
    """Exact relative motions ``x_{i-1}^-1 * x_i``."""
    out = []
    for prev, cur in zip(poses[:-1], poses[1:]):
        rel = prev.between(cur)
        out.append((rel.x, rel.y, rel.theta))
    return out


def noisy_odometry(
    poses: Sequence[Pose2], sigmas: Sequence[float], rng_seed: int
) -> list[tuple[float, float, float]]:
    rng = np.random.default_rng(rng_seed)
    sig = np.asarray(sigmas, dtype=float)
    out = []
    for u in odometry_increments(poses):
        du = rng.normal(0.0, 1.0, 3) * sig
        out.append((u[0] + du[0], u[1] + du[1], wrap_angle(u[2] + du[2])))
    return out


def dead_reckoning(start: Pose2, increments) -> list[Pose2]:
    poses = [start]
    for u in increments:
        poses.append(poses[-1].compose(Pose2(*u)))
    return poses


def _segments_from_json(raw) -> list[GroundTruthSegment]:
    return [GroundTruthSegment(tuple(d["a"]), tuple(d["b"]), int(d["id"])) for d in raw]


def load_environment(path) -> list[GroundTruthSegment]:
    """Read an environment file: a JSON array of ``{"a", "b", "id"}``."""
    return _segments_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def save_environment(env: Sequence[GroundTruthSegment], path) -> None:
    Path(path).write_text(dumps_environment(env), encoding="utf-8")


def dumps_environment(env: Sequence[GroundTruthSegment]) -> str:
    return json.dumps([s.to_json() for s in env], indent=1) + "\n"


def benchmark_environment() -> list[GroundTruthSegment]:
    """The shipped 42-segment office floor (rooms, doorways, door leaves, furniture)."""
    text = resources.files("linemaps").joinpath("data/benchmark_env.json").read_text(encoding="utf-8")
    return _segments_from_json(json.loads(text))


def door_wall_scene(
    door_offset: float = 0.3,
    doorway: tuple[float, float] = (2.0, 3.0),
    wall_extent: tuple[float, float] = (-3.0, 8.0),
    door_extent: tuple[float, float] | None = None,
    wall_y: float = 0.0,
) -> list[GroundTruthSegment]:
    """A wall along ``y = wall_y`` with a doorway and a parallel door leaf behind it.

    The leaf sits ``door_offset`` beyond the wall and by default overlaps the
    doorway by 0.2 m on each side, so it is only visible through the opening.
    """
    lo, hi = wall_extent
    d0, d1 = doorway
    if door_extent is None:
        door_extent = (d0 - 0.2, d1 + 0.2)
    return [
        GroundTruthSegment((lo, wall_y), (d0, wall_y), 0),
        GroundTruthSegment((d1, wall_y), (hi, wall_y), 1),
        GroundTruthSegment((door_extent[0], wall_y + door_offset), (door_extent[1], wall_y + door_offset), 2),
    ]


def scan_to_json(scan: LaserScan) -> dict:
    rec: dict = {"pose_id": int(scan.pose_id)}
    if scan.pose is not None:
        rec["pose"] = [scan.pose.x, scan.pose.y, scan.pose.theta]
    if scan.odom is not None:
        rec["odom"] = [float(v) for v in scan.odom]
    rec["bearings"] = scan.bearings.tolist()
    rec["ranges"] = scan.ranges.tolist()
    rec["hits"] = scan.hits.astype(bool).tolist()
    return rec


def scan_from_json(rec: dict, sensor: SensorModel) -> LaserScan:
    pose = Pose2(*rec["pose"]) if "pose" in rec else None
    odom = tuple(float(v) for v in rec["odom"]) if "odom" in rec else None
    return LaserScan(
        pose_id=int(rec["pose_id"]),
        bearings=np.asarray(rec["bearings"], dtype=float),
        ranges=np.asarray(rec["ranges"], dtype=float),
        hits=np.asarray(rec["hits"], dtype=bool),
        sensor=sensor,
        pose=pose,
        odom=odom,
    )


def write_scan_log(scans: Sequence[LaserScan], path, meta: dict | None = None) -> None:
    """JSON lines, one scan per line; ``meta`` is copied into every record."""
    with open(path, "w", encoding="utf-8") as fh:
        for scan in scans:
            rec = scan_to_json(scan)
            if meta is not None:
                rec["meta"] = meta
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_scan_log_meta(path) -> dict:
    """The ``meta`` block of the first record, or an empty dict."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    rec = json.loads(first) if first.strip() else {}
    return rec.get("meta", {})


def read_scan_log(path, sensor: SensorModel | None = None) -> list[LaserScan]:
    """Read a scan log; without ``sensor`` the model stored in the records is used."""
    if sensor is None:
        meta = read_scan_log_meta(path)
        sensor = SensorModel.from_json(meta["sensor"]) if "sensor" in meta else SensorModel()
    scans = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                scans.append(scan_from_json(json.loads(line), sensor))
    return scans
