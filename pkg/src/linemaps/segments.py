"""Occupied and free intervals along a line, and segment-based match probability.

Coordinates along a line come from :func:`linemaps.geometry.project_onto_line`.
Every :class:`SegmentSet` is kept sorted and coalesced: no two stored
intervals overlap or touch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FrameMismatch
from .geometry import LineParams, Pose2, point_at, project_points, wrap_angle
from .simulator import LaserScan

FRAME_TOL_R = 0.5
FRAME_TOL_ALPHA = 0.2
GAP_FLOOR = 0.1
GAP_SPACINGS = 10.0


@dataclass(frozen=True, order=True)
class Interval:
    t0: float
    t1: float

    def __post_init__(self):
        if self.t1 < self.t0:
            raise ValueError(f"interval [{self.t0}, {self.t1}] is reversed")

    @property
    def length(self) -> float:
        return self.t1 - self.t0


def _coalesce(intervals: Iterable) -> tuple[Interval, ...]:
    items = sorted((float(a), float(b)) for a, b in ((i.t0, i.t1) if isinstance(i, Interval) else i for i in intervals))
    out: list[list[float]] = []
    for a, b in items:
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return tuple(Interval(a, b) for a, b in out)


@dataclass(frozen=True)
class SegmentSet:
    line: LineParams
    intervals: tuple[Interval, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "intervals", _coalesce(self.intervals))

    @property
    def length(self) -> float:
        return sum(i.length for i in self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def as_pairs(self) -> list[list[float]]:
        return [[i.t0, i.t1] for i in self.intervals]

    def _check(self, other: "SegmentSet", tol_r: float = FRAME_TOL_R, tol_alpha: float = FRAME_TOL_ALPHA):
        dr = abs(self.line.r - other.line.r)
        da = abs(wrap_angle(self.line.alpha - other.line.alpha))
        if dr > tol_r or da > tol_alpha:
            raise FrameMismatch(f"lines {self.line} and {other.line} differ by ({dr:.3g} m, {da:.3g} rad)")

    def union(self, other: "SegmentSet") -> "SegmentSet":
        self._check(other)
        return SegmentSet(self.line, self.intervals + other.intervals)

    def intersection(self, other: "SegmentSet") -> "SegmentSet":
        self._check(other)
        out = []
        i = j = 0
        a, b = self.intervals, other.intervals
        while i < len(a) and j < len(b):
            lo = max(a[i].t0, b[j].t0)
            hi = min(a[i].t1, b[j].t1)
            if lo < hi:
                out.append((lo, hi))
            if a[i].t1 < b[j].t1:
                i += 1
            else:
                j += 1
        return SegmentSet(self.line, out)

    def difference(self, other: "SegmentSet") -> "SegmentSet":
        """Parts of ``self`` not covered by ``other``; zero-length remnants are dropped."""
        self._check(other)
        out = []
        for iv in self.intervals:
            if iv.length == 0.0:
                if not any(o.t0 <= iv.t0 <= o.t1 for o in other.intervals):
                    out.append((iv.t0, iv.t1))
                continue
            cur = iv.t0
            for o in other.intervals:
                if o.t1 <= cur:
                    continue
                if o.t0 >= iv.t1:
                    break
                if o.t0 > cur:
                    out.append((cur, o.t0))
                cur = max(cur, o.t1)
                if cur >= iv.t1:
                    break
            if cur < iv.t1:
                out.append((cur, iv.t1))
        return SegmentSet(self.line, out)

    def reproject(self, target: LineParams) -> "SegmentSet":
        """Carry the intervals onto ``target`` by projecting their endpoints."""
        pairs = []
        for iv in self.intervals:
            ends = project_points(np.array([point_at(self.line, iv.t0), point_at(self.line, iv.t1)]), target)
            pairs.append((float(ends.min()), float(ends.max())))
        return SegmentSet(target, pairs)

    def endpoints(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(point_at(self.line, i.t0), point_at(self.line, i.t1)) for i in self.intervals]

    def to_json(self) -> dict:
        return {"line": [self.line.r, self.line.alpha], "intervals": self.as_pairs()}

    @classmethod
    def from_json(cls, d: dict) -> "SegmentSet":
        return cls(LineParams(*d["line"]), [tuple(p) for p in d["intervals"]])


def _runs_by_gap(t: np.ndarray, dist: np.ndarray, res: float, gap_break: float | None) -> list[tuple[float, float]]:
    if len(t) == 0:
        return []
    order = np.argsort(t, kind="stable")
    t = t[order]
    dist = dist[order]
    out = []
    start = 0
    for k in range(1, len(t)):
        gap = gap_break
        if gap is None:
            gap = max(GAP_FLOOR, GAP_SPACINGS * max(dist[k], dist[k - 1]) * res)
        if t[k] - t[k - 1] > gap:
            out.append((t[start], t[k - 1]))
            start = k
    out.append((t[start], t[-1]))
    return [(float(a), float(b)) for a, b in out]


def extract_segments(
    cluster,
    line: LineParams,
    scan: LaserScan,
    gap_break: float | None = None,
    pose: Pose2 | None = None,
) -> SegmentSet:
    """Occupied intervals of ``line`` covered by a cluster's points.

    With ``pose`` given, points are mapped to the global frame first and
    ``line`` must be a global line.  The default gap rule breaks a run where
    neighbouring projections are farther apart than ten beam spacings at the
    measured range, but never less than 0.1 m.
    """
    idx = np.asarray(cluster.point_indices if hasattr(cluster, "point_indices") else cluster, dtype=int)
    pts = scan.points()[idx]
    if pose is not None:
        pts = pose.transform_points(pts)
    t = project_points(pts, line)
    return SegmentSet(line, _runs_by_gap(t, scan.ranges[idx], scan.sensor.angular_resolution, gap_break))


def extract_free_segments(
    scan: LaserScan,
    pose: Pose2,
    line: LineParams,
    margin: float | None = None,
    gap_break: float | None = None,
) -> SegmentSet:
    """Intervals of ``line`` that hit beams crossed before reaching their endpoint."""
    if margin is None:
        margin = max(3.0 * scan.sensor.sigma, 1e-6)
    idx = scan.hit_indices
    ang = pose.theta + scan.bearings[idx]
    d = np.column_stack((np.cos(ang), np.sin(ang)))
    n = line.normal
    o = np.array([pose.x, pose.y])
    nd = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (line.r - o @ n) / nd
    ok = (np.abs(nd) > 1e-12) & (s > 0.0) & (s < scan.ranges[idx] - margin)
    if not np.any(ok):
        return SegmentSet(line)
    cross = o + s[ok, None] * d[ok]
    t = project_points(cross, line)
    return SegmentSet(line, _runs_by_gap(t, s[ok], scan.sensor.angular_resolution, gap_break))


def intersection_length(a: SegmentSet, b: SegmentSet) -> float:
    return a.intersection(b).length


def geometric_match_prob(s_new: SegmentSet, s_map: SegmentSet, s_free: SegmentSet) -> float:
    """Probability that a new line and a mapped line are the same physical line.

    Overlap with mapped occupied intervals counts for, overlap with mapped free
    intervals against; with no overlap either way the answer is 0.5.
    """
    hit = intersection_length(s_new, s_map)
    miss = intersection_length(s_new, s_free)
    denom = hit + miss
    return hit / denom if denom > 0.0 else 0.5


def merge_segment_evidence(
    existing: tuple[SegmentSet, SegmentSet], observed: tuple[SegmentSet, SegmentSet]
) -> tuple[SegmentSet, SegmentSet]:
    """Accumulate ``(occupied, free)`` evidence; occupied wins wherever both claim a point."""
    occ = existing[0].union(observed[0])
    free = existing[1].union(observed[1]).difference(occ)
    return occ, free


def empty_evidence(line: LineParams) -> tuple[SegmentSet, SegmentSet]:
    return SegmentSet(line), SegmentSet(line)


def rebind(evidence: tuple[SegmentSet, SegmentSet], line: LineParams) -> tuple[SegmentSet, SegmentSet]:
    """Move evidence onto an updated estimate of its own line."""
    return tuple(s.reproject(line) for s in evidence)  # type: ignore[return-value]


def total_lengths(sets: Sequence[SegmentSet]) -> float:
    return float(sum(s.length for s in sets))
