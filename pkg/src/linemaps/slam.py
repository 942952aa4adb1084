"""Line-based SLAM pipeline: extract, associate, update, accumulate segment evidence.

Each scan adds one pose.  The first pose gets a tight prior, the rest an
odometry factor.  Extracted lines are associated against every mapped
landmark with SCT, JCT or JCT+SV.  Matched lines become measurement factors.
An unmatched line is held as a tentative landmark and promoted once a second
scan confirms it.  After the backend update, every landmark's free evidence
grows from the beams that crossed it, and matched landmarks also gain
occupied evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .association import (
    JOINT_CONFIDENCE,
    SCT_GATE,
    Hypothesis,
    Measurement,
    innovation_table,
    jcbb,
    nearest_neighbour,
    nis,
    predict_observations,
    segment_validation_probs,
)
from .errors import ConfigError, LinemapsError
from .extraction import Cluster, ExtractorConfig, Method, extract
from .geometry import LineParams, Pose2, line_difference, line_to_global, line_to_global_jacobians
from .sam import (
    Estimate,
    FactorGraph,
    LineFactor,
    OdometryFactor,
    PriorFactor,
    SolverOptions,
    incremental_update,
    initialize_variables,
    marginal_covariance,
    solve,
)
from .segments import SegmentSet, empty_evidence, extract_free_segments, extract_segments, merge_segment_evidence, rebind
from .simulator import LaserScan

ASSOCIATION_MODES = ("SCT", "JCT", "JCT+SV")


@dataclass
class SlamConfig:
    extractor: ExtractorConfig = field(default_factory=lambda: ExtractorConfig(method=Method.SPLIT_AND_MERGE, use_ort=True))
    association: str = "JCT+SV"
    gate: float = SCT_GATE
    confidence: float = JOINT_CONFIDENCE
    odometry_sigma: tuple[float, float, float] = (0.02, 0.02, 0.01)
    relinearize_every: int = 10
    tentative_ttl: int = 3
    min_points: int = 6
    cov_floor: float = 1e-8
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.association not in ASSOCIATION_MODES:
            raise ConfigError(f"association must be one of {ASSOCIATION_MODES}, got {self.association!r}")
        if len(self.odometry_sigma) != 3 or min(self.odometry_sigma) <= 0:
            raise ConfigError("odometry_sigma needs three positive values")
        self.odometry_sigma = tuple(float(v) for v in self.odometry_sigma)

    def to_json(self) -> dict:
        return {
            "extractor": self.extractor.to_json(),
            "association": self.association,
            "gate": self.gate,
            "confidence": self.confidence,
            "odometry_sigma": list(self.odometry_sigma),
            "relinearize_every": self.relinearize_every,
            "tentative_ttl": self.tentative_ttl,
            "min_points": self.min_points,
            "cov_floor": self.cov_floor,
            "solver": vars(self.solver).copy(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SlamConfig":
        d = dict(d)
        ext = d.pop("extractor", None)
        if isinstance(ext, str):
            ext = ExtractorConfig.from_name(ext)
        elif isinstance(ext, dict):
            ext = ExtractorConfig.from_json(ext)
        solver = SolverOptions(**d.pop("solver", {}))
        known = {"association", "gate", "confidence", "odometry_sigma", "relinearize_every", "tentative_ttl", "min_points", "cov_floor"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown slam options: {sorted(extra)}")
        kw = {k: v for k, v in d.items()}
        if ext is not None:
            kw["extractor"] = ext
        return cls(solver=solver, **kw)


@dataclass
class _Observation:
    scan: int
    index: int
    z: LineParams
    cov: np.ndarray
    cluster: Cluster
    global_line: LineParams
    global_cov: np.ndarray
    occupied: SegmentSet


@dataclass
class SlamResult:
    estimate: Estimate
    graph: FactorGraph
    evidence: dict[int, tuple[SegmentSet, SegmentSet]]
    log: list[dict]
    landmark_cov: dict[int, np.ndarray]
    pose_ids: list[int]


class LineSlam:
    """Sequential pipeline over a scan stream; call :meth:`process` per scan, then :meth:`finish`."""

    def __init__(self, config: SlamConfig | None = None):
        self.config = config or SlamConfig()
        self.graph = FactorGraph()
        self.estimate = Estimate()
        self.evidence: dict[int, tuple[SegmentSet, SegmentSet]] = {}
        self.log: list[dict] = []
        self.tentatives: list[_Observation] = []
        self.pose_ids: list[int] = []
        self.next_landmark = 0
        self._odom_cov = np.diag(np.square(self.config.odometry_sigma))

    @property
    def n_scans(self) -> int:
        return len(self.pose_ids)

    def _motion_factors(self, scan: LaserScan, k: int) -> list:
        if k == 0:
            start = scan.pose if scan.pose is not None else Pose2(0.0, 0.0, 0.0)
            return [PriorFactor(0, start)]
        if scan.odom is None:
            raise ConfigError(f"scan {scan.pose_id} carries no odometry")
        return [OdometryFactor(k - 1, k, scan.odom, self._odom_cov)]

    def _measurements(self, scan: LaserScan, k: int, pose: Pose2, pose_cov: np.ndarray) -> list[_Observation]:
        cfg = self.config
        try:
            lines, clusters = extract(scan, cfg.extractor)
        except LinemapsError:
            return []
        out = []
        for i, (z, c) in enumerate(zip(lines, clusters)):
            if len(c) < cfg.min_points:
                continue
            cov = c.fit.covariance + cfg.cov_floor * np.eye(2)
            g = line_to_global(z, pose)
            jp, jz = line_to_global_jacobians(z, pose)
            gcov = jp @ pose_cov @ jp.T + jz @ cov @ jz.T
            occ = extract_segments(c, g, scan, pose=pose)
            out.append(_Observation(k, len(out), z, cov, c, g, gcov, occ))
        return out

    def _associate(self, obs: list[_Observation], pose: Pose2, joint_cov: np.ndarray, lids: list[int]):
        cfg = self.config
        if not obs or not lids:
            return Hypothesis([None] * len(obs), 0.0, [None] * len(obs)), None, None
        meas = [Measurement(o.z, o.cov, o.occupied) for o in obs]
        preds = predict_observations(pose, [(j, self.estimate.landmarks[j]) for j in lids], joint_cov)
        probs = segment_validation_probs([o.occupied for o in obs], [self.evidence[j] for j in lids])
        if cfg.association == "SCT":
            hyp = nearest_neighbour(meas, preds, cfg.gate)
        else:
            sv = probs if cfg.association == "JCT+SV" else None
            hyp = jcbb(meas, preds, joint_cov, cfg.gate, cfg.confidence, sv)
        table = innovation_table(meas, preds)
        return hyp, probs, table

    def _match_tentative(self, o: _Observation, used: set[int]) -> int | None:
        best, best_nis = None, math.inf
        for t, cand in enumerate(self.tentatives):
            if t in used or cand.scan == o.scan:
                continue
            e = line_difference(o.global_line, cand.global_line)
            try:
                v = nis(e, o.global_cov + cand.global_cov)
            except LinemapsError:
                continue
            if v <= self.config.gate and v < best_nis:
                best, best_nis = t, v
        return best

    def process(self, scan: LaserScan) -> list[dict]:
        cfg = self.config
        k = self.n_scans
        motion = self._motion_factors(scan, k)
        self.graph.extend(motion)
        self.estimate = initialize_variables(motion, self.estimate)
        self.pose_ids.append(int(scan.pose_id))
        lids = sorted(self.estimate.landmarks)
        keys = [("x", k)] + [("l", j) for j in lids]
        joint_cov = marginal_covariance(self.graph, self.estimate, keys)
        pose = self.estimate.poses[k]
        obs = self._measurements(scan, k, pose, joint_cov[:3, :3])
        hyp, probs, table = self._associate(obs, pose, joint_cov, lids)

        factors = []
        records = []
        matched: dict[int, _Observation] = {}
        fresh: list[_Observation] = []
        for i, o in enumerate(obs):
            p = hyp.pairing[i]
            rec = {"scan": k, "pose_id": int(scan.pose_id), "measurement": i}
            if p is not None:
                lid = lids[p]
                factors.append(LineFactor(k, lid, o.z, o.cov))
                matched[lid] = o
                rec.update(landmark=lid, nis=float(table[i][p][2]), sv_prob=float(probs[i, p]))
            else:
                rec.update(landmark="new", nis=None, sv_prob=None)
                fresh.append(o)
            records.append(rec)

        used: set[int] = set()
        created = []
        for o in fresh:
            t = self._match_tentative(o, used)
            if t is None:
                continue
            used.add(t)
            first = self.tentatives[t]
            lid = self.next_landmark
            self.next_landmark += 1
            factors.append(LineFactor(first.scan, lid, first.z, first.cov))
            factors.append(LineFactor(k, lid, o.z, o.cov))
            records[o.index]["created"] = lid
            created.append((lid, first, o))
        self.tentatives = [
            c for t, c in enumerate(self.tentatives) if t not in used and k - c.scan < cfg.tentative_ttl
        ] + [o for o in fresh if all(o is not c[2] for c in created)]

        self.estimate = incremental_update(self.graph, factors, self.estimate, cfg.solver, cfg.relinearize_every)
        pose = self.estimate.poses[k]
        for lid, first, o in created:
            line = self.estimate.landmarks[lid]
            self.evidence[lid] = (first.occupied.reproject(line), SegmentSet(line))
            matched[lid] = o
        for lid in sorted(self.evidence):
            line = self.estimate.landmarks[lid]
            ev = rebind(self.evidence[lid], line)
            occ = extract_segments(matched[lid].cluster, line, scan, pose=pose) if lid in matched else SegmentSet(line)
            free = extract_free_segments(scan, pose, line)
            self.evidence[lid] = merge_segment_evidence(ev, (occ, free))
        self.log.extend(records)
        return records

    def finish(self) -> SlamResult:
        """Run a full solve and collect landmark marginals."""
        if self.graph.factors:
            self.estimate = solve(self.graph, self.estimate, self.config.solver)
        lids = sorted(self.estimate.landmarks)
        cov: dict[int, np.ndarray] = {}
        if lids:
            C = marginal_covariance(self.graph, self.estimate, [("l", j) for j in lids])
            for n, j in enumerate(lids):
                cov[j] = C[2 * n : 2 * n + 2, 2 * n : 2 * n + 2]
        ev = {j: rebind(self.evidence[j], self.estimate.landmarks[j]) for j in lids}
        return SlamResult(self.estimate, self.graph, ev, list(self.log), cov, list(self.pose_ids))


def run_slam(scans: Sequence[LaserScan], config: SlamConfig | None = None) -> SlamResult:
    runner = LineSlam(config)
    for scan in scans:
        runner.process(scan)
    return runner.finish()


def summarize_log(records: Sequence[dict]) -> dict:
    """Association counts derived from the per-measurement log alone."""
    scans = {r["scan"] for r in records}
    matched = [r for r in records if r["landmark"] != "new"]
    created = sorted({r["created"] for r in records if "created" in r})
    seen = sorted({r["landmark"] for r in matched} | set(created))
    return {
        "scans_with_lines": len(scans),
        "measurements": len(records),
        "matched": len(matched),
        "unmatched": len(records) - len(matched),
        "landmarks_created": len(created),
        "landmarks_observed": len(seen),
        "mean_nis": float(np.mean([r["nis"] for r in matched])) if matched else 0.0,
    }


def trajectory_errors(estimate: Sequence[Pose2], truth: Sequence[Pose2]) -> tuple[float, float]:
    """Position RMSE (m) and heading RMSE (rad)."""
    e = np.array([[a.x - b.x, a.y - b.y, math.remainder(a.theta - b.theta, 2 * math.pi)] for a, b in zip(estimate, truth)])
    if len(e) == 0:
        return 0.0, 0.0
    return float(np.sqrt(np.mean(e[:, 0] ** 2 + e[:, 1] ** 2))), float(np.sqrt(np.mean(e[:, 2] ** 2)))
