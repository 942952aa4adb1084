"""Extraction benchmark: truth visibility, line matching and aggregate metrics.

Definitions used in every output:

* a truth line is *visible* from a pose when the noise-free cast puts at least
  ``min_hits`` consecutive beams on segments lying on it; collinear segments
  count once;
* TP = matched found lines / visible truth lines (percent);
* ND = unmatched visible truth lines / visible truth lines (percent);
* errors are averaged over matched pairs, ``|dr|`` in millimetres and
  ``|dalpha|`` in radians;
* precision = matched found lines / all found lines (percent), a diagnostic;
* speed = scans per second through the extraction stage alone, taken from the
  fastest of ``timing_passes`` passes so scheduler noise does not flip orderings.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LinemapsError
from .extraction import ExtractorConfig, extract
from .association import Measurement, innovation_table, jcbb, predict_observations, segment_validation_probs
from .geometry import LineParams, Pose2, line_difference, line_to_global, segment_to_line, transform_line_to_frame
from .segments import extract_free_segments, extract_segments
from .simulator import GroundTruthSegment, LaserScan, SensorModel, cast_scan, derive_seed, door_wall_scene, ray_cast

METRIC_FIELDS = ["extractor", "scans", "skipped", "visible", "matched", "found", "tp_rate", "nd_rate", "precision", "mean_err_r_mm", "mean_err_alpha"]


@dataclass
class ExtractionMetrics:
    tp_rate: float
    nd_rate: float
    mean_err_r: float  # millimetres
    mean_err_alpha: float  # radians
    speed: float  # scans per second
    scans: int = 0
    skipped: int = 0
    visible: int = 0
    matched: int = 0
    found: int = 0

    @property
    def precision(self) -> float:
        return 100.0 * self.matched / self.found if self.found else 0.0

    def row(self, name: str) -> dict:
        return {
            "extractor": name,
            "scans": self.scans,
            "skipped": self.skipped,
            "visible": self.visible,
            "matched": self.matched,
            "found": self.found,
            "tp_rate": f"{self.tp_rate:.4f}",
            "nd_rate": f"{self.nd_rate:.4f}",
            "precision": f"{self.precision:.4f}",
            "mean_err_r_mm": f"{self.mean_err_r:.6f}",
            "mean_err_alpha": f"{self.mean_err_alpha:.8f}",
        }


@dataclass
class Matching:
    pairs: list[tuple[int, int, float, float]]  # (found, truth, |dr| m, |dalpha| rad)
    n_found: int
    n_truth: int

    @property
    def tp_rate(self) -> float:
        return 100.0 * len(self.pairs) / self.n_truth if self.n_truth else 100.0

    @property
    def nd_rate(self) -> float:
        return 100.0 * (self.n_truth - len(self.pairs)) / self.n_truth if self.n_truth else 0.0

    @property
    def mean_err_r(self) -> float:
        return 1000.0 * float(np.mean([p[2] for p in self.pairs])) if self.pairs else 0.0

    @property
    def mean_err_alpha(self) -> float:
        return float(np.mean([p[3] for p in self.pairs])) if self.pairs else 0.0


def visible_truth_lines(
    env: Sequence[GroundTruthSegment], pose: Pose2, sensor: SensorModel, min_hits: int = 8
) -> list[LineParams]:
    """Distinct truth lines seen from ``pose``, expressed in the sensor frame.

    A line is visible when at least ``min_hits`` consecutive beams of the
    noise-free cast end on segments lying on it.  Collinear segments count as
    one line.
    """
    _, seg = ray_cast(env, (pose.x, pose.y), pose.theta + sensor.bearings(), sensor.max_range)
    by_id = {s.id: s for s in env}
    lines: dict[tuple[float, float], LineParams] = {}
    beam_key: list[tuple[float, float] | None] = []
    for sid in seg:
        if sid < 0:
            beam_key.append(None)
            continue
        s = by_id[int(sid)]
        line = segment_to_line(s.a, s.b)
        key = (round(line.r, 6), round(line.alpha, 6))
        if key[1] == round(-math.pi, 6):
            key = (key[0], round(math.pi, 6))
        lines.setdefault(key, line)
        beam_key.append(key)
    longest: dict[tuple[float, float], int] = {}
    run_key, run = None, 0
    for key in beam_key + [None]:
        if key is not None and key == run_key:
            run += 1
        else:
            if run_key is not None:
                longest[run_key] = max(longest.get(run_key, 0), run)
            run_key, run = key, 1
    return [transform_line_to_frame(lines[k], pose)[0] for k in sorted(longest) if longest[k] >= min_hits]


def match_lines(found: Sequence[LineParams], truth: Sequence[LineParams], tol_r: float = 0.05, tol_alpha: float = 0.05) -> Matching:
    """Greedy one-to-one matching by normalized parameter distance."""
    cands = []
    for i, f in enumerate(found):
        for j, t in enumerate(truth):
            dr, da = np.abs(line_difference(f, t))
            if dr <= tol_r and da <= tol_alpha:
                cands.append((dr / tol_r + da / tol_alpha, i, j, float(dr), float(da)))
    cands.sort()
    used_f: set[int] = set()
    used_t: set[int] = set()
    pairs = []
    for _, i, j, dr, da in cands:
        if i in used_f or j in used_t:
            continue
        used_f.add(i)
        used_t.add(j)
        pairs.append((i, j, dr, da))
    return Matching(sorted(pairs), len(found), len(truth))


@dataclass
class BenchmarkResult:
    metrics: dict[str, ExtractionMetrics]
    per_scan: dict[str, list[Matching]] = field(default_factory=dict)


def run_extraction_benchmark(
    scans: Sequence[LaserScan],
    env: Sequence[GroundTruthSegment],
    extractors: Sequence[ExtractorConfig],
    tol_r: float = 0.05,
    tol_alpha: float = 0.05,
    min_hits: int = 8,
    timing_passes: int = 1,
) -> BenchmarkResult:
    """Run every extractor over every scan; scans need ground-truth poses."""
    truths = [visible_truth_lines(env, s.pose, s.sensor, min_hits) for s in scans]
    metrics: dict[str, ExtractionMetrics] = {}
    per_scan: dict[str, list[Matching]] = {}
    for cfg in extractors:
        elapsed = math.inf
        for _ in range(max(1, timing_passes)):
            found_all: list[list[LineParams] | None] = []
            t0 = time.perf_counter()
            for scan in scans:
                try:
                    found_all.append(extract(scan, cfg)[0])
                except LinemapsError:
                    found_all.append(None)
            elapsed = min(elapsed, time.perf_counter() - t0)
        matchings = []
        skipped = 0
        for found, truth in zip(found_all, truths):
            if found is None:
                skipped += 1
                continue
            matchings.append(match_lines(found, truth, tol_r, tol_alpha))
        per_scan[cfg.name] = matchings
        metrics[cfg.name] = aggregate(matchings, len(scans), skipped, elapsed)
    return BenchmarkResult(metrics, per_scan)


def aggregate(matchings: Sequence[Matching], scans: int, skipped: int, elapsed: float) -> ExtractionMetrics:
    visible = sum(m.n_truth for m in matchings)
    pairs = [p for m in matchings for p in m.pairs]
    return ExtractionMetrics(
        tp_rate=100.0 * len(pairs) / visible if visible else 0.0,
        nd_rate=100.0 * (visible - len(pairs)) / visible if visible else 0.0,
        mean_err_r=1000.0 * float(np.mean([p[2] for p in pairs])) if pairs else 0.0,
        mean_err_alpha=float(np.mean([p[3] for p in pairs])) if pairs else 0.0,
        speed=scans / elapsed if elapsed > 0 else float("inf"),
        scans=scans,
        skipped=skipped,
        visible=visible,
        matched=len(pairs),
        found=sum(m.n_found for m in matchings),
    )


# ---------------------------------------------------------------------------
# door/wall clutter trial


@dataclass
class DoorWallTrial:
    seed: int
    use_sv: bool
    wrong_merge: bool
    door_paired_to: str  # "wall" or "new"
    door_nis: float
    wall_nis: float
    door_sv_prob: float
    wall_sv_prob: float


def _map_wall(env, sensor, extractor, pose: Pose2, wall_line: LineParams, seed: int):
    """Wall landmark and its (occupied, free) evidence from one scan at a known pose."""
    scan = cast_scan(env, pose, sensor, seed)
    lines, clusters = extract(scan, extractor)
    local = transform_line_to_frame(wall_line, pose)[0]
    best = min(range(len(lines)), key=lambda i: float(np.sum(np.abs(line_difference(lines[i], local)))))
    c = clusters[best]
    line = line_to_global(lines[best], pose)
    occ = extract_segments(c, line, scan, pose=pose)
    free = extract_free_segments(scan, pose, line)
    return line, c.fit.covariance, (occ, free)


def door_wall_trial(
    seed: int,
    use_sv: bool,
    door_offset: float = 0.3,
    pose_sigma: Sequence[float] = (0.05, 0.2, 0.01),
    sensor: SensorModel | None = None,
) -> DoorWallTrial:
    """One association episode in front of a wall whose doorway shows a door leaf.

    The map holds only the wall, mapped from a known pose, with free evidence
    over the doorway.  A second scan from a random pose sees the wall and the
    door leaf ``door_offset`` behind it.  The pose estimate is off by a draw
    from ``pose_sigma`` and that covariance is handed to JCBB.  A wrong merge
    is the door line paired with the wall landmark.
    """
    sensor = sensor or SensorModel()
    extractor = ExtractorConfig(method="SM", use_ort=True, sigma=max(sensor.sigma, 1e-3))
    wall_y = 3.0
    env = door_wall_scene(door_offset=door_offset, wall_y=wall_y)
    wall_truth = segment_to_line(env[0].a, env[0].b)
    door_truth = segment_to_line(env[2].a, env[2].b)
    rng = np.random.default_rng(seed)
    wall, wall_cov, evidence = _map_wall(env, sensor, extractor, Pose2(2.5, wall_y - 2.0, math.pi / 2), wall_truth, derive_seed(seed, 0))

    true_pose = Pose2(rng.uniform(1.0, 4.0), wall_y - rng.uniform(1.2, 2.2), math.pi / 2 + rng.uniform(-0.25, 0.25))
    sig = np.asarray(pose_sigma, dtype=float)
    err = rng.normal(0.0, 1.0, 3) * sig
    est_pose = Pose2(true_pose.x + err[0], true_pose.y + err[1], true_pose.theta + err[2])
    scan = cast_scan(env, true_pose, sensor, derive_seed(seed, 1))
    lines, clusters = extract(scan, extractor)
    door_local = transform_line_to_frame(door_truth, true_pose)[0]
    wall_local = transform_line_to_frame(wall_truth, true_pose)[0]
    m = match_lines(lines, [door_local, wall_local])
    by_truth = {j: i for i, j, _, _ in m.pairs}
    joint = np.zeros((5, 5))
    joint[:3, :3] = np.diag(sig**2)
    joint[3:, 3:] = wall_cov
    meas = []
    for i, (z, c) in enumerate(zip(lines, clusters)):
        g = line_to_global(z, est_pose)
        meas.append(Measurement(z, c.fit.covariance, extract_segments(c, g, scan, pose=est_pose)))
    preds = predict_observations(est_pose, [(0, wall)], joint)
    probs = segment_validation_probs([mm.segments for mm in meas], [evidence])
    hyp = jcbb(meas, preds, joint, sv_probs=probs if use_sv else None)
    table = innovation_table(meas, preds)
    di, wi = by_truth.get(0), by_truth.get(1)

    def nis_of(i):
        return float(table[i][0][2]) if i is not None else math.inf

    def prob_of(i):
        return float(probs[i, 0]) if i is not None else math.nan

    wrong = di is not None and hyp.pairing[di] == 0
    return DoorWallTrial(
        seed=seed,
        use_sv=use_sv,
        wrong_merge=wrong,
        door_paired_to="wall" if wrong else "new",
        door_nis=nis_of(di),
        wall_nis=nis_of(wi),
        door_sv_prob=prob_of(di),
        wall_sv_prob=prob_of(wi),
    )


def run_door_wall_benchmark(seeds: Sequence[int], **kwargs) -> dict[str, list[DoorWallTrial]]:
    """Paired JCT and JCT+SV trials over the same seeds."""
    return {
        "JCT": [door_wall_trial(s, False, **kwargs) for s in seeds],
        "JCT+SV": [door_wall_trial(s, True, **kwargs) for s in seeds],
    }
