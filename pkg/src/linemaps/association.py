"""Gated data association between extracted lines and mapped landmarks.

Single compatibility (SCT) gates each pairing on its own innovation.  Joint
compatibility branch and bound (JCBB) searches for the largest set of pairings
whose stacked innovation passes a chi-square gate at every step of the search,
breaking ties on the smallest joint NIS.  Segment validation (SV) removes
pairings whose geometric match probability falls below one half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.stats import chi2 as _chi2

from .errors import SingularInnovation
from .geometry import LineParams, Pose2, transform_line_to_frame, wrap_angle
from .segments import SegmentSet, geometric_match_prob

SCT_GATE = 5.99
JOINT_CONFIDENCE = 0.95
SV_THRESHOLD = 0.5
_COND_LIMIT = 1e12
_FLIP = np.diag([-1.0, 1.0])


@lru_cache(maxsize=256)
def joint_gate(k: int, confidence: float = JOINT_CONFIDENCE) -> float:
    """Chi-square threshold for ``k`` stacked line pairings (``2k`` dof)."""
    return float(_chi2.ppf(confidence, 2 * k))


def nis(e, S) -> float:
    e = np.asarray(e, dtype=float)
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        raise SingularInnovation("innovation covariance has non-finite entries")
    cond = np.linalg.cond(S)
    if cond > _COND_LIMIT:
        raise SingularInnovation(f"innovation covariance is ill-conditioned (cond={cond:.3g})")
    return float(e @ np.linalg.solve(S, e))


@dataclass
class Measurement:
    """An extracted line in the robot frame, with optional global occupied segments."""

    line: LineParams
    cov: np.ndarray
    segments: SegmentSet | None = None


@dataclass
class PredictedObservation:
    """A landmark seen from the current pose estimate.

    ``state_index`` is the landmark's block position in the joint covariance,
    whose first block is the current pose (3 rows), followed by 2 rows per
    landmark in ``state_index`` order.
    """

    landmark_id: int
    predicted: LineParams
    jac_pose: np.ndarray
    jac_line: np.ndarray
    cov_part: np.ndarray
    state_index: int

    def jacobian_row(self, dim: int) -> np.ndarray:
        h = np.zeros((2, dim))
        h[:, :3] = self.jac_pose
        o = 3 + 2 * self.state_index
        h[:, o : o + 2] = self.jac_line
        return h


def predict_observations(pose: Pose2, landmarks: Sequence[tuple[int, LineParams]], joint_cov: np.ndarray) -> list[PredictedObservation]:
    """Predict every landmark from ``pose``; ``joint_cov`` is ordered pose first then ``landmarks``."""
    out = []
    P = np.asarray(joint_cov, dtype=float)
    for k, (lid, line) in enumerate(landmarks):
        pred, jp, jl = transform_line_to_frame(line, pose)
        h = np.hstack((jp, jl))
        idx = np.r_[0:3, 3 + 2 * k : 5 + 2 * k]
        out.append(PredictedObservation(lid, pred, jp, jl, h @ P[np.ix_(idx, idx)] @ h.T, k))
    return out


def line_innovation(meas: Measurement, pred: PredictedObservation) -> tuple[np.ndarray, np.ndarray, float]:
    """Innovation ``z - h`` in whichever chart of ``z`` gives the smaller NIS.

    Returns ``(e, R, nis)`` where ``R`` is the measurement covariance expressed
    in the chosen chart.
    """
    z = meas.line
    h = pred.predicted
    e1 = np.array([z.r - h.r, wrap_angle(z.alpha - h.alpha)])
    e2 = np.array([-z.r - h.r, wrap_angle(z.alpha + math.pi - h.alpha)])
    R1 = np.asarray(meas.cov, dtype=float)
    R2 = _FLIP @ R1 @ _FLIP
    n1 = nis(e1, pred.cov_part + R1)
    if abs(z.r) > 0.5 and abs(h.r) > 0.5:
        return e1, R1, n1
    n2 = nis(e2, pred.cov_part + R2)
    return (e1, R1, n1) if n1 <= n2 else (e2, R2, n2)


@dataclass
class Hypothesis:
    """Pairings ``measurement index -> prediction index`` (None for unmatched)."""

    pairing: list[int | None]
    joint_nis: float
    individual_nis: list[float | None] = field(default_factory=list)

    @property
    def n_paired(self) -> int:
        return sum(p is not None for p in self.pairing)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, p) for i, p in enumerate(self.pairing) if p is not None]


def innovation_table(measurements: Sequence[Measurement], predictions: Sequence[PredictedObservation]):
    """All pairwise innovations as nested lists of ``(e, R, nis)``."""
    return [[line_innovation(m, p) for p in predictions] for m in measurements]


def single_compat(
    measurements: Sequence[Measurement],
    predictions: Sequence[PredictedObservation],
    gate: float = SCT_GATE,
    table=None,
) -> list[list[tuple[int, float]]]:
    """Per measurement, the ``(prediction index, nis)`` pairs inside the gate, nearest first."""
    table = table if table is not None else innovation_table(measurements, predictions)
    out = []
    for row in table:
        cands = [(j, n) for j, (_, _, n) in enumerate(row) if n <= gate]
        cands.sort(key=lambda c: (c[1], c[0]))
        out.append(cands)
    return out


def nearest_neighbour(
    measurements: Sequence[Measurement],
    predictions: Sequence[PredictedObservation],
    gate: float = SCT_GATE,
    sv_probs: np.ndarray | None = None,
) -> Hypothesis:
    """Greedy SCT association: globally smallest NIS first, one landmark per measurement."""
    table = innovation_table(measurements, predictions)
    cands = []
    for i, row in enumerate(single_compat(measurements, predictions, gate, table)):
        for j, n in row:
            if sv_probs is None or sv_probs[i, j] >= SV_THRESHOLD:
                cands.append((n, i, j))
    cands.sort()
    pairing: list[int | None] = [None] * len(measurements)
    used: set[int] = set()
    for n, i, j in cands:
        if pairing[i] is None and j not in used:
            pairing[i] = j
            used.add(j)
    return _finish(pairing, table, predictions)


def joint_nis(
    pairs: Sequence[tuple[int, int]],
    table,
    predictions: Sequence[PredictedObservation],
    joint_cov: np.ndarray,
) -> float:
    """Joint NIS of a set of ``(measurement, prediction)`` pairs, computed densely."""
    if not pairs:
        return 0.0
    P = np.asarray(joint_cov, dtype=float)
    dim = P.shape[0]
    H = np.vstack([predictions[j].jacobian_row(dim) for _, j in pairs])
    e = np.concatenate([table[i][j][0] for i, j in pairs])
    S = H @ P @ H.T
    for k, (i, j) in enumerate(pairs):
        S[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] += table[i][j][1]
    return nis(e, S)


def _finish(pairing, table, predictions, joint_cov=None) -> Hypothesis:
    pairs = [(i, p) for i, p in enumerate(pairing) if p is not None]
    ind = [table[i][p][2] if p is not None else None for i, p in enumerate(pairing)]
    jn = joint_nis(pairs, table, predictions, joint_cov) if joint_cov is not None else float(sum(n for n in ind if n is not None))
    return Hypothesis(list(pairing), jn, ind)


def jcbb(
    measurements: Sequence[Measurement],
    predictions: Sequence[PredictedObservation],
    joint_cov: np.ndarray,
    gate: float = SCT_GATE,
    confidence: float = JOINT_CONFIDENCE,
    sv_probs: np.ndarray | None = None,
) -> Hypothesis:
    """Joint compatibility branch and bound.

    A pairing is a candidate when it passes the individual gate and, if
    ``sv_probs`` is given, has match probability at least one half.  Each
    partial hypothesis must pass the joint gate for its size.  The result
    maximizes the number of pairings and then minimizes the joint NIS.
    """
    P = np.asarray(joint_cov, dtype=float)
    dim = P.shape[0]
    nm = len(measurements)
    table = innovation_table(measurements, predictions)
    cands = []
    for i, row in enumerate(single_compat(measurements, predictions, gate, table)):
        cands.append([j for j, _ in row if sv_probs is None or sv_probs[i, j] >= SV_THRESHOLD])
    rows = [p.jacobian_row(dim) for p in predictions]
    hp_rows = [h @ P for h in rows]

    best = {"n": 0, "nis": 0.0, "pairing": [None] * nm}

    def better(n, v):
        return n > best["n"] or (n == best["n"] and v < best["nis"])

    def rec(i, pairing, used, hp, S, e, cur_nis):
        n = len(used)
        if i == nm:
            if better(n, cur_nis):
                best.update(n=n, nis=cur_nis, pairing=list(pairing))
            return
        remaining = nm - i
        if n + remaining < best["n"]:
            return
        for j in cands[i]:
            if j in used:
                continue
            ee, R, _ = table[i][j]
            h = rows[j]
            if S is None:
                S2 = h @ P @ h.T + R
                hp2 = hp_rows[j]
                e2 = ee
            else:
                C = hp @ h.T
                D = h @ P @ h.T + R
                S2 = np.block([[S, C], [C.T, D]])
                hp2 = np.vstack((hp, hp_rows[j]))
                e2 = np.concatenate((e, ee))
            v = nis(e2, S2)
            if v > joint_gate(n + 1, confidence):
                continue
            if n + remaining == best["n"] and v >= best["nis"]:
                continue
            pairing[i] = j
            used.add(j)
            rec(i + 1, pairing, used, hp2, S2, e2, v)
            used.discard(j)
            pairing[i] = None
        if n + remaining - 1 >= best["n"]:
            rec(i + 1, pairing, used, hp, S, e, cur_nis)

    rec(0, [None] * nm, set(), None, None, None, 0.0)
    h = _finish(best["pairing"], table, predictions)
    h.joint_nis = best["nis"]
    return h


def segment_validation_probs(
    measurement_segments: Sequence[SegmentSet | None],
    evidence: Sequence[tuple[SegmentSet, SegmentSet]],
) -> np.ndarray:
    """Match probability for every (measurement, landmark) pair.

    Measurement segments are reprojected onto each landmark's line before the
    overlap is measured; a measurement without segments scores 0.5.
    """
    out = np.full((len(measurement_segments), len(evidence)), 0.5)
    for i, seg in enumerate(measurement_segments):
        if seg is None:
            continue
        for j, (occ, free) in enumerate(evidence):
            out[i, j] = geometric_match_prob(seg.reproject(occ.line), occ, free)
    return out
