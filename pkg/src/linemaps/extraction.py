"""Multiple-line extraction from a single laser scan.

An initial segmentation (sliding window, split-and-merge, line tracking or
sequential RANSAC) proposes linear clusters.  Optionally the clusters are then
merged agglomeratively: at each step the pair with the largest odds ratio of
the merged (M-1)-line model over the M-line model is fused, until no pair has
a ratio above one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .errors import DegenerateCluster, GridTooCoarse, NoClusters, SingularHessian
from .geometry import LineFit, LineParams, Moments, batch_fit_moments, fit_from_moments, fit_line
from .simulator import LaserScan


class Method(str, enum.Enum):
    SLIDING_WINDOW = "SW"
    SPLIT_AND_MERGE = "SM"
    LINE_TRACKING = "LT"
    SEQUENTIAL_RANSAC = "SR"


@dataclass
class ExtractorConfig:
    method: Method = Method.SPLIT_AND_MERGE
    use_ort: bool = False
    sigma: float = 0.01
    r_max: float = 30.0
    min_cluster_size: int = 4
    # adjacency: neighbours farther apart than
    # max(break_distance, break_factor * range * angular_resolution) start a new run
    break_distance: float = 0.1
    break_factor: float = 5.0
    split_distance: float | None = None  # default 3 sigma
    tracking_gate: float | None = None  # default 3 sigma
    window_size: int = 7
    ransac_threshold: float | None = None  # default 3 sigma
    ransac_max_iters: int = 300
    ransac_confidence: float = 0.99
    rng_seed: int = 0

    def __post_init__(self):
        self.method = Method(self.method)
        if self.sigma <= 0 or self.r_max <= 0:
            raise ValueError("sigma and r_max must be positive")
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be at least 2")

    @property
    def name(self) -> str:
        return self.method.value + ("+ORT" if self.use_ort else "")

    def gate(self, value: float | None) -> float:
        return 3.0 * self.sigma if value is None else value

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "ExtractorConfig":
        """Build from a label like ``"SM"`` or ``"LT+ORT"``."""
        base, _, suffix = name.partition("+")
        if suffix not in ("", "ORT"):
            raise ValueError(f"unknown extractor {name!r}")
        return cls(method=Method(base), use_ort=suffix == "ORT", **kwargs)

    def to_json(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ExtractorConfig":
        return cls(**d)


@dataclass
class Cluster:
    point_indices: np.ndarray
    fit: LineFit = field(repr=False)

    @classmethod
    def from_indices(cls, idx, points: np.ndarray, sigma: float) -> "Cluster":
        idx = np.unique(np.asarray(idx, dtype=int))
        return cls(idx, fit_line(points[idx], sigma))

    def __len__(self) -> int:
        return len(self.point_indices)


@dataclass
class Segmentation:
    clusters: list[Cluster]
    unassigned: set[int]


# ---------------------------------------------------------------------------
# initial segmentation


def _runs(scan: LaserScan, cfg: ExtractorConfig) -> list[np.ndarray]:
    """Maximal groups of adjacent hit beams without a range discontinuity."""
    pts = scan.points()
    res = scan.sensor.angular_resolution
    runs: list[list[int]] = []
    cur: list[int] = []
    for i in range(len(scan.hits)):
        if not scan.hits[i]:
            if cur:
                runs.append(cur)
            cur = []
            continue
        if cur:
            j = cur[-1]
            gap = float(np.hypot(*(pts[i] - pts[j])))
            limit = max(cfg.break_distance, cfg.break_factor * max(scan.ranges[i], scan.ranges[j]) * res)
            if j != i - 1 or gap > limit:
                runs.append(cur)
                cur = []
        cur.append(i)
    if cur:
        runs.append(cur)
    return [np.array(r, dtype=int) for r in runs]


def _max_deviation(pts: np.ndarray, sigma: float) -> float:
    fit = fit_line(pts, sigma)
    n = fit.params.normal
    return float(np.max(np.abs(pts @ n - fit.params.r)))


def _chord_distances(pts: np.ndarray) -> np.ndarray:
    a, b = pts[0], pts[-1]
    d = b - a
    length = math.hypot(d[0], d[1])
    if length == 0.0:
        return np.hypot(*(pts - a).T)
    return np.abs((pts[:, 0] - a[0]) * d[1] - (pts[:, 1] - a[1]) * d[0]) / length


def _iepf(idx: np.ndarray, pts: np.ndarray, thresh: float, sigma: float) -> list[np.ndarray]:
    if len(idx) < 3:
        return [idx]
    dist = _chord_distances(pts[idx])
    k = int(np.argmax(dist[1:-1])) + 1
    if dist[k] <= thresh:
        return [idx]
    left, right = idx[:k], idx[k + 1 :]
    # the breakpoint joins whichever side's line it lies closer to
    pk = pts[idx[k]]
    if len(left) >= 2 and len(right) >= 2:
        try:
            fl = fit_line(pts[left], sigma).params
            fr = fit_line(pts[right], sigma).params
            dl = abs(pk @ fl.normal - fl.r)
            dr = abs(pk @ fr.normal - fr.r)
        except DegenerateCluster:
            dl, dr = 0.0, 1.0
    else:
        dl, dr = (0.0, 1.0) if len(left) < len(right) else (1.0, 0.0)
    if dl <= dr:
        left = idx[: k + 1]
    else:
        right = idx[k:]
    return _iepf(left, pts, thresh, sigma) + _iepf(right, pts, thresh, sigma)


def _split_and_merge(run: np.ndarray, pts: np.ndarray, cfg: ExtractorConfig) -> list[np.ndarray]:
    thresh = cfg.gate(cfg.split_distance)
    parts = _iepf(run, pts, thresh, cfg.sigma)
    merged = True
    while merged and len(parts) > 1:
        merged = False
        for i in range(len(parts) - 1):
            union = np.concatenate((parts[i], parts[i + 1]))
            try:
                ok = _max_deviation(pts[union], cfg.sigma) <= thresh
            except DegenerateCluster:
                ok = True
            if ok:
                parts[i : i + 2] = [union]
                merged = True
                break
    return parts


def _line_tracking(run: np.ndarray, pts: np.ndarray, cfg: ExtractorConfig) -> list[np.ndarray]:
    gate = cfg.gate(cfg.tracking_gate)
    parts: list[np.ndarray] = []
    cur: list[int] = []
    mom = None
    for i in run:
        p = pts[i]
        if len(cur) >= 2:
            try:
                line = _fit_moments(mom, cfg.sigma)
                accept = abs(p @ line.normal - line.r) <= gate
            except DegenerateCluster:
                accept = True
            if not accept:
                parts.append(np.array(cur))
                cur, mom = [], None
        cur.append(int(i))
        m = Moments.of(p)
        mom = m if mom is None else mom + m
    if cur:
        parts.append(np.array(cur))
    return parts


def _fit_moments(m: Moments, sigma: float) -> LineParams:
    return fit_from_moments(m, sigma).params


def _sliding_window(run: np.ndarray, pts: np.ndarray, cfg: ExtractorConfig) -> list[np.ndarray]:
    thresh = cfg.gate(cfg.split_distance)
    w = max(cfg.window_size, 2)
    parts: list[np.ndarray] = []
    i = 0
    n = len(run)
    while i + w <= n:
        try:
            ok = _max_deviation(pts[run[i : i + w]], cfg.sigma) <= thresh
        except DegenerateCluster:
            ok = False
        if not ok:
            i += 1
            continue
        j = i + w
        while j < n:
            try:
                if _max_deviation(pts[run[i : j + 1]], cfg.sigma) > thresh:
                    break
            except DegenerateCluster:
                pass
            j += 1
        parts.append(run[i:j])
        i = j
    return parts


def _ransac_iterations(inlier_fraction: float, confidence: float, cap: int) -> int:
    w2 = inlier_fraction**2
    if w2 >= 1.0:
        return 1
    if w2 <= 0.0:
        return cap
    return min(cap, int(math.ceil(math.log(1.0 - confidence) / math.log(1.0 - w2))))


def _consecutive_runs(idx: np.ndarray, min_len: int) -> np.ndarray:
    if len(idx) == 0:
        return idx
    breaks = np.flatnonzero(np.diff(idx) != 1) + 1
    keep = [g for g in np.split(idx, breaks) if len(g) >= min_len]
    return np.concatenate(keep) if keep else idx[:0]


def _sequential_ransac(scan: LaserScan, pts: np.ndarray, cfg: ExtractorConfig) -> list[np.ndarray]:
    rng = np.random.default_rng(cfg.rng_seed)
    thresh = cfg.gate(cfg.ransac_threshold)
    remaining = scan.hit_indices.copy()
    parts: list[np.ndarray] = []
    failures = 0
    while len(remaining) >= cfg.min_cluster_size and failures < 3:
        best = remaining[:0]
        limit = cfg.ransac_max_iters
        it = 0
        rp = pts[remaining]
        while it < limit:
            it += 1
            i, j = rng.choice(len(remaining), size=2, replace=False)
            d = rp[j] - rp[i]
            norm = math.hypot(d[0], d[1])
            if norm == 0.0:
                continue
            nrm = np.array([-d[1], d[0]]) / norm
            dist = np.abs((rp - rp[i]) @ nrm)
            inl = remaining[dist <= thresh]
            if len(inl) > len(best):
                best = inl
                limit = _ransac_iterations(len(best) / len(remaining), cfg.ransac_confidence, cfg.ransac_max_iters)
        best = _consecutive_runs(best, cfg.min_cluster_size)
        if len(best) >= cfg.min_cluster_size:
            # one refinement pass against the least-squares line
            try:
                fit = fit_line(pts[best], cfg.sigma).params
                dist = np.abs(rp @ fit.normal - fit.r)
                refined = _consecutive_runs(remaining[dist <= thresh], cfg.min_cluster_size)
                if len(refined) >= cfg.min_cluster_size:
                    best = refined
            except DegenerateCluster:
                pass
        if len(best) < cfg.min_cluster_size:
            failures += 1
            continue
        failures = 0
        parts.append(best)
        remaining = np.setdiff1d(remaining, best, assume_unique=True)
    return parts


def initial_segmentation(scan: LaserScan, config: ExtractorConfig) -> Segmentation:
    """Find local linear clusters; raises ``NoClusters`` if none qualify."""
    pts = scan.points()
    if config.method is Method.SEQUENTIAL_RANSAC:
        groups = _sequential_ransac(scan, pts, config)
    else:
        step = {
            Method.SPLIT_AND_MERGE: _split_and_merge,
            Method.LINE_TRACKING: _line_tracking,
            Method.SLIDING_WINDOW: _sliding_window,
        }[config.method]
        groups = []
        for run in _runs(scan, config):
            if len(run) >= config.min_cluster_size:
                groups.extend(step(run, pts, config))
    clusters = []
    for g in groups:
        if len(g) < config.min_cluster_size:
            continue
        try:
            clusters.append(Cluster.from_indices(g, pts, config.sigma))
        except DegenerateCluster:
            continue
    if not clusters:
        raise NoClusters(f"scan {scan.pose_id}: no cluster of {config.min_cluster_size} adjacent points")
    used = set(np.concatenate([c.point_indices for c in clusters]).tolist())
    unassigned = set(scan.hit_indices.tolist()) - used
    return Segmentation(clusters, unassigned)


# ---------------------------------------------------------------------------
# odds ratio


def odds_ratio(fit_a: LineFit, fit_b: LineFit, fit_merged: LineFit, r_max: float) -> float:
    """Log odds of one merged line over two separate lines (Laplace evidence).

    ``log R = log(r_max/2) + (log|Ha| + log|Hb| - log|Hc|)/2 + (chi2a + chi2b - chi2c)/2``;
    positive values favour merging.
    """
    dets = [float(np.linalg.det(f.hessian)) for f in (fit_a, fit_b, fit_merged)]
    if min(dets) <= 0.0:
        raise SingularHessian(f"chi-square Hessian determinants {dets}")
    da, db, dc = (math.log(d) for d in dets)
    return (
        math.log(0.5 * r_max)
        + 0.5 * (da + db - dc)
        + 0.5 * (fit_a.chi2 + fit_b.chi2 - fit_merged.chi2)
    )


def _log_diff_ndtr(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a <= b``, stable in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = a > 0
    hi = np.where(upper, log_ndtr(-a), log_ndtr(b))
    lo = np.where(upper, log_ndtr(-b), log_ndtr(a))
    with np.errstate(divide="ignore"):
        return hi + np.log1p(-np.exp(lo - hi))


def log_evidence_quadrature(points, sigma: float, r_max: float, resolution: float) -> float:
    """``log`` of the integral of ``exp(-chi2/2)`` over ``r in [0, r_max]``, ``alpha in (-pi, pi]``.

    For a fixed alpha chi-square is an exact quadratic in r, so the r-integral is
    evaluated in closed form with the normal CDF; alpha is integrated by a
    uniform periodic rule with spacing ``resolution``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return math.log(2.0 * math.pi * r_max)
    m = int(math.ceil(2.0 * math.pi / resolution))
    h = 2.0 * math.pi / m
    alpha = -math.pi + h * np.arange(1, m + 1)
    c, s = np.cos(alpha), np.sin(alpha)
    mx, my = pts.mean(axis=0)
    dx, dy = pts[:, 0] - mx, pts[:, 1] - my
    cxx, cyy, cxy = dx @ dx, dy @ dy, dx @ dy
    prof = (c * c * cxx + 2.0 * c * s * cxy + s * s * cyy) / sigma**2
    r_hat = c * mx + s * my
    k = math.sqrt(n) / sigma  # r-curvature is n / sigma^2
    log_r = 0.5 * math.log(2.0 * math.pi) - math.log(k) + _log_diff_ndtr(-r_hat * k, (r_max - r_hat) * k)
    terms = -0.5 * prof + log_r
    top = np.max(terms)
    return float(top + math.log(np.sum(np.exp(terms - top))) + math.log(h))


def evidence_ratio_oracle(points_a, points_b, sigma: float, r_max: float, grid_resolution: float = 1e-4) -> float:
    """Quadrature value of the merge odds; a test oracle for :func:`odds_ratio`.

    Raises ``GridTooCoarse`` if halving the grid spacing moves the answer by
    more than 0.05.
    """
    pa = np.asarray(points_a, dtype=float).reshape(-1, 2)
    pb = np.asarray(points_b, dtype=float).reshape(-1, 2)
    pc = np.vstack((pa, pb))

    def ratio(res):
        la, lb, lc = (log_evidence_quadrature(p, sigma, r_max, res) for p in (pa, pb, pc))
        return math.log(2.0 * math.pi * r_max) + lc - la - lb

    coarse = ratio(grid_resolution)
    fine = ratio(0.5 * grid_resolution)
    if abs(fine - coarse) > 0.05:
        raise GridTooCoarse(f"log R moved {abs(fine - coarse):.3g} under refinement")
    return fine


# ---------------------------------------------------------------------------
# agglomerative merge


def _pair_log_r(mom: np.ndarray, chi2: np.ndarray, logdet: np.ndarray, a: int, others: np.ndarray, sigma, r_max):
    pooled = mom[a] + mom[others]
    _, _, chi2_c, det_c = batch_fit_moments(pooled, sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        logdet_c = np.where(det_c > 0, np.log(np.where(det_c > 0, det_c, 1.0)), -np.inf)
    val = (
        math.log(0.5 * r_max)
        + 0.5 * (logdet[a] + logdet[others] - logdet_c)
        + 0.5 * (chi2[a] + chi2[others] - chi2_c)
    )
    bad = ~np.isfinite(logdet_c) | ~np.isfinite(logdet[others]) | ~np.isfinite(logdet[a])
    return np.where(bad, -np.inf, val)


def ort_merge(seg: Segmentation, scan: LaserScan, config: ExtractorConfig):
    """Greedy odds-ratio merging over all cluster pairs.

    Returns ``(lines, clusters)``.  Ties on the best ratio go to the pair with
    the lexicographically smallest (lower id, higher id).
    """
    pts = scan.points()
    clusters = list(seg.clusters)
    m = len(clusters)
    if m < 2:
        return [c.fit.params for c in clusters], clusters
    sigma, r_max = config.sigma, config.r_max
    mom = np.array([c.fit.moments.as_array() for c in clusters])
    _, _, chi2, det = batch_fit_moments(mom, sigma)
    with np.errstate(divide="ignore"):
        logdet = np.where(det > 0, np.log(np.where(det > 0, det, 1.0)), -np.inf)
    table = np.full((m, m), -np.inf)
    for a in range(m - 1):
        others = np.arange(a + 1, m)
        table[a, others] = _pair_log_r(mom, chi2, logdet, a, others, sigma, r_max)
    members = [c.point_indices for c in clusters]
    alive = np.ones(m, dtype=bool)
    while True:
        flat = int(np.argmax(table))
        a, b = divmod(flat, m)
        if not table[a, b] > 0.0:
            break
        members[a] = np.union1d(members[a], members[b])
        mom[a] = mom[a] + mom[b]
        alive[b] = False
        table[b, :] = -np.inf
        table[:, b] = -np.inf
        _, _, c2, dt = batch_fit_moments(mom[a : a + 1], sigma)
        chi2[a] = c2[0]
        logdet[a] = math.log(dt[0]) if dt[0] > 0 else -np.inf
        lower = np.flatnonzero(alive[:a])
        upper = np.flatnonzero(alive[a + 1 :]) + a + 1
        if len(lower):
            table[lower, a] = _pair_log_r(mom, chi2, logdet, a, lower, sigma, r_max)
        if len(upper):
            table[a, upper] = _pair_log_r(mom, chi2, logdet, a, upper, sigma, r_max)
    out = [Cluster.from_indices(members[i], pts, sigma) for i in np.flatnonzero(alive)]
    return [c.fit.params for c in out], out


def extract(scan: LaserScan, config: ExtractorConfig):
    """Lines and their clusters for one scan, in the sensor frame."""
    seg = initial_segmentation(scan, config)
    if config.use_ort:
        lines, clusters = ort_merge(seg, scan, config)
    else:
        clusters = seg.clusters
        lines = [c.fit.params for c in clusters]
    keep = [i for i, c in enumerate(clusters) if len(c) >= config.min_cluster_size]
    return [lines[i] for i in keep], [clusters[i] for i in keep]
