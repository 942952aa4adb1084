"""Perpendicular-form line geometry.

A line is stored as ``(r, alpha)`` with ``x cos(alpha) + y sin(alpha) = r``.
The canonical chart is ``r >= 0`` and ``alpha`` in ``(-pi, pi]``; the
equivalent representation ``(-r, alpha + pi)`` is folded back at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DegenerateCluster

TWO_PI = 2.0 * math.pi

# below this r a fitted line is treated as passing through the origin
ORIGIN_TOL = 1e-9


def wrap_angle(a):
    """Wrap an angle (scalar or array) into ``(-pi, pi]``."""
    if np.ndim(a) == 0:
        w = math.remainder(float(a), TWO_PI)
        return math.pi if w == -math.pi else w
    w = np.remainder(np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(w <= -math.pi, w + TWO_PI, w)


def normalize_line(r: float, alpha: float) -> tuple[float, float]:
    """Fold ``(r, alpha)`` into the canonical chart; returns plain floats."""
    r = float(r)
    alpha = float(alpha)
    if r < 0.0:
        r = -r
        alpha += math.pi
    return r, wrap_angle(alpha)


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class LineParams:
    r: float
    alpha: float

    def __post_init__(self):
        r, alpha = normalize_line(self.r, self.alpha)
        if not (math.isfinite(r) and math.isfinite(alpha)):
            raise ValueError(f"non-finite line parameters ({self.r}, {self.alpha})")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "alpha", alpha)

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.alpha), math.sin(self.alpha)])

    @property
    def direction(self) -> np.ndarray:
        """Unit vector along the line, ``(-sin alpha, cos alpha)``."""
        return np.array([-math.sin(self.alpha), math.cos(self.alpha)])

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.alpha])

    def flipped(self) -> tuple[float, float]:
        """The non-canonical twin ``(-r, alpha + pi)``, unwrapped."""
        return -self.r, self.alpha + math.pi


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, v) -> "Pose2":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def transform_points(self, pts) -> np.ndarray:
        """Map robot-frame points (N, 2) into the global frame."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return pts @ self.rotation().T + np.array([self.x, self.y])

    def compose(self, other: "Pose2") -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def between(self, other: "Pose2") -> "Pose2":
        """Relative pose ``self^-1 * other``, expressed in ``self``'s frame."""
        return self.inverse().compose(other)


@dataclass(frozen=True)
class Moments:
    """Raw moment sums of a point set; additive under disjoint union."""

    n: int
    sx: float
    sy: float
    sxx: float
    syy: float
    sxy: float

    @classmethod
    def of(cls, pts) -> "Moments":
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        x, y = pts[:, 0], pts[:, 1]
        return cls(
            len(pts),
            float(x.sum()),
            float(y.sum()),
            float(x @ x),
            float(y @ y),
            float(x @ y),
        )

    def __add__(self, other: "Moments") -> "Moments":
        return Moments(
            self.n + other.n,
            self.sx + other.sx,
            self.sy + other.sy,
            self.sxx + other.sxx,
            self.syy + other.syy,
            self.sxy + other.sxy,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.n, self.sx, self.sy, self.sxx, self.syy, self.sxy], dtype=float)


@dataclass(frozen=True)
class LineFit:
    params: LineParams
    chi2: float
    hessian: np.ndarray = field(compare=False)
    n_points: int
    moments: Moments = field(compare=False, repr=False)
    through_origin: bool = False

    @property
    def covariance(self) -> np.ndarray:
        """Least-squares covariance of ``(r, alpha)``: inverse of half the Hessian."""
        return np.linalg.inv(0.5 * self.hessian)


def _principal_fit(n, sx, sy, sxx, syy, sxy):
    """Total-least-squares line and residual scatter from raw sums (vectorized)."""
    mx = sx / n
    my = sy / n
    cxx = sxx - sx * mx
    cyy = syy - sy * my
    cxy = sxy - sx * my
    alpha = 0.5 * np.arctan2(-2.0 * cxy, cyy - cxx)
    r = mx * np.cos(alpha) + my * np.sin(alpha)
    half_tr = 0.5 * (cxx + cyy)
    rad = np.hypot(0.5 * (cxx - cyy), cxy)
    lam_min = np.maximum(half_tr - rad, 0.0)
    return r, alpha, lam_min, 2.0 * rad


def chi2_hessian(m: Moments, line: LineParams | tuple[float, float], sigma: float) -> np.ndarray:
    """Exact Hessian of chi-square in ``(r, alpha)`` at ``line``, from moment sums."""
    r, alpha = (line.r, line.alpha) if isinstance(line, LineParams) else line
    c, s = math.cos(alpha), math.sin(alpha)
    n = m.n
    s_e = -s * m.sx + c * m.sy
    s_ee = s * s * m.sxx - 2.0 * s * c * m.sxy + c * c * m.syy
    s_d = c * m.sx + s * m.sy - n * r
    s_dd = (
        c * c * m.sxx
        + s * s * m.syy
        + 2.0 * c * s * m.sxy
        - 2.0 * r * (c * m.sx + s * m.sy)
        + n * r * r
    )
    k = 2.0 / (sigma * sigma)
    h_rr = k * n
    h_ra = -k * s_e
    h_aa = k * (s_ee - s_dd - r * s_d)
    return np.array([[h_rr, h_ra], [h_ra, h_aa]])


def chi2_of(pts, line: tuple[float, float] | LineParams, sigma: float) -> float:
    """Direct chi-square of points against a (possibly non-canonical) line."""
    r, alpha = (line.r, line.alpha) if isinstance(line, LineParams) else line
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    d = pts[:, 0] * math.cos(alpha) + pts[:, 1] * math.sin(alpha) - r
    return float(d @ d) / (sigma * sigma)


def fit_from_moments(m: Moments, sigma: float) -> LineFit:
    if m.n < 2:
        raise DegenerateCluster(f"need at least 2 points, got {m.n}")
    r, alpha, lam_min, spread = _principal_fit(m.n, m.sx, m.sy, m.sxx, m.syy, m.sxy)
    scale = max(m.sxx + m.syy, 1.0)
    if spread <= 1e-15 * scale and lam_min <= 1e-15 * scale:
        raise DegenerateCluster("all points coincide")
    params = LineParams(float(r), float(alpha))
    return LineFit(
        params=params,
        chi2=float(lam_min) / (sigma * sigma),
        hessian=chi2_hessian(m, params, sigma),
        n_points=m.n,
        moments=m,
        through_origin=params.r < ORIGIN_TOL,
    )


def fit_line(points: Iterable, sigma: float) -> LineFit:
    """Least-squares line through ``points`` with chi-square and its Hessian.

    Raises ``DegenerateCluster`` when fewer than two distinct points are given.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pts = np.asarray(list(points) if not isinstance(points, np.ndarray) else points, dtype=float)
    pts = pts.reshape(-1, 2)
    if len(pts) < 2 or np.all(np.ptp(pts, axis=0) == 0.0):
        raise DegenerateCluster("fewer than two distinct points")
    return fit_from_moments(Moments.of(pts), sigma)


def batch_fit_moments(moments: np.ndarray, sigma: float):
    """Vectorized fit over rows ``[n, sx, sy, sxx, syy, sxy]``.

    Returns ``(r, alpha, chi2, det_hessian)`` arrays.  ``r`` may be negative
    (non-canonical chart); chi2 and the determinant are chart independent.
    """
    n, sx, sy, sxx, syy, sxy = (moments[..., i] for i in range(6))
    r, alpha, lam_min, spread = _principal_fit(n, sx, sy, sxx, syy, sxy)
    # det(H) = (2/sigma^2)^2 * n * (lam_max - lam_min) at the optimum
    det = (4.0 / sigma**4) * n * spread
    return r, alpha, lam_min / sigma**2, det


def perp_distance(p, line: LineParams) -> float:
    x, y = p
    return abs(x * math.cos(line.alpha) + y * math.sin(line.alpha) - line.r)


def project_onto_line(p, line: LineParams) -> float:
    """Signed coordinate of the perpendicular foot of ``p`` along ``line.direction``.

    The origin's foot ``r * normal`` is coordinate zero.
    """
    x, y = p
    return -x * math.sin(line.alpha) + y * math.cos(line.alpha)


def project_points(pts, line: LineParams) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return pts @ line.direction


def point_at(line: LineParams, t: float) -> np.ndarray:
    return line.r * line.normal + t * line.direction


def transform_line_to_frame(line: LineParams, pose: Pose2):
    """Express a global line in the frame of ``pose``.

    Returns ``(local_line, J_pose (2x3), J_line (2x2))``; both Jacobians follow
    the normalization branch taken for ``local_line``.
    """
    c, s = math.cos(line.alpha), math.sin(line.alpha)
    r_raw = line.r - (pose.x * c + pose.y * s)
    a_raw = line.alpha - pose.theta
    j_pose = np.array([[-c, -s, 0.0], [0.0, 0.0, -1.0]])
    j_line = np.array([[1.0, pose.x * s - pose.y * c], [0.0, 1.0]])
    if r_raw < 0.0:
        j_pose[0] *= -1.0
        j_line[0] *= -1.0
    return LineParams(r_raw, a_raw), j_pose, j_line


def line_to_global(local: LineParams, pose: Pose2) -> LineParams:
    """Inverse of :func:`transform_line_to_frame`."""
    alpha = local.alpha + pose.theta
    r = local.r + pose.x * math.cos(alpha) + pose.y * math.sin(alpha)
    return LineParams(r, alpha)


def line_to_global_jacobians(local: LineParams, pose: Pose2):
    """Jacobians of :func:`line_to_global` w.r.t. the pose and the local line."""
    alpha = local.alpha + pose.theta
    c, s = math.cos(alpha), math.sin(alpha)
    r_raw = local.r + pose.x * c + pose.y * s
    dr_da = -pose.x * s + pose.y * c
    j_pose = np.array([[c, s, dr_da], [0.0, 0.0, 1.0]])
    j_local = np.array([[1.0, dr_da], [0.0, 1.0]])
    if r_raw < 0.0:
        j_pose[0] *= -1.0
        j_local[0] *= -1.0
    return j_pose, j_local


def line_difference(a: LineParams, b: LineParams) -> np.ndarray:
    """``a - b`` as ``(dr, wrapped dalpha)``, using whichever chart of ``a`` is closer."""
    d1 = np.array([a.r - b.r, wrap_angle(a.alpha - b.alpha)])
    ra, aa = a.flipped()
    d2 = np.array([ra - b.r, wrap_angle(aa - b.alpha)])
    return d1 if d1 @ d1 <= d2 @ d2 else d2


def segment_to_line(a, b) -> LineParams:
    """Infinite line through two distinct points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    alpha = math.atan2(d[0], -d[1])
    return LineParams(a[0] * math.cos(alpha) + a[1] * math.sin(alpha), alpha)


def point_segment_distance(p, a, b) -> np.ndarray:
    """Distance from points ``p`` (N, 2) to segment ``ab``."""
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    denom = float(d @ d)
    u = np.clip(((p - a) @ d) / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(p))
    foot = a + u[:, None] * d
    return np.hypot(*(p - foot).T)
