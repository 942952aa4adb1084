"""Least-squares smoothing and mapping over poses and line landmarks.

Variables are robot poses ``("x", i)`` and global lines ``("l", j)``.  The
objective is the sum of squared whitened residuals of all factors.  It is
minimized by Gauss-Newton with a Levenberg fallback, and a step is accepted
only when the objective does not increase.  Normal equations are assembled
sparse and factored by dense Cholesky with poses first and landmarks last.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

from .errors import IndeterminateSystem
from .geometry import LineParams, Pose2, line_to_global, wrap_angle

PRIOR_VARIANCE = 1e-6
_FLIP = np.diag([-1.0, 1.0])
_PIVOT_TOL = 1e-10

Key = tuple[str, int]


def motion_model(x_prev: Pose2, u) -> tuple[Pose2, np.ndarray, np.ndarray]:
    """Compose an odometry increment ``u = (dx, dy, dtheta)`` in the robot frame.

    Returns ``(x_next, F_x, F_u)``.
    """
    ux, uy, ut = (float(v) for v in u)
    c, s = math.cos(x_prev.theta), math.sin(x_prev.theta)
    nxt = Pose2(x_prev.x + c * ux - s * uy, x_prev.y + s * ux + c * uy, x_prev.theta + ut)
    fx = np.array([[1.0, 0.0, -s * ux - c * uy], [0.0, 1.0, c * ux - s * uy], [0.0, 0.0, 1.0]])
    fu = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return nxt, fx, fu


def _raw_prediction(x: Pose2, l: LineParams):
    c, s = math.cos(l.alpha), math.sin(l.alpha)
    r = l.r - (x.x * c + x.y * s)
    a = l.alpha - x.theta
    jx = np.array([[-c, -s, 0.0], [0.0, 0.0, -1.0]])
    jl = np.array([[1.0, x.x * s - x.y * c], [0.0, 1.0]])
    return r, a, jx, jl


def measurement_model(x: Pose2, l: LineParams) -> tuple[LineParams, np.ndarray, np.ndarray]:
    """Predicted line in the robot frame, with Jacobians w.r.t. pose and landmark.

    The Jacobians follow the chart of the returned (normalized) line.
    """
    r, a, jx, jl = _raw_prediction(x, l)
    if r < 0.0:
        jx[0] *= -1.0
        jl[0] *= -1.0
    return LineParams(r, a), jx, jl


def _sqrt_info(cov) -> np.ndarray:
    info = np.linalg.inv(np.asarray(cov, dtype=float))
    return np.linalg.cholesky(0.5 * (info + info.T)).T


@dataclass(eq=False)
class PriorFactor:
    pose: int
    value: Pose2
    cov: np.ndarray = field(default_factory=lambda: np.eye(3) * PRIOR_VARIANCE)

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        self.w = _sqrt_info(self.cov)

    def keys(self) -> list[Key]:
        return [("x", self.pose)]

    def linearize(self, est: "Estimate"):
        x = est.poses[self.pose]
        e = np.array([x.x - self.value.x, x.y - self.value.y, wrap_angle(x.theta - self.value.theta)])
        return self.w @ e, [self.w]

    def to_json(self) -> dict:
        return {"type": "prior", "pose": self.pose, "value": list(self.value.as_array()), "cov": self.cov.tolist()}


@dataclass(eq=False)
class OdometryFactor:
    """Residual ``f(x_prev, u) - x_cur``; ``cov`` is the noise of ``u`` in the robot frame."""

    prev: int
    cur: int
    u: tuple[float, float, float]
    cov: np.ndarray

    def __post_init__(self):
        self.u = tuple(float(v) for v in self.u)
        self.cov = np.asarray(self.cov, dtype=float)
        iso = abs(self.cov[0, 0] - self.cov[1, 1]) < 1e-15 and abs(self.cov[0, 1]) < 1e-15
        self._iso_w = _sqrt_info(self.cov) if iso else None

    def keys(self) -> list[Key]:
        return [("x", self.prev), ("x", self.cur)]

    def linearize(self, est: "Estimate"):
        a = est.poses[self.prev]
        b = est.poses[self.cur]
        pred, fx, fu = motion_model(a, self.u)
        e = np.array([pred.x - b.x, pred.y - b.y, wrap_angle(pred.theta - b.theta)])
        w = self._iso_w if self._iso_w is not None else _sqrt_info(fu @ self.cov @ fu.T)
        return w @ e, [w @ fx, -w]

    def to_json(self) -> dict:
        return {"type": "odometry", "prev": self.prev, "cur": self.cur, "u": list(self.u), "cov": self.cov.tolist()}


@dataclass(eq=False)
class LineFactor:
    """A line ``z`` seen from pose ``pose``, matched to landmark ``landmark``."""

    pose: int
    landmark: int
    z: LineParams
    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        self.w = _sqrt_info(self.cov)
        self.w_flip = self.w @ _FLIP

    def keys(self) -> list[Key]:
        return [("x", self.pose), ("l", self.landmark)]

    def linearize(self, est: "Estimate"):
        x = est.poses[self.pose]
        l = est.landmarks[self.landmark]
        r, a, jx, jl = _raw_prediction(x, l)
        e1 = self.w @ np.array([r - self.z.r, wrap_angle(a - self.z.alpha)])
        e2 = self.w_flip @ np.array([r + self.z.r, wrap_angle(a - self.z.alpha - math.pi)])
        w = self.w
        e = e1
        if e2 @ e2 < e1 @ e1:
            w, e = self.w_flip, e2
        return e, [w @ jx, w @ jl]

    def to_json(self) -> dict:
        return {
            "type": "line",
            "pose": self.pose,
            "landmark": self.landmark,
            "z": [self.z.r, self.z.alpha],
            "cov": self.cov.tolist(),
        }


Factor = PriorFactor | OdometryFactor | LineFactor


@dataclass
class FactorGraph:
    factors: list = field(default_factory=list)
    updates: int = 0

    def add(self, factor) -> None:
        self.factors.append(factor)

    def extend(self, factors: Iterable) -> None:
        for f in factors:
            self.add(f)

    def variables(self) -> list[Key]:
        """Elimination order: poses by id, then landmarks by id."""
        keys = {k for f in self.factors for k in f.keys()}
        return sorted(keys, key=lambda k: (k[0] != "x", k[1]))

    def to_json(self, estimate: "Estimate | None" = None) -> dict:
        out: dict = {"variables": [list(k) for k in self.variables()], "factors": [f.to_json() for f in self.factors]}
        if estimate is not None:
            out["estimate"] = estimate.to_json()
        return out

    def dump(self, path, estimate: "Estimate | None" = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(estimate), fh, indent=1, sort_keys=True)


@dataclass
class Estimate:
    poses: dict[int, Pose2] = field(default_factory=dict)
    landmarks: dict[int, LineParams] = field(default_factory=dict)
    objective: float = math.nan
    iterations: int = 0
    converged: bool = False
    history: list[float] = field(default_factory=list)

    def copy(self) -> "Estimate":
        return Estimate(dict(self.poses), dict(self.landmarks), self.objective, self.iterations, self.converged, list(self.history))

    def to_json(self) -> dict:
        return {
            "poses": {str(k): list(v.as_array()) for k, v in sorted(self.poses.items())},
            "landmarks": {str(k): [v.r, v.alpha] for k, v in sorted(self.landmarks.items())},
            "objective": self.objective,
        }


@dataclass
class SolverOptions:
    max_iters: int = 50
    rel_tol: float = 1e-10
    step_tol: float = 1e-10
    damping: float = 1e-4
    max_damping_steps: int = 12


class _Layout:
    def __init__(self, keys: Sequence[Key]):
        self.keys = list(keys)
        self.offset: dict[Key, int] = {}
        o = 0
        for k in self.keys:
            self.offset[k] = o
            o += 3 if k[0] == "x" else 2
        self.dim = o

    def name(self, col: int) -> str:
        for k in reversed(self.keys):
            if self.offset[k] <= col:
                return f"{k[0]}{k[1]}"
        return "?"


def _linearize(graph: FactorGraph, est: Estimate, layout: _Layout):
    rows, cols, vals, res = [], [], [], []
    row = 0
    for f in graph.factors:
        e, jacs = f.linearize(est)
        m = len(e)
        res.append(e)
        for key, j in zip(f.keys(), jacs):
            o = layout.offset[key]
            rr, cc = np.meshgrid(np.arange(m) + row, np.arange(j.shape[1]) + o, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(j.ravel())
        row += m
    r = np.concatenate(res) if res else np.zeros(0)
    if not rows:
        return sp.csr_matrix((0, layout.dim)), r
    J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row, layout.dim))
    return J, r


def _objective(graph: FactorGraph, est: Estimate) -> float:
    total = 0.0
    for f in graph.factors:
        e, _ = f.linearize(est)
        total += float(e @ e)
    return total


def information_matrix(graph: FactorGraph, est: Estimate):
    """Sparse ``J^T J`` at ``est`` and the variable ordering it uses."""
    layout = _Layout(graph.variables())
    J, _ = _linearize(graph, est, layout)
    return (J.T @ J).tocsr(), layout.keys


def _factor(A: np.ndarray, layout: _Layout):
    """Cholesky of ``A`` with Jacobi scaling; raises naming the first unresolved variable."""
    d = np.diag(A).copy()
    bad = np.flatnonzero(d <= 0.0)
    if len(bad):
        raise IndeterminateSystem(f"variable {layout.name(bad[0])} is unconstrained", layout.name(bad[0]))
    s = 1.0 / np.sqrt(d)
    As = A * s[:, None] * s[None, :]
    c, info = dpotrf(As, lower=1, clean=1)
    if info > 0:
        raise IndeterminateSystem(f"variable {layout.name(info - 1)} is not determined", layout.name(info - 1))
    piv = np.diag(c) ** 2
    low = np.flatnonzero(piv < _PIVOT_TOL)
    if len(low):
        raise IndeterminateSystem(f"variable {layout.name(low[0])} is not determined", layout.name(low[0]))
    return c, s


def _solve_factored(fac, b: np.ndarray) -> np.ndarray:
    c, s = fac
    return s[:, None] * cho_solve((c, True), s[:, None] * b) if b.ndim == 2 else s * cho_solve((c, True), s * b)


def _retract(est: Estimate, delta: np.ndarray, layout: _Layout) -> Estimate:
    out = est.copy()
    for k in layout.keys:
        o = layout.offset[k]
        if k[0] == "x":
            p = est.poses[k[1]]
            out.poses[k[1]] = Pose2(p.x + delta[o], p.y + delta[o + 1], p.theta + delta[o + 2])
        else:
            l = est.landmarks[k[1]]
            out.landmarks[k[1]] = LineParams(l.r + delta[o], l.alpha + delta[o + 1])
    return out


def _check_initialized(graph: FactorGraph, est: Estimate) -> None:
    for kind, i in graph.variables():
        store = est.poses if kind == "x" else est.landmarks
        if i not in store:
            raise IndeterminateSystem(f"variable {kind}{i} has no initial value", f"{kind}{i}")


def solve(graph: FactorGraph, initial: Estimate, options: SolverOptions | None = None) -> Estimate:
    """Minimize the graph objective starting from ``initial``.

    Raises ``IndeterminateSystem`` when the linearized system is rank
    deficient, naming the offending variable.
    """
    opt = options or SolverOptions()
    _check_initialized(graph, initial)
    layout = _Layout(graph.variables())
    est = initial.copy()
    J, r = _linearize(graph, est, layout)
    obj = float(r @ r)
    est.history = [obj]
    est.iterations = 0
    est.converged = False
    if layout.dim == 0:
        est.objective = obj
        est.converged = True
        return est
    A = (J.T @ J).toarray()
    _factor(A, layout)
    lam = 0.0
    for it in range(opt.max_iters):
        A = (J.T @ J).toarray()
        g = J.T @ r
        scale = float(np.mean(np.diag(A)))
        accepted = None
        for _ in range(opt.max_damping_steps):
            M = A + lam * scale * np.eye(layout.dim) if lam > 0.0 else A
            try:
                delta = -_solve_factored(_factor(M, layout), g)
            except IndeterminateSystem:
                lam = opt.damping if lam == 0.0 else lam * 10.0
                continue
            cand = _retract(est, delta, layout)
            J2, r2 = _linearize(graph, cand, layout)
            obj2 = float(r2 @ r2)
            if obj2 <= obj:
                accepted = (cand, J2, r2, obj2, delta)
                break
            lam = opt.damping if lam == 0.0 else lam * 10.0
        if accepted is None:
            est.converged = True
            break
        cand, J, r, obj2, delta = accepted
        decrease = obj - obj2
        prev = obj
        est, obj = cand, obj2
        est.iterations = it + 1
        est.history.append(obj)
        lam = lam / 10.0 if lam > opt.damping else 0.0
        if decrease <= opt.rel_tol * max(prev, 1e-300) or float(np.max(np.abs(delta))) < opt.step_tol:
            est.converged = True
            break
    est.objective = obj
    return est


def marginal_covariance(graph: FactorGraph, estimate: Estimate, keys: Sequence[Key]) -> np.ndarray:
    """Joint marginal covariance of ``keys`` (in the given order) at ``estimate``."""
    layout = _Layout(graph.variables())
    J, _ = _linearize(graph, estimate, layout)
    fac = _factor((J.T @ J).toarray(), layout)
    idx = []
    for k in keys:
        o = layout.offset[tuple(k)]
        idx.extend(range(o, o + (3 if k[0] == "x" else 2)))
    E = np.zeros((layout.dim, len(idx)))
    E[idx, np.arange(len(idx))] = 1.0
    X = _solve_factored(fac, E)
    C = X[idx]
    return 0.5 * (C + C.T)


def initialize_variables(graph_factors: Sequence, est: Estimate) -> Estimate:
    """Give new variables an initial value from the factors that introduce them."""
    out = est.copy()
    for f in graph_factors:
        if isinstance(f, PriorFactor) and f.pose not in out.poses:
            out.poses[f.pose] = f.value
    for f in graph_factors:
        if isinstance(f, OdometryFactor) and f.cur not in out.poses and f.prev in out.poses:
            out.poses[f.cur] = motion_model(out.poses[f.prev], f.u)[0]
    for f in graph_factors:
        if isinstance(f, LineFactor) and f.landmark not in out.landmarks and f.pose in out.poses:
            out.landmarks[f.landmark] = line_to_global(f.z, out.poses[f.pose])
    return out


def incremental_update(
    graph: FactorGraph,
    new_factors: Sequence,
    estimate: Estimate,
    options: SolverOptions | None = None,
    relinearize_every: int = 10,
) -> Estimate:
    """Append factors and refresh the estimate.

    New variables are initialized from their factors.  Every
    ``relinearize_every``-th update runs to convergence; the others take a
    single damped Gauss-Newton step from the previous estimate.
    """
    opt = options or SolverOptions()
    graph.extend(new_factors)
    est = initialize_variables(new_factors, estimate)
    graph.updates += 1
    if relinearize_every > 0 and graph.updates % relinearize_every == 0:
        return solve(graph, est, opt)
    one = SolverOptions(1, opt.rel_tol, opt.step_tol, opt.damping, opt.max_damping_steps)
    return solve(graph, est, one)
