from __future__ import annotations

import json
import math

import numpy as np
import pytest

from linemaps.errors import IndeterminateSystem
from linemaps.geometry import LineParams, Pose2, line_difference, line_to_global, transform_line_to_frame
from linemaps.sam import (
    Estimate,
    FactorGraph,
    LineFactor,
    OdometryFactor,
    PriorFactor,
    incremental_update,
    information_matrix,
    initialize_variables,
    marginal_covariance,
    measurement_model,
    motion_model,
    solve,
)
from linemaps.simulator import odometry_increments

from oracles import fd_jacobian, rel_err

ODOM_COV = np.diag([0.02**2, 0.02**2, 0.01**2])
LINE_COV = np.diag([1e-4, 1e-5])


def rigid(T: Pose2, p: Pose2) -> Pose2:
    return T.compose(p)


def synthetic_problem(seed, n_poses=12, n_lms=5, odom_noise=0.0, meas_noise=0.0, transform: Pose2 | None = None):
    """Poses on an arc observing every line landmark; returns (factors per step, truth)."""
    rng = np.random.default_rng(seed)
    T = transform or Pose2(0, 0, 0)
    truth_poses = [Pose2(3 * math.cos(0.15 * k), 3 * math.sin(0.15 * k), 0.15 * k + math.pi / 2) for k in range(n_poses)]
    truth_lms = [LineParams(rng.uniform(6, 10), a) for a in np.linspace(-3, 3, n_lms)]
    truth_poses = [rigid(T, p) for p in truth_poses]
    truth_lms = [line_to_global(transform_line_to_frame(l, Pose2(0, 0, 0))[0], T) for l in truth_lms]
    steps = []
    for k, pose in enumerate(truth_poses):
        fs = [PriorFactor(0, pose)] if k == 0 else []
        if k:
            u = np.array(odometry_increments([truth_poses[k - 1], pose])[0]) + rng.normal(0, 1, 3) * odom_noise * np.sqrt(np.diag(ODOM_COV))
            fs.append(OdometryFactor(k - 1, k, tuple(u), ODOM_COV))
        for j, l in enumerate(truth_lms):
            z = transform_line_to_frame(l, pose)[0]
            noise = rng.normal(0, 1, 2) * meas_noise * np.sqrt(np.diag(LINE_COV))
            fs.append(LineFactor(k, j, LineParams(z.r + noise[0], z.alpha + noise[1]), LINE_COV))
        steps.append(fs)
    truth = Estimate(dict(enumerate(truth_poses)), dict(enumerate(truth_lms)))
    return steps, truth


def build(steps):
    g = FactorGraph()
    est = Estimate()
    for fs in steps:
        g.extend(fs)
        est = initialize_variables(fs, est)
    return g, est


def pose_err(a: Estimate, b: Estimate):
    d = np.array([[a.poses[k].x - b.poses[k].x, a.poses[k].y - b.poses[k].y, math.remainder(a.poses[k].theta - b.poses[k].theta, 2 * math.pi)] for k in b.poses])
    return float(np.abs(d[:, :2]).max()), float(np.abs(d[:, 2]).max())


def landmark_err(a: Estimate, b: Estimate):
    return max(float(np.abs(line_difference(a.landmarks[k], b.landmarks[k])).max()) for k in b.landmarks)


# models


def test_motion_examples():
    assert motion_model(Pose2(0, 0, 0), (1, 0, 0))[0].as_array() == pytest.approx([1, 0, 0])
    assert motion_model(Pose2(0, 0, math.pi / 2), (1, 0, 0))[0].as_array() == pytest.approx([0, 1, math.pi / 2])


def test_motion_jacobians_match_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3))
        u = rng.uniform(-1, 1, 3)
        _, fx, fu = motion_model(x, u)
        nx = fd_jacobian(lambda v: motion_model(Pose2(*v), u)[0].as_array(), x.as_array(), angular=(2,))
        nu = fd_jacobian(lambda v: motion_model(x, v)[0].as_array(), u, angular=(2,))
        assert rel_err(fx, nx) <= 1e-5 and rel_err(fu, nu) <= 1e-5


def test_measurement_model_delegates_to_transform():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3))
        l = LineParams(rng.uniform(0, 10), rng.uniform(-3, 3))
        a, b = measurement_model(x, l), transform_line_to_frame(l, x)
        assert a[0] == b[0] and np.allclose(a[1], b[1]) and np.allclose(a[2], b[2])
    assert measurement_model(Pose2(1, 0, 0), LineParams(3, 0))[0].as_array() == pytest.approx([2, 0])


def _factor_fd(factor, est, key):
    kind, i = key

    def f(v):
        e2 = est.copy()
        if kind == "x":
            e2.poses[i] = Pose2(*v)
        else:
            e2.landmarks[i] = LineParams(*v)
        return factor.linearize(e2)[0]

    v0 = est.poses[i].as_array() if kind == "x" else est.landmarks[i].as_array()
    return fd_jacobian(f, v0)


def test_factor_jacobians_match_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(100):
        est = Estimate(
            {0: Pose2(*rng.uniform(-3, 3, 3)), 1: Pose2(*rng.uniform(-3, 3, 3))},
            {0: LineParams(rng.uniform(5, 9), rng.uniform(-3, 3))},
        )
        z = transform_line_to_frame(est.landmarks[0], est.poses[0])[0]
        factors = [
            PriorFactor(0, Pose2(*rng.uniform(-3, 3, 3)), np.diag(rng.uniform(0.1, 1, 3))),
            OdometryFactor(0, 1, tuple(rng.uniform(-1, 1, 3)), ODOM_COV),
            LineFactor(0, 0, LineParams(z.r + rng.normal(0, 0.05), z.alpha + rng.normal(0, 0.05)), LINE_COV),
        ]
        for f in factors:
            _, jacs = f.linearize(est)
            for key, J in zip(f.keys(), jacs):
                assert rel_err(J, _factor_fd(f, est, key)) <= 1e-5


def test_line_factor_accepts_flipped_measurement():
    est = Estimate({0: Pose2(0, 0, 0)}, {0: LineParams(3.0, 0.0)})
    direct = LineFactor(0, 0, LineParams(3.0, 0.0), LINE_COV).linearize(est)[0]
    flipped = LineFactor(0, 0, LineParams(-3.0, math.pi), LINE_COV).linearize(est)[0]
    assert np.allclose(direct, 0) and np.allclose(flipped, 0, atol=1e-12)


# solve


def test_prior_only_solution():
    g = FactorGraph([PriorFactor(0, Pose2(1, 2, 0.3))])
    est = solve(g, Estimate({0: Pose2(0, 0, 0)}))
    assert est.poses[0].as_array() == pytest.approx([1, 2, 0.3])
    assert est.objective == pytest.approx(0.0, abs=1e-20)


def test_noise_free_truth_is_fixed_point():
    steps, truth = synthetic_problem(3)
    g, _ = build(steps)
    est = solve(g, truth)
    assert est.objective <= 1e-10
    assert pose_err(est, truth)[0] <= 1e-12


def test_recovers_truth_from_dead_reckoning():
    steps, truth = synthetic_problem(4, n_poses=20)
    noisy, _ = synthetic_problem(4, n_poses=20, odom_noise=1.0)
    # exact measurements, odometry that drifts: start from the drifted chain
    g, _ = build(steps)
    _, init = build(noisy)
    assert pose_err(init, truth)[0] > 1e-2
    est = solve(g, init)
    dxy, dth = pose_err(est, truth)
    assert dxy <= 1e-3 and dth <= 1e-3 and est.converged


def test_objective_non_increasing():
    for seed in range(5):
        steps, _ = synthetic_problem(seed, odom_noise=3.0, meas_noise=1.0)
        g, init = build(steps)
        hist = solve(g, init).history
        assert all(b <= a for a, b in zip(hist, hist[1:]))
        assert hist[-1] <= hist[0]


def test_rigid_motion_invariance():
    T = Pose2(4.0, -2.0, 0.7)
    steps, _ = synthetic_problem(5, meas_noise=1.0, odom_noise=1.0)
    moved, _ = synthetic_problem(5, meas_noise=1.0, odom_noise=1.0, transform=T)
    g1, i1 = build(steps)
    g2, i2 = build(moved)
    e1, e2 = solve(g1, i1), solve(g2, i2)
    for k in e1.poses:
        assert rigid(T, e1.poses[k]).as_array() == pytest.approx(e2.poses[k].as_array(), abs=1e-6)


def test_missing_prior_is_indeterminate():
    g = FactorGraph([OdometryFactor(0, 1, (1, 0, 0), ODOM_COV)])
    with pytest.raises(IndeterminateSystem) as err:
        solve(g, Estimate({0: Pose2(0, 0, 0), 1: Pose2(1, 0, 0)}))
    assert err.value.variable in ("x0", "x1")
    assert err.value.variable in str(err.value)


def test_uninitialized_variable_is_indeterminate():
    g = FactorGraph([PriorFactor(0, Pose2(0, 0, 0)), LineFactor(0, 4, LineParams(3, 0), LINE_COV)])
    with pytest.raises(IndeterminateSystem, match="l4"):
        solve(g, Estimate({0: Pose2(0, 0, 0)}))


def test_disconnected_chain_is_indeterminate():
    # x2 and x3 are linked to each other but not to the prior
    g = FactorGraph([PriorFactor(0, Pose2(0, 0, 0)), OdometryFactor(0, 1, (1, 0, 0), ODOM_COV), OdometryFactor(2, 3, (1, 0, 0), ODOM_COV)])
    est = Estimate({k: Pose2(k, 0, 0) for k in range(4)})
    with pytest.raises(IndeterminateSystem) as err:
        solve(g, est)
    assert err.value.variable in ("x2", "x3")


# marginals


def test_prior_only_marginal():
    S0 = np.diag([0.1, 0.2, 0.05])
    g = FactorGraph([PriorFactor(0, Pose2(0, 0, 0), S0)])
    assert marginal_covariance(g, Estimate({0: Pose2(0, 0, 0)}), [("x", 0)]) == pytest.approx(S0)


def test_two_pose_chain_marginal():
    S0 = np.diag([0.01, 0.02, 0.003])
    x0, u = Pose2(0, 0, 0), (1.0, 0.0, 0.0)
    x1, fx, fu = motion_model(x0, u)
    g = FactorGraph([PriorFactor(0, x0, S0), OdometryFactor(0, 1, u, ODOM_COV)])
    C = marginal_covariance(g, Estimate({0: x0, 1: x1}), [("x", 1)])
    assert C == pytest.approx(fx @ S0 @ fx.T + fu @ ODOM_COV @ fu.T, abs=1e-12)


def test_marginals_match_dense_inverse():
    for seed in range(5):
        steps, _ = synthetic_problem(seed, n_poses=7, n_lms=5, odom_noise=1.0, meas_noise=1.0)
        g, init = build(steps)
        est = solve(g, init)
        A, keys = information_matrix(g, est)
        assert len(keys) <= 12
        full = np.linalg.inv(A.toarray())
        offs, o = {}, 0
        for k in keys:
            offs[k] = o
            o += 3 if k[0] == "x" else 2
        ask = [("l", 2), ("x", 3), ("x", 0)]
        idx = [i for k in ask for i in range(offs[k], offs[k] + (3 if k[0] == "x" else 2))]
        C = marginal_covariance(g, est, ask)
        assert np.abs(C - full[np.ix_(idx, idx)]).max() <= 1e-8
        assert np.allclose(C, C.T) and np.linalg.eigvalsh(C).min() > 0


def test_information_sparsity_follows_factors():
    steps, _ = synthetic_problem(6, n_poses=6, n_lms=3)
    g = FactorGraph()
    g.extend(f for fs in steps for f in fs if not (isinstance(f, LineFactor) and f.landmark == 2 and f.pose > 1))
    _, init = build(steps)
    A, keys = information_matrix(g, init)
    A = A.toarray()
    linked = {frozenset(f.keys()) for f in g.factors}
    offs, o = {}, 0
    for k in keys:
        offs[k] = (o, o + (3 if k[0] == "x" else 2))
        o = offs[k][1]
    for a in keys:
        for b in keys:
            if a == b:
                continue
            block = A[offs[a][0] : offs[a][1], offs[b][0] : offs[b][1]]
            if frozenset((a, b)) not in linked:
                assert not block.any(), (a, b)


# incremental


def test_zero_residual_factor_keeps_estimate():
    steps, truth = synthetic_problem(7)
    g, _ = build(steps)
    est = solve(g, truth)
    z = transform_line_to_frame(truth.landmarks[1], truth.poses[3])[0]
    after = incremental_update(g, [LineFactor(3, 1, z, LINE_COV)], est)
    assert pose_err(after, est)[0] <= 1e-12 and landmark_err(after, est) <= 1e-12


def test_landmark_initialization_is_exact_inverse():
    rng = np.random.default_rng(8)
    for _ in range(50):
        x = Pose2(*rng.uniform(-3, 3, 3))
        z = LineParams(rng.uniform(0.5, 8), rng.uniform(-3, 3))
        est = initialize_variables([LineFactor(0, 0, z, LINE_COV)], Estimate({0: x}))
        pred = measurement_model(x, est.landmarks[0])[0]
        assert np.abs(line_difference(pred, z)).max() <= 1e-12


def test_incremental_matches_batch():
    steps, _ = synthetic_problem(9, n_poses=30, odom_noise=2.0, meas_noise=1.0)
    g = FactorGraph()
    est = Estimate()
    for fs in steps:
        est = incremental_update(g, fs, est, relinearize_every=10)
    final = solve(g, est)
    gb, init = build(steps)
    batch = solve(gb, init)
    dxy, dth = pose_err(final, batch)
    assert dxy <= 1e-4 and dth <= 1e-4 and landmark_err(final, batch) <= 1e-4


def test_graph_dump(tmp_path):
    steps, truth = synthetic_problem(10, n_poses=3, n_lms=2)
    g, _ = build(steps)
    path = tmp_path / "graph.json"
    g.dump(path, truth)
    doc = json.loads(path.read_text())
    assert {f["type"] for f in doc["factors"]} == {"prior", "odometry", "line"}
    assert doc["variables"][0] == ["x", 0] and doc["variables"][-1][0] == "l"
    assert set(doc["estimate"]["poses"]) == {"0", "1", "2"}
