from __future__ import annotations

import math

import pytest

from linemaps.bench import (
    METRIC_FIELDS,
    ExtractionMetrics,
    aggregate,
    door_wall_trial,
    match_lines,
    run_extraction_benchmark,
    visible_truth_lines,
)
from linemaps.extraction import ExtractorConfig, Method
from linemaps.geometry import LineParams, Pose2
from linemaps.simulator import GroundTruthSegment, SensorModel, benchmark_environment, cast_scan, derive_seed, sample_poses

TRUTH = [LineParams(3.0, 0.0), LineParams(2.0, math.pi / 2), LineParams(5.0, -1.0)]


def test_match_exact_truth():
    m = match_lines(TRUTH, TRUTH)
    assert m.tp_rate == 100.0 and m.nd_rate == 0.0
    assert m.mean_err_r == 0.0 and m.mean_err_alpha == 0.0


def test_match_nothing_found():
    m = match_lines([], TRUTH)
    assert m.tp_rate == 0.0 and m.nd_rate == 100.0


def test_match_is_one_to_one_between_parallel_lines():
    door, wall = LineParams(3.0, 0.0), LineParams(3.3, 0.0)
    m = match_lines([LineParams(3.01, 0.0)], [door, wall], tol_r=0.5)
    assert len(m.pairs) == 1 and m.pairs[0][1] == 0


def test_match_respects_both_tolerances():
    m = match_lines([LineParams(3.06, 0.0), LineParams(2.0, math.pi / 2 + 0.06)], TRUTH[:2])
    assert m.pairs == []


def test_match_errors_in_millimetres():
    m = match_lines([LineParams(3.004, 0.002)], [LineParams(3.0, 0.0)])
    assert m.mean_err_r == pytest.approx(4.0) and m.mean_err_alpha == pytest.approx(0.002)


def test_visibility_counts_consecutive_hits():
    env = [GroundTruthSegment((3, -3), (3, 3), 0), GroundTruthSegment((3, 3), (-3, 3), 1)]
    sensor = SensorModel(sigma=0.0)
    lines = visible_truth_lines(env, Pose2(0, 0, 0), sensor)
    assert sorted((round(l.r, 9), round(l.alpha, 9)) for l in lines) == [(3.0, 0.0), (3.0, round(math.pi / 2, 9))]
    # a sliver seen by a handful of beams does not count
    sliver = [GroundTruthSegment((3, -0.02), (3, 0.02), 0)]
    assert visible_truth_lines(sliver, Pose2(0, 0, 0), sensor) == []


def test_collinear_segments_count_once():
    env = [GroundTruthSegment((3, -3), (3, -0.5), 0), GroundTruthSegment((3, 0.5), (3, 3), 1)]
    assert len(visible_truth_lines(env, Pose2(0, 0, 0), SensorModel(sigma=0.0))) == 1


def test_metrics_row_fields():
    m = aggregate([match_lines(TRUTH, TRUTH)], scans=1, skipped=0, elapsed=0.5)
    row = m.row("SM")
    assert list(row) == METRIC_FIELDS
    assert m.speed == pytest.approx(2.0) and m.precision == 100.0
    assert 0 <= m.tp_rate <= 100 and 0 <= m.nd_rate <= 100


def _scans(n, sigma, seed):
    env = benchmark_environment()
    sensor = SensorModel(sigma=sigma)
    poses = sample_poses(env, n, rng_seed=derive_seed(seed, 2**32))
    return env, [cast_scan(env, p, sensor, derive_seed(seed, k), pose_id=k) for k, p in enumerate(poses)]


def test_noise_free_split_and_merge_finds_visible_lines():
    env, scans = _scans(100, 0.0, 3)
    res = run_extraction_benchmark(scans, env, [ExtractorConfig(method=Method.SPLIT_AND_MERGE, sigma=0.01)])
    m = res.metrics["SM"]
    assert m.tp_rate >= 98.0
    assert m.mean_err_r < 1.0


def test_benchmark_counts_consistent():
    env, scans = _scans(20, 0.01, 4)
    res = run_extraction_benchmark(scans, env, [ExtractorConfig.from_name(n) for n in ("SM", "SM+ORT")])
    for name, m in res.metrics.items():
        assert m.scans == 20
        assert m.matched <= min(m.visible, m.found)
        assert m.tp_rate + m.nd_rate == pytest.approx(100.0)
        assert m.speed > 0
        assert sum(len(x.pairs) for x in res.per_scan[name]) == m.matched


def test_door_wall_trial_records_both_lines():
    t = door_wall_trial(0, use_sv=True)
    assert math.isfinite(t.door_nis) and math.isfinite(t.wall_nis)
    assert t.wall_sv_prob > 0.5 > t.door_sv_prob
    assert isinstance(ExtractionMetrics(0, 0, 0, 0, 1).precision, float)
