from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linemaps.errors import FrameMismatch
from linemaps.extraction import ExtractorConfig, Method, extract
from linemaps.geometry import LineParams, Pose2, line_to_global, segment_to_line
from linemaps.segments import (
    Interval,
    SegmentSet,
    extract_free_segments,
    extract_segments,
    geometric_match_prob,
    intersection_length,
    merge_segment_evidence,
    rebind,
)
from linemaps.simulator import GroundTruthSegment, LaserScan, SensorModel, cast_scan, door_wall_scene

LINE = LineParams(3.0, 0.0)  # x = 3, t measured along +y


def S(*pairs, line=LINE):
    return SegmentSet(line, list(pairs))


def scan_of_points(pts, sensor=None):
    pts = np.asarray(pts, dtype=float)
    sensor = sensor or SensorModel(sigma=0.0)
    b = np.arctan2(pts[:, 1], pts[:, 0])
    order = np.argsort(b)
    return LaserScan(0, b[order], np.hypot(*pts[order].T), np.ones(len(pts), bool), sensor, pose=Pose2(0, 0, 0))


def well_formed(s: SegmentSet) -> bool:
    iv = s.intervals
    return all(i.t0 <= i.t1 for i in iv) and all(a.t1 < b.t0 for a, b in zip(iv, iv[1:]))


# intervals and sets


def test_interval_rejects_reversed():
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)


def test_touching_intervals_coalesce():
    s = S((0, 1), (1, 2), (3, 4), (3.5, 5))
    assert s.as_pairs() == [[0, 2], [3, 5]]


def test_intersection_examples():
    assert intersection_length(S((0, 2)), S((1, 3))) == pytest.approx(1.0)
    assert intersection_length(S((0, 1)), S((2, 3))) == 0.0
    a = S((0, 1), (2, 4))
    assert intersection_length(a, a) == pytest.approx(a.length)


def test_frame_mismatch():
    with pytest.raises(FrameMismatch):
        intersection_length(S((0, 1)), S((0, 1), line=LineParams(3.0, 1.0)))


def test_match_prob_examples():
    occ, free = S((0, 2)), S((5, 8))
    assert geometric_match_prob(S((0, 2)), occ, free) == pytest.approx(1.0)
    assert geometric_match_prob(S((10, 11)), occ, free) == 0.5
    assert geometric_match_prob(S((1, 2), (5, 8)), S((0, 2)), S((5, 8))) == pytest.approx(0.25)
    assert geometric_match_prob(S((5, 6)), occ, free) == 0.0


def test_merge_evidence_examples():
    occ, _ = merge_segment_evidence((S((0, 1)), S()), (S((2, 3)), S()))
    assert occ.as_pairs() == [[0, 1], [2, 3]]
    occ, free = merge_segment_evidence((S((0, 1), (2, 3)), S()), (S(), S((0.5, 2.5))))
    assert free.as_pairs() == [[1, 2]]


def test_merge_idempotent():
    e = (S((0, 1)), S((3, 6)))
    o = (S((4, 5)), S((0.5, 2)))
    once = merge_segment_evidence(e, o)
    twice = merge_segment_evidence(once, o)
    assert once == twice


def test_serialization_round_trip():
    s = S((0, 1), (2, 3.5))
    assert SegmentSet.from_json(s.to_json()) == s


def test_reproject_onto_shifted_line():
    s = S((0, 1))
    moved = s.reproject(LineParams(3.01, 0.002))
    assert moved.length == pytest.approx(1.0, rel=1e-5)
    ev = rebind((s, S((4, 5))), LineParams(3.0, 0.0))
    assert ev[0] == s


# occupied segments


def test_extract_segments_gap_example():
    ts = [0, 0.1, 0.2, 5.0, 5.1]
    scan = scan_of_points([(3, t) for t in ts])
    seg = extract_segments(np.arange(5), LINE, scan, gap_break=1.0)
    assert np.allclose(seg.as_pairs(), [[0, 0.2], [5.0, 5.1]])


def test_extract_segments_single_run():
    scan = scan_of_points([(3, t) for t in np.linspace(-1, 1, 30)])
    seg = extract_segments(np.arange(30), LINE, scan)
    assert len(seg) == 1 and seg.length == pytest.approx(2.0)


def test_wall_segments_gap_at_doorway():
    env = door_wall_scene(wall_y=3.0)
    pose = Pose2(2.5, 1.0, math.pi / 2)
    scan = cast_scan(env, pose, SensorModel(), 0)
    lines, clusters = extract(scan, ExtractorConfig(method=Method.SPLIT_AND_MERGE, use_ort=True))
    wall = segment_to_line(env[0].a, env[0].b)
    owner = [set(scan.segment_ids[c.point_indices].tolist()) for c in clusters]
    k = owner.index({0, 1})
    seg = extract_segments(clusters[k], line_to_global(lines[k], pose), scan, pose=pose).reproject(wall)
    assert len(seg) >= 2
    # wall direction is -x, so the doorway x in [2, 3] is t in [-3, -2]
    doorway = S((-2.95, -2.05), line=wall)
    assert intersection_length(seg, doorway) == 0.0


# free segments


def test_free_interval_at_beam_crossings():
    env = [GroundTruthSegment((5, -10), (5, 10), 0)]
    scan = cast_scan(env, Pose2(0, 0, 0), SensorModel(sigma=0.0), 0)
    free = extract_free_segments(scan, Pose2(0, 0, 0), LINE)
    hb = scan.bearings[scan.hits]
    assert len(free) == 1
    assert free.as_pairs()[0] == pytest.approx([3 * math.tan(hb.min()), 3 * math.tan(hb.max())], abs=1e-9)


def test_beam_ending_on_line_gives_no_free_interval():
    env = [GroundTruthSegment((3, -10), (3, 10), 0)]
    scan = cast_scan(env, Pose2(0, 0, 0), SensorModel(sigma=0.0), 0)
    assert len(extract_free_segments(scan, Pose2(0, 0, 0), LINE)) == 0


def test_line_behind_sensor_gives_empty_set():
    env = [GroundTruthSegment((5, -10), (5, 10), 0)]
    scan = cast_scan(env, Pose2(0, 0, 0), SensorModel(sigma=0.0), 0)
    assert len(extract_free_segments(scan, Pose2(0, 0, 0), LineParams(3.0, math.pi))) == 0


def test_door_leaf_behind_doorway_frees_the_wall_opening():
    env = door_wall_scene(wall_y=3.0)
    pose = Pose2(2.5, 1.0, math.pi / 2)
    scan = cast_scan(env, pose, SensorModel(), 0)
    wall = segment_to_line(env[0].a, env[0].b)
    free = extract_free_segments(scan, pose, wall)
    assert intersection_length(free, S((-2.9, -2.1), line=wall)) == pytest.approx(0.8, abs=0.05)


# properties

interval = st.tuples(st.floats(-50, 50), st.floats(0, 10)).map(lambda p: (p[0], p[0] + p[1]))
sets = st.lists(interval, max_size=6).map(lambda ps: S(*ps))


@settings(max_examples=200, deadline=None)
@given(sets, sets)
def test_intersection_symmetric_and_bounded(a, b):
    ab, ba = intersection_length(a, b), intersection_length(b, a)
    assert ab == pytest.approx(ba, abs=1e-9)
    assert ab <= min(a.length, b.length) + 1e-9


@settings(max_examples=200, deadline=None)
@given(sets, sets, sets)
def test_intersection_monotone_under_superset(a, b, c):
    assert intersection_length(a, b) <= intersection_length(a.union(c), b) + 1e-9


@settings(max_examples=200, deadline=None)
@given(sets, sets, st.floats(-50, 60))
def test_intersection_additive_over_split(a, b, cut):
    lo, hi = S((-1e3, cut)), S((cut, 1e3))
    parts = intersection_length(a, b.intersection(lo)) + intersection_length(a, b.intersection(hi))
    assert parts == pytest.approx(intersection_length(a, b), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(sets, sets, sets)
def test_match_prob_range_and_extremes(new, occ, free):
    free = free.difference(occ)
    p = geometric_match_prob(new, occ, free)
    assert 0.0 <= p <= 1.0
    hit, miss = intersection_length(new, occ), intersection_length(new, free)
    if hit > 0 and miss == 0:
        assert p == 1.0
    if miss > 0 and hit == 0:
        assert p == 0.0


@settings(max_examples=200, deadline=None)
@given(sets, sets)
def test_operations_keep_sets_coalesced(a, b):
    for s in (a, b, a.union(b), a.intersection(b), a.difference(b)):
        assert well_formed(s)


@settings(max_examples=200, deadline=None)
@given(sets, sets, sets, sets)
def test_merge_leaves_occupied_and_free_exclusive(o1, f1, o2, f2):
    occ, free = merge_segment_evidence((o1, f1), (o2, f2))
    assert intersection_length(occ, free) == pytest.approx(0.0, abs=1e-9)
    assert occ.length >= max(o1.length, o2.length) - 1e-9
