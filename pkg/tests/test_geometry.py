import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsnbv.geometry import (
    TWO_PI,
    ArcSet,
    DegenerateDirection,
    EmptySamplingSpace,
    FruitPose,
    MAX_AXIS_TILT,
    OnAxis,
    PickingRing,
    Viewpoint,
    clamp_axis,
    look_at_quaternion,
    project_to_ring,
    quat_from_matrix,
    quat_rotate,
    quat_to_matrix,
    ring_point,
    signed_angle,
    subtract_interval,
    uniform_equidistant_sample,
    wrap_angle,
)

finite = st.floats(-1.0, 1.0, allow_nan=False)
angle = st.floats(0.0, TWO_PI, allow_nan=False, exclude_max=True)


def _random_rotation(rng):
    q = rng.normal(size=4)
    return quat_to_matrix(q / np.linalg.norm(q))


def test_quaternion_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(500):
        R = _random_rotation(rng)
        q = quat_from_matrix(R)
        assert q[0] >= 0
        assert np.allclose(quat_to_matrix(q), R, atol=1e-12)


def test_quaternion_branches():
    # trace <= 0 cases: 180 degree turns about each axis
    for axis in np.eye(3):
        R = 2 * np.outer(axis, axis) - np.eye(3)
        q = quat_from_matrix(R)
        assert np.allclose(quat_to_matrix(q), R, atol=1e-12)
        assert np.isclose(abs(np.dot(q[1:], axis)), 1.0)


def test_look_at_frame():
    q = look_at_quaternion([0, 0, 0], [1, 0, 0])
    R = quat_to_matrix(q)
    assert np.allclose(R[:, 2], [1, 0, 0])  # forward
    assert np.allclose(R[:, 1], [0, 0, -1])  # image down is world down
    assert np.allclose(R[:, 0], [0, -1, 0])
    assert np.isclose(np.linalg.det(R), 1.0)


@given(st.tuples(finite, finite, finite), st.tuples(finite, finite, finite))
@settings(max_examples=200, deadline=None)
def test_look_at_points_forward(a, b):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(b - a) <= 1e-3:
        return
    q = look_at_quaternion(a, b)
    assert np.allclose(quat_rotate(q, [0, 0, 1]), (b - a) / np.linalg.norm(b - a), atol=1e-9)


def test_look_at_straight_down_uses_fallback():
    q = look_at_quaternion([0, 0, 1], [0, 0, 0])
    R = quat_to_matrix(q)
    assert np.allclose(R[:, 2], [0, 0, -1])
    assert np.isclose(np.linalg.det(R), 1.0)


def test_look_at_coincident():
    with pytest.raises(DegenerateDirection):
        look_at_quaternion([1, 2, 3], [1, 2, 3])


def test_viewpoint_rejects_non_unit_quaternion():
    with pytest.raises(ValueError):
        Viewpoint([0, 0, 0], [1, 1, 0, 0])


def test_viewpoint_vector_and_dict():
    vp = Viewpoint.looking_at([0.1, 0.2, 0.3], [0, 0, 0])
    assert vp.as_vector().shape == (7,)
    assert np.array_equal(Viewpoint(**vp.to_dict()).as_vector(), vp.as_vector())


@given(st.tuples(finite, finite, finite))
@settings(max_examples=300, deadline=None)
def test_clamp_axis_bound(v):
    v = np.array(v)
    if np.linalg.norm(v) < 1e-6:
        return
    a = clamp_axis(v)
    assert np.isclose(np.linalg.norm(a), 1.0)
    assert math.acos(min(1.0, a[2])) <= MAX_AXIS_TILT + 1e-9


def test_clamp_axis_keeps_azimuth():
    a = clamp_axis([1.0, 1.0, 0.1])
    assert np.isclose(math.degrees(math.acos(a[2])), 30.0)
    assert np.isclose(a[0], a[1])
    assert np.allclose(clamp_axis([0.1, 0, 1]), np.array([0.1, 0, 1]) / np.linalg.norm([0.1, 0, 1]))


def test_fruit_pose_clamps():
    f = FruitPose([0, 0, 0], [1, 0, 0.01])
    assert math.acos(f.axis[2]) <= MAX_AXIS_TILT + 1e-12


def test_ring_angle_convention():
    ring = PickingRing([1, 2, 3], [0, 0, 1], 0.21)
    assert np.allclose(ring_point(ring, 0.0), [1.21, 2, 3])
    assert np.allclose(ring_point(ring, math.pi / 2), [1, 2.21, 3])


@given(angle, st.floats(-0.5, 0.5), st.floats(0.01, 0.5))
@settings(max_examples=200, deadline=None)
def test_project_inverts_ring_point(theta, h, r):
    ring = PickingRing([0.3, -0.2, 0.5], clamp_axis([0.2, -0.1, 1.0]), r)
    p = ring_point(ring, theta) + h * ring.normal
    got = project_to_ring(ring, p)
    assert abs(signed_angle(got - theta)) < 1e-9


def test_project_matches_brute_force_sweep():
    """Closest ring point found by a dense sweep agrees with the projection."""
    rng = np.random.default_rng(3)
    ring = PickingRing([0, 0, 0], clamp_axis([0.3, 0.1, 1.0]), 0.21)
    sweep = np.linspace(0, TWO_PI, 36000, endpoint=False)
    pts = np.array([ring_point(ring, t) for t in sweep])
    for _ in range(20):
        p = rng.uniform(-0.4, 0.4, 3)
        best = sweep[np.argmin(np.linalg.norm(pts - p, axis=1))]
        assert abs(signed_angle(project_to_ring(ring, p) - best)) < 2 * TWO_PI / 36000


def test_project_on_axis():
    ring = PickingRing([0, 0, 0], [0, 0, 1])
    with pytest.raises(OnAxis):
        project_to_ring(ring, [0, 0, 0.5])


def test_wrap_and_signed():
    assert wrap_angle(-0.1) == pytest.approx(TWO_PI - 0.1)
    assert wrap_angle(TWO_PI) == 0.0
    assert signed_angle(math.pi) == pytest.approx(math.pi)
    assert signed_angle(-math.pi) == pytest.approx(math.pi)
    assert signed_angle(1.5 * math.pi) == pytest.approx(-0.5 * math.pi)


def test_sector_arcset():
    s = ArcSet.sector(math.pi / 2, math.radians(270))
    assert s.measure == pytest.approx(math.radians(270))
    assert s.contains(math.pi / 2)
    assert not s.contains(1.5 * math.pi)
    assert ArcSet.sector(0.0, TWO_PI) == ArcSet.full()


def test_subtract_wrapping_interval():
    arcs = subtract_interval(ArcSet.full(), TWO_PI - 0.5, TWO_PI + 0.5)
    assert arcs.intervals == ((0.5, TWO_PI - 0.5),)
    assert subtract_interval(arcs, 1.0, 1.0) == arcs
    assert not subtract_interval(ArcSet.full(), 0.0, 10.0)


def _discretize(arcs, n=3600):
    grid = (np.arange(n) + 0.5) * TWO_PI / n
    return np.array([arcs.contains(t) for t in grid])


@given(st.lists(st.tuples(angle, st.floats(0.0, 2.0)), min_size=1, max_size=6))
@settings(max_examples=150, deadline=None)
def test_subtract_matches_discretized_oracle(blocks):
    n = 3600
    grid = (np.arange(n) + 0.5) * TWO_PI / n
    keep = np.ones(n, dtype=bool)
    arcs = ArcSet.full()
    prev = arcs.measure
    for lo, w in blocks:
        arcs = subtract_interval(arcs, lo, lo + w)
        rel = (grid - lo) % TWO_PI
        keep &= ~(rel < w)
        assert arcs.measure <= prev + 1e-12
        prev = arcs.measure
    got = _discretize(arcs, n)
    # only cells straddling an interval boundary may disagree
    assert np.sum(got != keep) <= 2 * 2 * len(blocks)
    assert arcs.measure == pytest.approx(keep.mean() * TWO_PI, abs=2 * len(blocks) * TWO_PI / n + 1e-9)


def test_equidistant_single_arc():
    arcs = ArcSet(((0.0, 1.0),))
    assert uniform_equidistant_sample(arcs, 4) == pytest.approx([0.125, 0.375, 0.625, 0.875])


def test_equidistant_spans_pieces():
    arcs = ArcSet(((0.0, 1.0), (2.0, 3.0)))
    assert uniform_equidistant_sample(arcs, 4) == pytest.approx([0.25, 0.75, 2.25, 2.75])


@given(st.lists(st.tuples(angle, st.floats(0.0, 1.5)), max_size=4), st.integers(1, 8))
@settings(max_examples=100, deadline=None)
def test_equidistant_inside_space(blocks, n):
    arcs = ArcSet.full()
    for lo, w in blocks:
        arcs = subtract_interval(arcs, lo, lo + w)
    if not arcs:
        return
    for t in uniform_equidistant_sample(arcs, n):
        assert any(lo <= t <= hi for lo, hi in arcs.intervals)


def test_equidistant_errors():
    with pytest.raises(EmptySamplingSpace):
        uniform_equidistant_sample(ArcSet(), 4)
    with pytest.raises(ValueError):
        uniform_equidistant_sample(ArcSet.full(), 0)
