import math

import numpy as np
import pytest

from gsnbv.geometry import FruitPose, Viewpoint
from gsnbv.scene import (
    NO_CLASS,
    Box,
    CameraModel,
    Cylinder,
    Disc,
    Ellipsoid,
    Observation,
    Scene,
    SemanticClass,
    apply_mask_noise,
    intersect,
    read_pgm,
    render,
    write_depth_pgm,
    write_semantic_pgm,
)


def _inside(prim, p):
    """Point-membership predicates used by the marching oracle."""
    if isinstance(prim, Ellipsoid):
        return np.sum(((p - prim.center) / prim.semi_axes) ** 2, axis=-1) <= 1.0
    if isinstance(prim, Cylinder):
        d = p - prim.base
        h = d @ prim.axis
        radial = np.linalg.norm(d - h[..., None] * prim.axis, axis=-1)
        return (h >= 0) & (h <= prim.height) & (radial <= prim.radius)
    if isinstance(prim, Box):
        local = (p - prim.center) @ prim.rotation
        return np.all(np.abs(local) <= prim.half_extents, axis=-1)
    raise TypeError(prim)


def _march(prim, origin, direction, t_max=2.0, step=2e-4):
    t = np.arange(0.0, t_max, step)
    inside = _inside(prim, origin + t[:, None] * direction)
    # skip a start inside the solid: look for the first outside -> inside change
    idx = np.flatnonzero(inside)
    return None if idx.size == 0 else t[idx[0]]


PRIMS = [
    Ellipsoid([0.0, 0.0, 0.0], [0.04, 0.05, 0.06]),
    Cylinder([0.01, 0.0, -0.03], [0.2, 0.1, 1.0], 0.02, 0.07),
    Box([0.0, 0.01, 0.0], [0.03, 0.02, 0.05]),
]


@pytest.mark.parametrize("prim", PRIMS, ids=lambda p: p.kind)
def test_intersect_matches_ray_marching(prim):
    rng = np.random.default_rng(11)
    n_hit = 0
    for _ in range(150):
        origin = rng.normal(size=3)
        origin = 0.3 * origin / np.linalg.norm(origin)
        target = rng.uniform(-0.06, 0.06, 3)
        d = target - origin
        d /= np.linalg.norm(d)
        t = intersect(origin, d, prim)
        ref = _march(prim, origin, d)
        if ref is None:
            assert t is None or t > 1.9
        else:
            n_hit += 1
            assert t is not None
            assert abs(t - ref) <= 3e-4
    assert n_hit > 20


def test_disc_intersection():
    disc = Disc([0, 0, 0], [0, 0, 1], 0.05)
    assert intersect([0.01, 0.0, 1.0], [0, 0, -1], disc) == pytest.approx(1.0)
    assert intersect([0.06, 0.0, 1.0], [0, 0, -1], disc) is None
    assert intersect([0.0, 0.0, 1.0], [1, 0, 0], disc) is None  # parallel
    assert intersect([0.0, 0.0, -1.0], [0, 0, -1], disc) is None  # behind


def test_intersect_requires_unit_direction():
    with pytest.raises(ValueError):
        intersect([0, 0, 0], [0, 0, 2], PRIMS[0])


def test_degenerate_primitives_rejected():
    with pytest.raises(ValueError):
        Ellipsoid([0, 0, 0], [0.1, 0.0, 0.1])


def _single_sphere_scene(dist):
    fruit = Ellipsoid([0, dist, 0], [0.04, 0.04, 0.04], SemanticClass.AVOCADO)
    return Scene((fruit,), FruitPose([0, dist, 0]))


def test_render_center_pixel_depth():
    cam = CameraModel()
    pose = Viewpoint.looking_at([0, 0, 0], [0, 1, 0])
    obs = render(_single_sphere_scene(0.3), cam, pose)
    assert obs.depth[240, 320] == pytest.approx(0.26, abs=1e-9)
    assert obs.semantic[240, 320] == SemanticClass.AVOCADO
    assert obs.semantic[0, 0] == NO_CLASS
    assert np.isnan(obs.depth[0, 0])


def test_render_far_clip():
    cam = CameraModel()
    pose = Viewpoint.looking_at([0, 0, 0], [0, 1, 0])
    obs = render(_single_sphere_scene(0.8), cam, pose)
    assert not obs.valid.any()
    assert (obs.semantic == NO_CLASS).all()


def test_render_near_clip():
    cam = CameraModel()
    pose = Viewpoint.looking_at([0, 0, 0], [0, 1, 0])
    obs = render(_single_sphere_scene(0.06), cam, pose)  # surface at 0.02 m
    assert np.isnan(obs.depth[240, 320])


def test_render_nearest_hit_wins():
    cam = CameraModel()
    pose = Viewpoint.looking_at([0, 0, 0], [0, 1, 0])
    leaf = Disc([0, 0.2, 0], [0, 1, 0], 0.01)
    scene = _single_sphere_scene(0.3)
    scene = Scene(scene.primitives + (leaf,), scene.fruit_truth)
    obs = render(scene, cam, pose)
    assert obs.semantic[240, 320] == SemanticClass.BACKGROUND
    assert obs.depth[240, 320] == pytest.approx(0.2)


def test_camera_default_intrinsics():
    cam = CameraModel()
    ref = CameraModel.from_fov()
    assert cam.fx == pytest.approx(ref.fx)
    assert 2 * math.degrees(math.atan(cam.cx / cam.fx)) == pytest.approx(69.0)


def test_project_backproject_roundtrip():
    cam = CameraModel()
    pose = Viewpoint.looking_at([0.1, 0.2, 0.3], [0.0, -0.2, 0.4])
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 480, 100)
    cols = rng.integers(0, 640, 100)
    depth = rng.uniform(0.1, 0.7, 100)
    pts = cam.backproject(pose, rows, cols, depth)
    r, c, z = cam.project(pose, pts)
    assert np.allclose(r, rows) and np.allclose(c, cols)
    assert np.allclose(np.linalg.norm(pts - pose.position, axis=1), depth)


def test_mask_dropout_rate_binomial():
    rng = np.random.default_rng(5)
    sem = np.full((200, 200), SemanticClass.AVOCADO, dtype=np.uint8)
    obs = Observation(np.ones(sem.shape), sem, Viewpoint.looking_at([0, 0, 0], [0, 1, 0]))
    noisy = apply_mask_noise(obs, 0.1, rng)
    dropped = np.mean(noisy.semantic == NO_CLASS)
    sigma = math.sqrt(0.1 * 0.9 / sem.size)
    assert abs(dropped - 0.1) < 5 * sigma
    assert np.array_equal(noisy.depth, obs.depth)
    assert apply_mask_noise(obs, 0.0, rng) is obs
    with pytest.raises(ValueError):
        apply_mask_noise(obs, 1.0, rng)


def test_pgm_roundtrip(tmp_path):
    cam = CameraModel()
    pose = Viewpoint.looking_at([0, 0, 0], [0, 1, 0])
    obs = render(_single_sphere_scene(0.3), cam, pose)
    write_depth_pgm(obs, tmp_path / "d.pgm")
    write_semantic_pgm(obs, tmp_path / "s.pgm")
    d = read_pgm(tmp_path / "d.pgm")
    s = read_pgm(tmp_path / "s.pgm")
    assert d.shape == (480, 640) and s.shape == (480, 640)
    assert d[240, 320] == 260
    assert d[0, 0] == 0
    assert np.array_equal(s, obs.semantic)


def test_scene_validate():
    fruit = Ellipsoid([0, 0, 0], [0.04, 0.04, 0.06], SemanticClass.AVOCADO)
    ped = Cylinder([0, 0, 0.06], [0, 0, 1], 0.004, 0.05, SemanticClass.PEDUNCLE)
    scene = Scene((fruit, ped), FruitPose([0, 0, 0]), (np.full(3, -1.0), np.full(3, 1.0)))
    scene.validate()
    with pytest.raises(ValueError):
        Scene((fruit,), FruitPose([0, 0, 0])).validate()
    bad = Cylinder([0, 0, 0.1], [0, 0, 1], 0.004, 0.05, SemanticClass.PEDUNCLE)
    with pytest.raises(ValueError):
        Scene((fruit, bad), FruitPose([0, 0, 0]), scene.workspace).validate()
