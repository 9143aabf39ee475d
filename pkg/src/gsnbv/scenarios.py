"""Built-in and procedural scenarios plus their JSON file format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import FruitPose, Viewpoint, ring_point, PickingRing
from .scene import (
    PRIMITIVE_TYPES,
    Box,
    CameraModel,
    Cylinder,
    Disc,
    Ellipsoid,
    Scene,
    SemanticClass,
    render,
)

FRUIT_POS = (0.01, -0.36, 0.559)
FRUIT_AXIS = (0.0, 0.0, 1.0)
FRUIT_SEMI_AXES = (0.04, 0.04, 0.06)
PEDUNCLE_RADIUS = 0.004
PEDUNCLE_HEIGHT = 0.05
WORKSPACE_SIZE = (0.42, 0.45, 0.84)

# the arm base sits on the +y side of the plant; the first view looks from there
INITIAL_BEARING = math.pi / 2
INITIAL_DISTANCE = 0.21


@dataclass(frozen=True)
class Scenario:
    name: str
    scene: Scene
    camera: CameraModel
    initial_position: np.ndarray
    initial_target: np.ndarray
    config_overrides: dict = field(default_factory=dict)

    @property
    def initial_pose(self) -> Viewpoint:
        return Viewpoint.looking_at(self.initial_position, self.initial_target)

    @property
    def ground_truth(self) -> FruitPose:
        return self.scene.fruit_truth

    def validate(self) -> None:
        self.scene.validate()
        if fruit_pixels(self.scene, self.camera, self.initial_pose) == 0:
            raise ValueError(f"scenario {self.name}: fruit not visible from the initial pose")

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        fruit, ped = self.scene.fruit, self.scene.peduncle
        occluders = [
            {"type": p.kind, "params": p.params(), "class": SemanticClass(p.cls).name.lower()}
            for p in self.scene.occluders
        ]
        lo, hi = self.scene.workspace
        return {
            "name": self.name,
            "camera": self.camera.to_dict(),
            "initial_pose": {
                "position": np.asarray(self.initial_position).tolist(),
                "target": np.asarray(self.initial_target).tolist(),
            },
            "fruit": {"center": fruit.center.tolist(), "semi_axes": fruit.semi_axes.tolist(), "axis": [0.0, 0.0, 1.0]},
            "peduncle": ped.params(),
            "occluders": occluders,
            "workspace": {"min": lo.tolist(), "max": hi.tolist()},
            "ground_truth": {
                "f_pos": self.scene.fruit_truth.position.tolist(),
                "f_axis": self.scene.fruit_truth.axis.tolist(),
            },
            "config_overrides": dict(self.config_overrides),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        fr = d["fruit"]
        if np.linalg.norm(np.asarray(fr.get("axis", FRUIT_AXIS)) - FRUIT_AXIS) > 1e-12:
            raise ValueError("only vertical fruit ellipsoids are supported")
        prims = [
            Ellipsoid(fr["center"], fr["semi_axes"], SemanticClass.AVOCADO),
            Cylinder(cls=SemanticClass.PEDUNCLE, **d["peduncle"]),
        ]
        for occ in d.get("occluders", []):
            kind = PRIMITIVE_TYPES[occ["type"]]
            prims.append(kind(cls=SemanticClass[occ.get("class", "background").upper()], **occ["params"]))
        gt = d["ground_truth"]
        kw = {}
        if "workspace" in d:
            kw["workspace"] = (np.asarray(d["workspace"]["min"], float), np.asarray(d["workspace"]["max"], float))
        scene = Scene(tuple(prims), FruitPose(gt["f_pos"], gt["f_axis"]), **kw)
        cam = CameraModel(**d["camera"]) if "camera" in d else CameraModel()
        pose = d["initial_pose"]
        return cls(
            d["name"],
            scene,
            cam,
            np.asarray(pose["position"], float),
            np.asarray(pose["target"], float),
            dict(d.get("config_overrides", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot load scenario {path}: {e}") from e
    return Scenario.from_dict(data)


def resolve_scenario(name_or_path: str) -> Scenario:
    if name_or_path in BUILTINS:
        return BUILTINS[name_or_path]()
    return load_scenario(name_or_path)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def fruit_pixels(scene: Scene, camera: CameraModel, pose: Viewpoint) -> int:
    return int((render(scene, camera, pose).semantic == SemanticClass.AVOCADO).sum())


def fruit_visibility(scene: Scene, camera: CameraModel, pose: Viewpoint) -> float:
    """Visible fruit pixels relative to the same view with all occluders removed."""
    ref = fruit_pixels(scene.without_occluders(), camera, pose)
    return fruit_pixels(scene, camera, pose) / ref if ref else 0.0


def _plant(fruit_pos=FRUIT_POS) -> list:
    c = np.asarray(fruit_pos, float)
    fruit = Ellipsoid(c, FRUIT_SEMI_AXES, SemanticClass.AVOCADO)
    top = c + np.array([0.0, 0.0, FRUIT_SEMI_AXES[2]])
    ped = Cylinder(top, FRUIT_AXIS, PEDUNCLE_RADIUS, PEDUNCLE_HEIGHT, SemanticClass.PEDUNCLE)
    return [fruit, ped]


def _workspace(center) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(center, float)
    half = np.asarray(WORKSPACE_SIZE) / 2
    return c - half, c + half


def _initial_position(fruit_pos) -> np.ndarray:
    ring = PickingRing(fruit_pos, FRUIT_AXIS, INITIAL_DISTANCE)
    return ring_point(ring, INITIAL_BEARING)


def _leaf(offset, normal, radius) -> Disc:
    return Disc(np.asarray(FRUIT_POS) + np.asarray(offset), normal, radius)


# Leaves as seen from the arm side (+y): two in front hide about 72 % of the
# fruit from the first view, two small ones flank it on either side and one
# sits behind. Pickable views remain near bearings -40 and 160 degrees.
GROUP1_LEAVES = (
    ((0.03, 0.06, -0.005), (0.2, 1.0, 0.1), 0.04),
    ((-0.035, 0.065, -0.03), (-0.2, 1.0, 0.15), 0.035),
    ((-0.06, -0.12, 0.05), (0.5, -1.0, 0.0), 0.07),
    ((0.07, 0.01, 0.0), (1.0, 0.2, 0.0), 0.03),
    ((-0.08, -0.04, 0.0), (-1.0, -0.4, 0.0), 0.035),
)

# vertical board on the camera's right (-x) side, between the ring and the fruit
GROUP2_BOARD = Box((FRUIT_POS[0] - 0.1, FRUIT_POS[1], FRUIT_POS[2]), (0.005, 0.18, 0.25))

# mirrored pair of long boards either side of the first view plus a small
# leaf hiding the peduncle from the front; used to trap hill-climbing
SYMMETRIC_BOARD_X = 0.1
SYMMETRIC_BOARD_Y = 0.065
SYMMETRIC_BOARD_HALF = (0.005, 0.135, 0.25)
PEDUNCLE_LEAF = ((0.0, 0.05, 0.06), (0.0, 1.0, 0.3), 0.025)


def builtin_group1() -> Scenario:
    prims = _plant() + [_leaf(*leaf) for leaf in GROUP1_LEAVES]
    scene = Scene(tuple(prims), FruitPose(FRUIT_POS, FRUIT_AXIS), _workspace(FRUIT_POS))
    return Scenario("group1", scene, CameraModel(), _initial_position(FRUIT_POS), np.asarray(FRUIT_POS, float))


def builtin_group2() -> Scenario:
    g1 = builtin_group1()
    scene = Scene(g1.scene.primitives + (GROUP2_BOARD,), g1.scene.fruit_truth, g1.scene.workspace)
    return Scenario("group2", scene, g1.camera, g1.initial_position, g1.initial_target)


def builtin_symmetric() -> Scenario:
    prims = _plant() + [_leaf(*PEDUNCLE_LEAF)]
    for side in (-1.0, 1.0):
        c = (FRUIT_POS[0] + side * SYMMETRIC_BOARD_X, FRUIT_POS[1] + SYMMETRIC_BOARD_Y, FRUIT_POS[2])
        prims.append(Box(c, SYMMETRIC_BOARD_HALF))
    scene = Scene(tuple(prims), FruitPose(FRUIT_POS, FRUIT_AXIS), _workspace(FRUIT_POS))
    return Scenario("symmetric", scene, CameraModel(), _initial_position(FRUIT_POS), np.asarray(FRUIT_POS, float))


def random_scenario(seed: int, n_leaves: int = 4, leaf_radius_range=(0.05, 0.10)) -> Scenario:
    """Fruit jittered around the nominal position with random leaf discs around it.

    Leaves that would hide the fruit completely from the first view are
    dropped (in generation order) until some of it shows.
    """
    if n_leaves < 0:
        raise ValueError("n_leaves must be >= 0")
    rng = np.random.default_rng(seed)
    center = np.asarray(FRUIT_POS) + rng.uniform(-0.03, 0.03, 3)
    lo, hi = _workspace(FRUIT_POS)
    leaves = []
    for _ in range(n_leaves):
        bearing = rng.uniform(0, 2 * math.pi)
        dist = rng.uniform(0.07, 0.15)
        offset = np.array([dist * math.cos(bearing), dist * math.sin(bearing), rng.uniform(-0.08, 0.1)])
        normal = rng.normal(size=3)
        radius = rng.uniform(*leaf_radius_range)
        leaves.append(Disc(center + offset, normal, radius))
    cam = CameraModel()
    pos = _initial_position(center)
    while True:
        scene = Scene(tuple(_plant(center) + leaves), FruitPose(center, FRUIT_AXIS), (lo, hi))
        sc = Scenario(f"random-{seed}", scene, cam, pos, center)
        if not leaves or fruit_pixels(scene, cam, sc.initial_pose) > 0:
            return sc
        leaves.pop(0)


BUILTINS = {"group1": builtin_group1, "group2": builtin_group2, "symmetric": builtin_symmetric}
