"""Table-top scenes, render profiles and domain randomization.

Workspace frame: x forward from the robot base, y to the left, z up, table
top at z = 0, units cm-analog. The operational area is a 50 x 60 rectangle
on the table; the target is a 6.5 cube whose top centre is the label.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

TARGET_SIDE = 6.5
AREA_LO = np.array([30.0, -30.0])
AREA_SIZE = np.array([50.0, 60.0])
# normalization box for x* = (x, y, z of the target top centre)
WORK_LO = np.array([30.0, -30.0, 0.0])
WORK_SPAN = np.array([50.0, 60.0, 13.0])
TABLE_SIZE = np.array([90.0, 120.0, 75.0])  # length (x), width (y), top height above floor
TABLE_CENTER = np.array([55.0, 0.0])
LOOK_AT = np.array([55.0, 0.0, 0.0])


class Domain(str, Enum):
    SIM = "SIM"
    PSEUDO_REAL = "PSEUDO_REAL"


class Scenario(str, Enum):
    SINGLE_OBJECT = "SINGLE_OBJECT"
    CLUTTER_SEEN = "CLUTTER_SEEN"
    CLUTTER_NOVEL = "CLUTTER_NOVEL"
    OCCLUDED = "OCCLUDED"
    MOVING_TARGET = "MOVING_TARGET"


def normalize_target(x):
    return (np.asarray(x) - WORK_LO) / WORK_SPAN


def denormalize_target(xn):
    return WORK_LO + np.asarray(xn) * WORK_SPAN


@dataclass(frozen=True)
class Shape:
    """A primitive geometry; ``dims`` is (lx, ly, lz) for cuboids, (r,) for
    spheres and (r, h) for cylinders."""

    kind: str
    dims: tuple[float, ...]

    @property
    def footprint(self) -> float:
        """Radius of the bounding circle in the table plane."""
        if self.kind == "cuboid":
            return 0.5 * float(np.hypot(self.dims[0], self.dims[1]))
        return float(self.dims[0])


SIM_SHAPES = (
    Shape("cuboid", (5.0, 5.0, 5.0)), Shape("cuboid", (9.0, 4.0, 4.0)),
    Shape("cuboid", (10.0, 6.0, 3.0)), Shape("cuboid", (4.0, 4.0, 11.0)),
    Shape("cuboid", (7.0, 7.0, 2.0)),
    Shape("sphere", (3.0,)), Shape("sphere", (4.5,)),
    Shape("cylinder", (3.0, 8.0)), Shape("cylinder", (4.5, 4.0)),
)

# the eleven physical distractors of the pseudo-real lab: fixed shape and colour
REAL_OBJECTS = (
    (Shape("cuboid", (12.0, 5.0, 3.0)), (0.92, 0.92, 0.90)),   # eraser box
    (Shape("cuboid", (6.0, 6.0, 6.0)), (0.85, 0.15, 0.12)),
    (Shape("cuboid", (15.0, 3.0, 3.0)), (0.95, 0.80, 0.10)),
    (Shape("cuboid", (8.0, 8.0, 4.0)), (0.20, 0.55, 0.20)),
    (Shape("cuboid", (5.0, 3.0, 9.0)), (0.55, 0.30, 0.60)),
    (Shape("cylinder", (3.5, 10.0)), (0.90, 0.45, 0.10)),
    (Shape("cylinder", (5.0, 3.0)), (0.30, 0.30, 0.32)),
    (Shape("cylinder", (2.5, 6.0)), (0.75, 0.75, 0.20)),
    (Shape("sphere", (3.5,)), (0.95, 0.55, 0.65)),
    (Shape("sphere", (5.0,)), (0.85, 0.85, 0.85)),
    (Shape("sphere", (2.5,)), (0.15, 0.60, 0.70)),
)

# never used for training in either domain
NOVEL_OBJECTS = (
    (Shape("cuboid", (3.0, 14.0, 6.0)), (0.95, 0.10, 0.80)),
    (Shape("cuboid", (11.0, 11.0, 1.5)), (0.05, 0.05, 0.05)),
    (Shape("cylinder", (6.0, 6.0)), (0.60, 0.95, 0.30)),
    (Shape("cylinder", (1.5, 14.0)), (1.00, 0.65, 0.00)),
    (Shape("sphere", (6.0,)), (0.45, 0.25, 0.10)),
    (Shape("cuboid", (4.5, 9.0, 4.5)), (0.10, 0.90, 0.90)),
    (Shape("cuboid", (12.0, 5.0, 3.0)), (0.92, 0.92, 0.90)),   # extra eraser boxes
    (Shape("cuboid", (12.0, 5.0, 3.0)), (0.92, 0.92, 0.90)),
    (Shape("cuboid", (12.0, 5.0, 3.0)), (0.92, 0.92, 0.90)),
)


@dataclass(frozen=True)
class CameraRef:
    distance: float = 105.0
    pan: float = 0.15        # rad about z, from looking along +x
    tilt: float = 0.96       # rad below horizontal
    fov: float = 0.80        # rad, full horizontal field of view


@dataclass(frozen=True)
class RenderProfile:
    domain: Domain
    target_color: tuple[float, float, float]
    table_color: tuple[float, float, float]
    floor_color: tuple[float, float, float]
    color_jitter: float = 0.10
    camera: CameraRef = CameraRef()
    camera_jitter: float = 0.01
    fov_jitter: float = 0.02
    table_pos_jitter: tuple[float, float, float] = (0.015, 0.05, 0.01)
    table_yaw_jitter: float = 0.07
    pixel_noise: float = 0.0
    lighting_jitter: float = 0.0
    light_dir: tuple[float, float, float] = (-0.3, 0.4, 0.866)
    max_distractors: int = 9
    # None: random shape from SIM_SHAPES with random RGB; else a fixed object set
    object_set: str | None = None
    resolution: int = 64

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        d["domain"] = self.domain.value
        return d

    def with_(self, **kw) -> "RenderProfile":
        return dataclasses.replace(self, **kw)


def sim_profile(resolution: int = 64) -> RenderProfile:
    return RenderProfile(
        domain=Domain.SIM,
        target_color=(0.10, 0.25, 0.85),
        table_color=(0.78, 0.66, 0.48),
        floor_color=(0.45, 0.45, 0.47),
        resolution=resolution,
    )


def pseudo_real_profile(resolution: int = 64) -> RenderProfile:
    """Shifted palette, sensor noise, global lighting gain and the lab's own
    distractor objects."""
    return RenderProfile(
        domain=Domain.PSEUDO_REAL,
        target_color=(0.05, 0.42, 0.62),
        table_color=(0.86, 0.86, 0.88),
        floor_color=(0.15, 0.15, 0.18),
        camera=CameraRef(distance=107.0, pan=0.17, tilt=0.95, fov=0.80),
        pixel_noise=0.02,
        lighting_jitter=0.15,
        light_dir=(0.35, -0.2, 0.915),
        object_set="real",
        resolution=resolution,
    )


def profile_for(domain: Domain | str, resolution: int = 64) -> RenderProfile:
    domain = Domain(domain)
    return sim_profile(resolution) if domain is Domain.SIM else pseudo_real_profile(resolution)


@dataclass
class Primitive:
    shape: Shape
    position: np.ndarray   # centre of the footprint on the table plane (x, y)
    yaw: float
    color: np.ndarray

    @property
    def height(self) -> float:
        s = self.shape
        return {"cuboid": s.dims[2] if len(s.dims) > 2 else 0.0,
                "sphere": 2 * s.dims[0], "cylinder": s.dims[1]}[s.kind]


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    fov: float

    @classmethod
    def from_ref(cls, ref: CameraRef, distance, pan, tilt, fov) -> "Camera":
        d = np.array([-np.cos(tilt) * np.cos(pan), -np.cos(tilt) * np.sin(pan), np.sin(tilt)])
        return cls(LOOK_AT + distance * d, LOOK_AT.copy(), fov)


@dataclass
class Scene:
    target: Primitive
    distractors: list[Primitive]
    table_center: np.ndarray     # (x, y)
    table_z: float
    table_yaw: float
    table_color: np.ndarray
    floor_color: np.ndarray
    camera: Camera
    profile: RenderProfile
    light_gain: float = 1.0
    noise_seed: int = 0

    @property
    def target_top(self) -> np.ndarray:
        """Label position x*: top centre of the target cuboid."""
        return np.array([*self.target.position, self.table_z + TARGET_SIDE])

    def with_target_at(self, xy) -> "Scene":
        s = dataclasses.replace(self)
        s.target = dataclasses.replace(self.target, position=np.asarray(xy, dtype=float))
        return s


def _jitter(rng, ref, frac):
    return ref * (1.0 + rng.uniform(-frac, frac, size=np.shape(ref)))


def sample_area_point(rng, margin: float = 0.0) -> np.ndarray:
    lo = AREA_LO + margin
    return lo + rng.uniform(0.0, 1.0, 2) * (AREA_SIZE - 2 * margin)


def _place_distractor(rng, shape, target_xy, margin=0.5, tries=50):
    for _ in range(tries):
        p = sample_area_point(rng, 0.0)
        if np.linalg.norm(p - target_xy) > shape.footprint + 0.5 * TARGET_SIDE * np.sqrt(2) + margin:
            return p
    return p


def _distractor_pool(profile: RenderProfile, scenario: Scenario | None):
    if scenario is Scenario.CLUTTER_NOVEL:
        base = REAL_OBJECTS if profile.object_set == "real" else ()
        return base + NOVEL_OBJECTS
    if profile.object_set == "real":
        return REAL_OBJECTS
    return None


def randomize_scene(rng: np.random.Generator, profile: RenderProfile,
                    scenario: Scenario | None = None, target_xy=None) -> Scene:
    """Draw one scene; every randomized attribute is uniform within its bound.

    ``scenario`` only changes the clutter (none for SINGLE_OBJECT, the novel
    object set for CLUTTER_NOVEL, a forced overlap for OCCLUDED).
    """
    jit = profile.color_jitter
    tgt_xy = sample_area_point(rng, 0.0) if target_xy is None else np.asarray(target_xy, float)
    target = Primitive(Shape("cuboid", (TARGET_SIDE,) * 3), tgt_xy, float(rng.uniform(-np.pi, np.pi)),
                       np.clip(_jitter(rng, np.array(profile.target_color), jit), 0, 1))
    table_off = rng.uniform(-1, 1, 3) * np.array(profile.table_pos_jitter) * TABLE_SIZE
    table_yaw = float(rng.uniform(-1, 1) * profile.table_yaw_jitter * np.pi / 2)
    table_color = np.clip(_jitter(rng, np.array(profile.table_color), jit), 0, 1)
    floor_color = np.clip(_jitter(rng, np.array(profile.floor_color), jit), 0, 1)
    ref = profile.camera
    cj = profile.camera_jitter
    camera = Camera.from_ref(ref, _jitter(rng, ref.distance, cj), _jitter(rng, ref.pan, cj),
                             _jitter(rng, ref.tilt, cj), _jitter(rng, ref.fov, profile.fov_jitter))
    pool = _distractor_pool(profile, scenario)
    if scenario is Scenario.SINGLE_OBJECT:
        count = 0
    else:
        count = int(rng.integers(0, profile.max_distractors + 1))
    distractors = []
    for _ in range(count):
        if pool is None:
            shape = SIM_SHAPES[int(rng.integers(len(SIM_SHAPES)))]
            color = rng.uniform(0.0, 1.0, 3)
        else:
            shape, color = pool[int(rng.integers(len(pool)))]
            color = np.clip(_jitter(rng, np.array(color), jit), 0, 1)
        pos = _place_distractor(rng, shape, tgt_xy)
        distractors.append(Primitive(shape, pos, float(rng.uniform(-np.pi, np.pi)), np.asarray(color)))
    gain = float(1.0 + rng.uniform(-1, 1) * profile.lighting_jitter)
    scene = Scene(target, distractors, TABLE_CENTER + table_off[:2], float(table_off[2]),
                  table_yaw, table_color, floor_color, camera, profile, gain,
                  int(rng.integers(2 ** 31)))
    if scenario is Scenario.OCCLUDED:
        _add_occluder(rng, scene, pool)
    return scene


def _add_occluder(rng, scene: Scene, pool):
    """Put a tall distractor between camera and target so it covers part of the blob."""
    from .render import occlusion_fraction

    cam_xy = scene.camera.position[:2]
    tgt = scene.target.position
    toward = (cam_xy - tgt) / np.linalg.norm(cam_xy - tgt)
    shape = Shape("cuboid", (4.0, 8.0, 12.0))
    color = rng.uniform(0.2, 0.9, 3) if pool is None else np.array(pool[0][1])
    best = None
    for dist in np.linspace(3.0, 9.0, 13):
        for lateral in (0.0, 1.5, -1.5, 3.0, -3.0):
            side = np.array([-toward[1], toward[0]])
            prim = Primitive(shape, tgt + dist * toward + lateral * side,
                             float(np.arctan2(toward[1], toward[0])), color)
            frac = occlusion_fraction(scene, prim)
            if frac >= 0.3 and frac <= 0.8:
                scene.distractors.append(prim)
                return
            if best is None or abs(frac - 0.5) < abs(best[0] - 0.5):
                best = (frac, prim)
    scene.distractors.append(best[1])
