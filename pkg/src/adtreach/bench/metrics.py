"""Error metrics, box-plot statistics and closed-loop reaching evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numgrad import Graph
from ..policynet import CombinedNetwork, Module, bind, control_graph, perception_forward
from ..simworld.datasets import Dataset, item_seeds, make_perception_dataset
from ..simworld.kinematics import KinematicChain, default_chain, forward_kinematics, inverse_kinematics
from ..simworld.render import render
from ..simworld.scene import (AREA_LO, AREA_SIZE, WORK_SPAN, RenderProfile, Scenario,
                              normalize_target, pseudo_real_profile, randomize_scene)
from ..simworld.trajectory import DT, TIMEOUT, p_control_step, sample_initial_q

SUCCESS_THRESHOLD = 4.6
WHISKER = 1.5
STOP_SPEED = 1e-3
MOVING_SPEED = 2.0     # target drift, cm-analog per second


def perception_error(pred, gt) -> np.ndarray:
    """Euclidean distance in workspace units between normalized positions."""
    d = (np.atleast_2d(pred) - np.atleast_2d(gt)) * WORK_SPAN
    return np.linalg.norm(d, axis=1)


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    outliers: tuple[float, ...]
    n: int

    def to_dict(self) -> dict:
        return {"median": self.median, "q1": self.q1, "q3": self.q3,
                "outliers": list(self.outliers), "n": self.n}


def box_stats(values, w: float = WHISKER) -> BoxStats:
    """Quartiles by linear interpolation between closest ranks; outliers beyond w * IQR."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("box_stats of an empty sample")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    iqr = q3 - q1
    if iqr > 0:
        flag = (v >= q3 + w * iqr) | (v <= q1 - w * iqr)
    else:
        # a collapsed box would flag every point equal to it; flag only the ones off it
        flag = v != q1
    out = tuple(float(x) for x in np.sort(v[flag]))
    return BoxStats(float(med), float(q1), float(q3), out, int(v.size))


@dataclass(frozen=True)
class ReachResult:
    final_distance: float
    steps: int

    @property
    def success(self) -> bool:
        return self.final_distance < SUCCESS_THRESHOLD


def is_success(distance: float) -> bool:
    return distance < SUCCESS_THRESHOLD


@dataclass
class ReachReport:
    scenario: str
    results: list[ReachResult] = field(default_factory=list)

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.final_distance for r in self.results])

    @property
    def success_rate(self) -> float:
        return float(np.mean([r.success for r in self.results]))

    @property
    def stats(self) -> BoxStats:
        return box_stats(self.distances)


def _control_velocity(control: Module, x_hat, qn) -> np.ndarray:
    g = Graph()
    th = np.concatenate([x_hat, qn])[None]
    return control_graph(g, control.arch, bind(g, control, False), g.constant(th)).data[0]


def _drift(rng) -> np.ndarray:
    a = rng.uniform(0, 2 * np.pi)
    return MOVING_SPEED * np.array([np.cos(a), np.sin(a)])


def reach_once(policy, chain: KinematicChain, scene, q0, *, moving: bool = False, rng=None,
               timeout: float = TIMEOUT, dt: float = DT) -> ReachResult:
    """Closed-loop rollout at 20 Hz until max|v| < 1e-3 or timeout.

    ``policy(scene, q) -> v``. A moving target drifts at constant speed and
    bounces inside the operational area; the scene (and so the image) is
    updated every step.
    """
    q = np.asarray(q0, float).copy()
    vel = _drift(rng) if moving else None
    n = int(round(timeout / dt))
    k = 0
    for k in range(n):
        v = np.asarray(policy(scene, q))
        if np.max(np.abs(v)) < STOP_SPEED:
            break
        q = np.clip(q + v * dt, chain.lower, chain.upper)
        if moving:
            p = scene.target.position + vel * dt
            lo, hi = AREA_LO, AREA_LO + AREA_SIZE
            vel = np.where((p < lo) | (p > hi), -vel, vel)
            scene = scene.with_target_at(np.clip(p, lo, hi))
    else:
        k = n
    dist = float(np.linalg.norm(forward_kinematics(chain, q) - scene.target_top))
    return ReachResult(dist, k)


class PerceptionCache:
    """Per-scene perception output; a static scene is perceived once."""

    def __init__(self, perception: Module):
        self.perception = perception
        self._key, self._val = None, None

    def __call__(self, scene):
        key = (id(scene), tuple(scene.target.position))
        if key != self._key:
            self._key = key
            self._val = perception_forward(self.perception, render(scene)[None])[0]
        return self._val


def oracle_perception(scene) -> np.ndarray:
    """Ground-truth normalized target position, standing in for a perception module."""
    return normalize_target(scene.target_top)


def control_policy(control: Module, chain: KinematicChain, perception=None):
    """Control module fed by ground-truth x* or, when given, by ``perception``.

    ``perception`` is a perception Module or any callable ``scene -> x_hat``.
    """
    if isinstance(perception, Module):
        est = PerceptionCache(perception)
    else:
        est = perception

    def policy(scene, q):
        x_hat = est(scene) if est is not None else oracle_perception(scene)
        return _control_velocity(control, x_hat, chain.normalize_q(q))
    return policy


def combined_policy(net: CombinedNetwork, chain: KinematicChain):
    return control_policy(net.control, chain, net.perception)


def pseudo_inverse_policy(chain: KinematicChain):
    """Reference controller: IK goal from the true target, then the P law."""
    goals = {}

    def policy(scene, q):
        key = tuple(scene.target_top)
        if key not in goals:
            goals.clear()
            goals[key] = inverse_kinematics(chain, scene.target_top, q)
        return p_control_step(q, goals[key])
    return policy


TEST_SET_SIZE = 144
TEST_ROLE = "perception/pseudo_real/test"


def perception_test_set(root_seed: int = 0, resolution: int = 64, n: int = TEST_SET_SIZE) -> Dataset:
    """Held-out labeled PSEUDO_REAL scenes under a role no training set uses."""
    return make_perception_dataset(root_seed, pseudo_real_profile(resolution), n, role=TEST_ROLE)


def evaluate_perception(module: Module, test: Dataset) -> np.ndarray:
    """Per-image position error of ``module`` on ``test``."""
    return perception_error(perception_forward(module, test.images_f64(np.arange(len(test)))), test.targets)


class OverlapError(ValueError):
    pass


def assert_disjoint(test, *train) -> None:
    """Raise unless no scene seed of ``test`` occurs in any training dataset."""
    held = set(int(x) for x in test.seeds)
    for ds in train:
        if ds is None:
            continue
        shared = held.intersection(int(x) for x in ds.seeds)
        if shared:
            raise OverlapError(f"test set shares {len(shared)} scene seeds with a training set "
                               f"({ds.meta.get('role')})")


@dataclass(frozen=True)
class TrialLayout:
    n_targets: int = 15
    trials_per_target: int = 3
    seed: int = 0


def trial_scenes(layout: TrialLayout, scenario: Scenario, profile: RenderProfile,
                 chain: KinematicChain):
    """Fixed (scene, q0, rng) triples per trial, identical for every evaluated network."""
    tseeds = item_seeds(layout.seed, f"eval/target/{scenario.value}", layout.n_targets)
    out = []
    for i, ts in enumerate(tseeds):
        scen = None if scenario in (Scenario.CLUTTER_SEEN, Scenario.MOVING_TARGET) else scenario
        scene = randomize_scene(np.random.default_rng(int(ts)), profile, scen)
        iseeds = item_seeds(layout.seed, f"eval/init/{scenario.value}/{i}", layout.trials_per_target)
        for s in iseeds:
            rng = np.random.default_rng(int(s))
            out.append((scene, sample_initial_q(rng, chain), rng))
    return out


def eval_reach(policy_factory, scenario: Scenario | str = Scenario.CLUTTER_SEEN,
               layout: TrialLayout | None = None, profile: RenderProfile | None = None,
               chain: KinematicChain | None = None) -> ReachReport:
    """Run every trial of ``layout``; ``policy_factory(chain)`` builds a fresh policy per trial."""
    scenario = Scenario(scenario)
    layout = layout or TrialLayout()
    chain = chain or default_chain()
    profile = profile or pseudo_real_profile()
    rep = ReachReport(scenario.value)
    for scene, q0, rng in trial_scenes(layout, scenario, profile, chain):
        rep.results.append(reach_once(policy_factory(chain), chain, scene, q0,
                                      moving=scenario is Scenario.MOVING_TARGET, rng=rng))
    return rep
