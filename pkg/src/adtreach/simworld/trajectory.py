"""Reaching trajectories: IK goal configuration plus a clamped P controller at 20 Hz."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .kinematics import KinematicChain, Unreachable, forward_kinematics, inverse_kinematics
from .scene import RenderProfile, Scene, normalize_target, randomize_scene

log = logging.getLogger(__name__)

DT = 1.0 / 20.0
P_GAIN = 2.0
V_MAX = 0.5
TIMEOUT = 10.0
JOINT_TOL = 1e-3
INIT_SIGMA = 0.1


@dataclass
class TrajectoryFrame:
    image: np.ndarray | None     # uint8 H x W x 3, shared by all frames of a trajectory
    target: np.ndarray           # x*, normalized
    theta: np.ndarray            # [x*, q], normalized (10,)
    velocity: np.ndarray         # v, rad/s (7,)
    q: np.ndarray                # raw joint angles, rad


@dataclass
class Trajectory:
    scene: Scene
    q_goal: np.ndarray
    frames: list[TrajectoryFrame]
    image: np.ndarray | None


def p_control_step(q, q_goal, gain: float = P_GAIN, dt: float = DT, v_max: float = V_MAX):
    """Joint velocity command ``clamp(gain * (q_goal - q), +-v_max)``.

    ``dt`` is accepted for interface symmetry with the rollout; the command
    itself does not depend on it.
    """
    del dt
    return np.clip(gain * (np.asarray(q_goal) - np.asarray(q)), -v_max, v_max)


def sample_initial_q(rng, chain: KinematicChain, sigma: float = INIT_SIGMA) -> np.ndarray:
    q = chain.reference + sigma * rng.standard_normal(chain.dof)
    return np.clip(q, chain.lower, chain.upper)


def rollout_p_control(chain, q0, q_goal, *, gain=P_GAIN, dt=DT, v_max=V_MAX,
                      timeout=TIMEOUT, tol=JOINT_TOL):
    """Joint states and commands until ``max|q_goal - q| < tol`` or timeout."""
    qs, vs = [], []
    q = np.asarray(q0, dtype=np.float64).copy()
    for _ in range(int(round(timeout / dt))):
        if np.max(np.abs(q_goal - q)) < tol:
            break
        v = p_control_step(q, q_goal, gain, dt, v_max)
        qs.append(q.copy())
        vs.append(v)
        q = np.clip(q + v * dt, chain.lower, chain.upper)
    return qs, vs, q


def generate_trajectory(rng: np.random.Generator, chain: KinematicChain, profile: RenderProfile,
                        *, render_image: bool = True, gain: float = P_GAIN, dt: float = DT,
                        v_max: float = V_MAX, timeout: float = TIMEOUT,
                        init_sigma: float = INIT_SIGMA, max_resample: int = 20) -> Trajectory:
    """One recorded reach towards a randomly placed target.

    Targets whose IK fails are logged and resampled. The arm is not drawn,
    so every frame of the trajectory shares one image.
    """
    from .render import render, to_uint8

    for attempt in range(max_resample):
        scene = randomize_scene(rng, profile)
        try:
            q_goal, qs, vs = reach_target(rng, chain, scene.target_top, gain=gain, dt=dt,
                                          v_max=v_max, timeout=timeout, init_sigma=init_sigma)
        except Unreachable as exc:
            log.info("trajectory resampled (attempt %d): %s", attempt, exc)
            continue
        image = to_uint8(render(scene)) if render_image else None
        xn = normalize_target(scene.target_top)
        frames = [TrajectoryFrame(image, xn, np.concatenate([xn, chain.normalize_q(q)]), v, q)
                  for q, v in zip(qs, vs)]
        return Trajectory(scene, q_goal, frames, image)
    raise Unreachable(f"no reachable target after {max_resample} draws")


def reach_target(rng, chain: KinematicChain, x_star, *, gain=P_GAIN, dt=DT, v_max=V_MAX,
                 timeout=TIMEOUT, init_sigma=INIT_SIGMA):
    """Random initial configuration, IK goal for ``x_star`` and the recorded P-control rollout.

    The IK is seeded from the initial configuration, as an iterative solver
    started from the arm's current pose would be.
    """
    q0 = sample_initial_q(rng, chain, init_sigma)
    q_goal = inverse_kinematics(chain, x_star, q0)
    qs, vs, _ = rollout_p_control(chain, q0, q_goal, gain=gain, dt=dt, v_max=v_max,
                                  timeout=timeout)
    return q_goal, qs, vs


def final_distance(chain: KinematicChain, q, x_star) -> float:
    return float(np.linalg.norm(forward_kinematics(chain, q) - x_star))


__all__ = ["DT", "P_GAIN", "V_MAX", "TIMEOUT", "Trajectory", "TrajectoryFrame",
           "final_distance", "generate_trajectory", "p_control_step", "reach_target", "rollout_p_control",
           "sample_initial_q"]
