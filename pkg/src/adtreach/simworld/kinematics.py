"""Seven-revolute arm: forward kinematics, position Jacobian, damped least-squares IK.

Lengths are in cm-analog workspace units. In the all-zero configuration the
chain lies straight along +x (plus a small downward tool offset), so the
end-effector sits at the sum of the link offsets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class JointLimitError(ValueError):
    def __init__(self, joint: int, value: float, lo: float, hi: float):
        super().__init__(f"joint {joint} = {value:.6g} outside limits [{lo:.6g}, {hi:.6g}]")
        self.joint = joint


class Unreachable(RuntimeError):
    pass


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass(frozen=True)
class KinematicChain:
    """Joint ``i`` sits at ``offsets[i]`` (expressed in the frame after joint
    ``i-1``) and rotates about ``axes[i]``; the tool point is ``tool`` in the
    last frame."""

    axes: np.ndarray
    offsets: np.ndarray
    tool: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    reference: np.ndarray
    name: str = "desk7"

    @property
    def dof(self) -> int:
        return len(self.axes)

    @property
    def reach(self) -> float:
        """Upper bound on the distance from joint 2 to the tool point."""
        return float(sum(np.linalg.norm(o) for o in self.offsets[2:]) + np.linalg.norm(self.tool))

    @property
    def shoulder(self) -> np.ndarray:
        return self.offsets[0] + self.offsets[1]

    def check_limits(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dof,):
            raise ValueError(f"expected {self.dof} joint angles, got shape {q.shape}")
        for i, (v, lo, hi) in enumerate(zip(q, self.lower, self.upper)):
            if not lo <= v <= hi:
                raise JointLimitError(i, v, lo, hi)
        return q

    def normalize_q(self, q):
        return (np.asarray(q) - self.lower) / (self.upper - self.lower)

    def denormalize_q(self, qn):
        return self.lower + np.asarray(qn) * (self.upper - self.lower)

    def to_dict(self) -> dict:
        return {k: (getattr(self, k).tolist() if k != "name" else self.name)
                for k in ("axes", "offsets", "tool", "lower", "upper", "reference", "name")}


def default_chain() -> KinematicChain:
    """Desk arm whose reach covers the 50 x 60 operational area on the table.

    Base column 30 high, 5 shoulder offset, upper arm 40, forearm 40,
    tool 12 (with a 4 drop so the wrist roll moves the tool point).
    """
    X, Y, Z = np.eye(3)
    return KinematicChain(
        axes=np.array([Z, Y, X, Y, X, Y, X]),
        offsets=np.array([[0, 0, 30], [5, 0, 0], [0, 0, 0], [40, 0, 0],
                          [0, 0, 0], [40, 0, 0], [0, 0, 0]], dtype=float),
        tool=np.array([12.0, 0.0, -4.0]),
        lower=np.array([-1.7, -1.0, -3.0, -0.1, -3.0, -1.6, -3.0]),
        upper=np.array([1.7, 2.0, 3.0, 2.6, 3.0, 2.0, 3.0]),
        reference=np.array([0.0, -0.8, 0.0, 1.7, 0.0, 0.9, 0.0]),
    )


def joint_frames(chain: KinematicChain, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World joint positions (7,3), world joint axes (7,3) and the tool point."""
    R = np.eye(3)
    p = np.zeros(3)
    pos = np.empty((chain.dof, 3))
    ax = np.empty((chain.dof, 3))
    for i in range(chain.dof):
        p = p + R @ chain.offsets[i]
        pos[i] = p
        ax[i] = R @ chain.axes[i]
        R = R @ _axis_rotation(chain.axes[i], q[i])
    return pos, ax, p + R @ chain.tool


def forward_kinematics(chain: KinematicChain, q) -> np.ndarray:
    """End-effector (tool bottom-centre) position for joint angles ``q``."""
    q = chain.check_limits(q)
    return joint_frames(chain, q)[2]


def position_jacobian(chain: KinematicChain, q) -> np.ndarray:
    pos, ax, x = joint_frames(chain, np.asarray(q, dtype=np.float64))
    return np.cross(ax, x - pos).T  # (3, dof)


def inverse_kinematics(chain: KinematicChain, target, q0, *, damping: float = 1e-3,
                       max_iter: int = 200, tol: float = 1e-3) -> np.ndarray:
    """Damped least-squares IK from seed ``q0``; iterates stay inside joint limits.

    Returns ``q0`` itself (copied) when it already reaches ``target``.
    Raises :class:`Unreachable` when the target is beyond the arm's reach or
    the iteration does not converge.
    """
    target = np.asarray(target, dtype=np.float64)
    q = chain.check_limits(q0).copy()
    if np.linalg.norm(target - chain.shoulder) > chain.reach:
        raise Unreachable(f"target {target.tolist()} beyond reach {chain.reach:.1f}")
    eye = np.eye(3)
    for _ in range(max_iter + 1):
        _, _, x = joint_frames(chain, q)
        err = target - x
        if np.linalg.norm(err) < tol:
            return q
        J = position_jacobian(chain, q)
        dq = J.T @ np.linalg.solve(J @ J.T + damping * eye, err)
        q = np.clip(q + dq, chain.lower, chain.upper)
    raise Unreachable(f"IK did not converge to {target.tolist()} in {max_iter} iterations "
                      f"(residual {np.linalg.norm(err):.3g})")
