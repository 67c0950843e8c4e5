"""PI regulation of the discriminator loss through the adversarial weight."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

GAMMA_MAX = 0.02
SIGMOID_SLOPE = 50.0


@dataclass
class PIState:
    setpoint: float = 0.28
    kp: float = 0.4
    ki: float = 0.008
    i_limit: float = 0.1
    integral: float = 0.0
    gamma: float = GAMMA_MAX / 2
    u: float = 0.0
    error: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def gamma_of(u: float) -> float:
    # written as a logistic of -50u to stay finite for large |u|
    z = -SIGMOID_SLOPE * u
    if z > 0:
        ez = math.exp(-z)
        return GAMMA_MAX * ez / (1.0 + ez)
    return GAMMA_MAX / (1.0 + math.exp(z))


def pi_update(state: PIState, measured: float) -> float:
    """Advance the controller with one loss measurement; returns the new gamma."""
    if not math.isfinite(measured):
        raise ValueError(f"non-finite loss measurement {measured}")
    e = state.setpoint - measured
    state.integral = min(max(state.integral + e, -state.i_limit), state.i_limit)
    state.u = state.kp * e + state.ki * state.integral
    state.error = e
    state.gamma = gamma_of(state.u)
    return state.gamma
