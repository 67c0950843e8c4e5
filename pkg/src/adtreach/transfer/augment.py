"""Brightness and white-balance augmentation."""
from __future__ import annotations

import numpy as np

from ..simworld.scene import Domain

BRIGHTNESS = {Domain.SIM: 0.8, Domain.PSEUDO_REAL: 0.4}
WHITE_BALANCE = 0.025


def apply_scales(images: np.ndarray, brightness, white_balance) -> np.ndarray:
    """Scale intensities in [0, 1] space and clamp back to [-1, 1].

    ``brightness`` is one factor per image, ``white_balance`` one per image and channel.
    """
    k = np.asarray(brightness, float)[..., None] * np.asarray(white_balance, float)
    k = k.reshape(k.shape[:1] + (1,) * (images.ndim - 2) + (k.shape[-1],))
    if np.all(k == 1.0):
        return images.copy()
    return np.clip((images + 1.0) * k - 1.0, -1.0, 1.0)


def augment(images: np.ndarray, domain: Domain, rng: np.random.Generator) -> np.ndarray:
    """Random brightness (+-80% SIM, +-40% PSEUDO_REAL) and per-channel white balance (+-2.5%)."""
    single = images.ndim == 3
    x = images[None] if single else images
    m = x.shape[0]
    b = BRIGHTNESS[Domain(domain)]
    bright = rng.uniform(1 - b, 1 + b, m)
    wb = rng.uniform(1 - WHITE_BALANCE, 1 + WHITE_BALANCE, (m, x.shape[-1]))
    out = apply_scales(x, bright, wb)
    return out[0] if single else out
