"""Hyperparameter records for every training procedure.

Each record round-trips through a plain dict so run configs can be stored
as JSON next to their outputs.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum


class Variant(str, Enum):
    NAIVE = "naive"
    WEIGHTED_SUP = "weighted"
    WEIGHTED_ADT = "weighted-adt"


class _Record:
    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Enum) else (list(v) if isinstance(v, tuple) else v)
        return out

    @classmethod
    def from_dict(cls, d: dict):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
        kw = dict(d)
        if "variant" in kw:
            kw["variant"] = Variant(kw["variant"])
        if kw.get("disc_hidden") is not None:
            kw["disc_hidden"] = tuple(kw["disc_hidden"])
        return cls(**kw)


@dataclass
class SupervisedConfig(_Record):
    """Pretraining and supervised adaptation.

    An adaptation epoch is one pass over the labeled real set at the real
    share of each batch.
    """
    lr: float = 0.01
    batch: int = 32
    epochs: int = 30
    real_fraction: float = 0.875
    steps: int | None = None      # overrides epochs when set
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1 or self.lr <= 0:
            raise ValueError("batch and lr must be positive")
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ValueError("real_fraction must be in [0, 1]")


def adapt_defaults(**kw) -> SupervisedConfig:
    return SupervisedConfig(**{"epochs": 20, **kw})


@dataclass
class AdtConfig(_Record):
    lr: float = 0.001
    sim_batch: int = 32
    unlabeled_batch: int = 32
    labeled_batch: int = 32
    steps: int = 2000
    use_pi: bool = True
    fixed_gamma: float = 1.0
    setpoint: float = 0.28
    kp: float = 0.4
    ki: float = 0.008
    i_limit: float = 0.1
    measure: str = "pre"          # L_D fed to the controller: before or after the D update
    disc_net: int = 4
    disc_hidden: tuple[int, ...] | None = None
    n_labeled: int | None = None  # budgets; checked against the datasets when given
    n_unlabeled: int | None = None
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.measure not in ("pre", "post"):
            raise ValueError("measure must be 'pre' or 'post'")
        if min(self.sim_batch, self.unlabeled_batch, self.labeled_batch) < 1:
            raise ValueError("batch sizes must be positive")
        if self.steps < 0 or self.lr <= 0:
            raise ValueError("steps must be >= 0 and lr > 0")


@dataclass
class ControlConfig(_Record):
    batch: int = 64
    lr_start: float = 0.01
    lr_end: float = 0.001
    steps: int = 100000
    seed: int = 0

    def lr_at(self, k: int) -> float:
        if self.steps <= 1:
            return self.lr_start
        return self.lr_start * (self.lr_end / self.lr_start) ** (k / (self.steps - 1))


@dataclass
class E2EConfig(_Record):
    variant: Variant = Variant.WEIGHTED_SUP
    beta: float = 0.9
    lr: float = 0.01
    steps: int = 1000
    lc_batch: int = 8
    lp_batch: int = 64
    real_fraction: float = 0.875
    adversarial: bool = False
    sim_batch_d: int = 32
    unlabeled_batch_d: int = 16
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ValueError("real_fraction must be in [0, 1]")


def e2e_defaults(variant: Variant | str, **kw) -> E2EConfig:
    """Batch composition of the three fine-tuning recipes."""
    v = Variant(variant)
    base = {
        Variant.NAIVE: dict(lr=0.01, lc_batch=64, lp_batch=0, real_fraction=0.875),
        Variant.WEIGHTED_SUP: dict(lr=0.01, lc_batch=8, lp_batch=64, real_fraction=0.875),
        Variant.WEIGHTED_ADT: dict(lr=0.001, lc_batch=16, lp_batch=32, real_fraction=0.5,
                                   adversarial=True),
    }[v]
    return E2EConfig(variant=v, **{**base, **kw})
