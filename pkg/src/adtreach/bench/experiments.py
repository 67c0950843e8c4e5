"""Reference pipelines behind the command line and the acceptance suite.

Every artifact is cached under a content hash of the spec that produced
it, and specs embed the specs of their inputs, so a cached result is only
reused when nothing upstream changed.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..policynet import (CombinedNetwork, Module, desk_perception, init_control, init_perception,
                         load_module, save_module)
from ..simworld.datasets import (Dataset, load_dataset, make_control_dataset,
                                 make_perception_dataset, save_dataset)
from ..simworld.scene import Domain, Scenario, profile_for
from ..transfer import (AdtConfig, ControlConfig, SupervisedConfig, Variant, adapt_adt,
                        adapt_supervised, e2e_defaults, finetune_e2e, pretrain_perception,
                        train_control, velocity_labels)
from ..transfer.train import TrainLog
from .metrics import (TEST_ROLE, TrialLayout, assert_disjoint, combined_policy, control_policy,
                      eval_reach, evaluate_perception)

log = logging.getLogger(__name__)

ENV_HOME = "ADT_REACH_HOME"


def default_home() -> Path:
    return Path(os.environ.get(ENV_HOME) or Path.home() / ".adt_reach")


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical(obj).encode()).hexdigest()[:16]


# -- dataset specs -----------------------------------------------------------------

def perception_spec(domain, n: int, *, labeled: bool = True, seed: int = 0, resolution: int = 64,
                    role: str | None = None, scenario: str | None = None) -> dict:
    return {"kind": "perception", "domain": Domain(domain).value, "n": int(n),
            "labeled": bool(labeled), "seed": int(seed), "resolution": int(resolution),
            "role": role, "scenario": None if scenario is None else Scenario(scenario).value}


def control_spec(trajectories: int, *, seed: int = 0, resolution: int = 64,
                 images: bool = True) -> dict:
    return {"kind": "control", "domain": Domain.SIM.value, "trajectories": int(trajectories),
            "seed": int(seed), "resolution": int(resolution), "images": bool(images),
            "ik_seed": "initial"}


def build_dataset(spec: dict, jobs: int = 1) -> Dataset:
    profile = profile_for(spec["domain"], spec["resolution"])
    if spec["kind"] == "perception":
        scen = None if spec.get("scenario") is None else Scenario(spec["scenario"])
        return make_perception_dataset(spec["seed"], profile, spec["n"], labeled=spec["labeled"],
                                       role=spec.get("role"), scenario=scen, jobs=jobs)
    if spec["kind"] == "control":
        if Domain(spec["domain"]) is not Domain.SIM:
            raise ValueError("control datasets are collected in simulation only")
        return make_control_dataset(spec["seed"], profile, spec["trajectories"],
                                    render_images=spec["images"])
    raise ValueError(f"unknown dataset kind {spec['kind']!r}")


# -- cache -------------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


class Store:
    """Content-addressed cache of datasets, modules and result records."""

    def __init__(self, root=None, jobs: int = 1):
        self.root = Path(root) if root is not None else default_home() / "cache"
        self.jobs = jobs
        self._datasets: dict[str, Dataset] = {}
        self._nested: list[float] = []

    def _charge(self, seconds: float) -> None:
        if self._nested:
            self._nested[-1] += seconds

    def path(self, kind: str, spec) -> Path:
        return self.root / kind / config_hash(spec)

    def dataset(self, spec: dict) -> Dataset:
        key = config_hash(spec)
        if key in self._datasets:
            return self._datasets[key]
        d = self.path("data", spec)
        if (d / "manifest.json").exists():
            ds = load_dataset(d)
        else:
            t0 = time.perf_counter()
            ds = build_dataset(spec, self.jobs)
            save_dataset(ds, d)
            self._charge(time.perf_counter() - t0)
            _atomic_write(d / "spec.json", canonical(spec) + "\n")
        self._datasets[key] = ds
        return ds

    def modules(self, spec: dict, build) -> tuple[list[Module], dict]:
        """``build() -> (modules, extra)``; ``extra`` is a JSON-able record."""
        d = self.path("model", spec)
        done = d / "extra.json"
        if done.exists():
            extra = json.loads(done.read_text())
            return [load_module(d / f"m{i}.ckpt")[0] for i in range(extra["n_modules"])], extra["extra"]
        t0 = time.perf_counter()
        self._nested.append(0.0)
        try:
            mods, extra = build()
        finally:
            inner = self._nested.pop()
        elapsed = time.perf_counter() - t0
        self._charge(elapsed)
        seconds = elapsed - inner
        d.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(mods):
            save_module(d / f"m{i}.ckpt", m)
        _atomic_write(d / "spec.json", canonical(spec) + "\n")
        _atomic_write(d / "timing.json", canonical({"seconds": seconds}) + "\n")
        _atomic_write(done, canonical({"n_modules": len(mods), "extra": extra}) + "\n")
        return mods, extra

    def build_seconds(self, spec: dict) -> float:
        """Wall time of the build that produced the cached modules, upstream builds excluded."""
        return float(json.loads((self.path("model", spec) / "timing.json").read_text())["seconds"])

    def result(self, spec: dict, build) -> dict:
        p = self.path("result", spec).with_suffix(".json")
        if p.exists():
            return json.loads(p.read_text())["value"]
        value = build()
        p.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(p, json.dumps({"spec": spec, "value": value}, indent=1, sort_keys=True) + "\n")
        return value


# -- desk-scale plan ---------------------------------------------------------------

@dataclass
class DeskPlan:
    """Dataset sizes and training budgets of the desk-scale reproduction."""
    seed: int = 0
    resolution: int = 64
    n_sim: int = 3000
    n_sim_test: int = 144
    n_real: int = 186          # labeled pool; smaller budgets are prefixes
    n_unlabeled: int = 186
    n_test: int = 144
    trajectories: int = 2964       # control-module training set
    e2e_trajectories: int = 333    # image-velocity pairs for end-to-end fine-tuning
    pretrain: dict = field(default_factory=lambda: SupervisedConfig(epochs=30).to_dict())
    adapt: dict = field(default_factory=lambda: SupervisedConfig(epochs=20).to_dict())
    adt: dict = field(default_factory=lambda: AdtConfig().to_dict())
    control: dict = field(default_factory=lambda: ControlConfig().to_dict())
    e2e_steps: int = 1000
    layout: dict = field(default_factory=lambda: dataclasses.asdict(TrialLayout()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeskPlan":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"DeskPlan: unknown keys {sorted(unknown)}")
        return cls(**d)

    # dataset specs
    def sim_spec(self):
        return perception_spec(Domain.SIM, self.n_sim, seed=self.seed, resolution=self.resolution)

    def sim_test_spec(self):
        return perception_spec(Domain.SIM, self.n_sim_test, seed=self.seed,
                               resolution=self.resolution, role="perception/sim/test")

    def real_spec(self):
        return perception_spec(Domain.PSEUDO_REAL, self.n_real, seed=self.seed,
                               resolution=self.resolution)

    def unlabeled_spec(self):
        return perception_spec(Domain.PSEUDO_REAL, self.n_unlabeled, labeled=False, seed=self.seed,
                               resolution=self.resolution)

    def test_spec(self):
        return perception_spec(Domain.PSEUDO_REAL, self.n_test, seed=self.seed,
                               resolution=self.resolution, role=TEST_ROLE)

    def control_spec(self):
        return control_spec(self.e2e_trajectories, seed=self.seed, resolution=self.resolution)


@dataclass
class DeskData:
    sim: Dataset
    sim_test: Dataset
    real: Dataset
    unlabeled: Dataset
    test: Dataset
    control: Dataset


def desk_data(store: Store, plan: DeskPlan) -> DeskData:
    d = DeskData(store.dataset(plan.sim_spec()), store.dataset(plan.sim_test_spec()),
                 store.dataset(plan.real_spec()), store.dataset(plan.unlabeled_spec()),
                 store.dataset(plan.test_spec()), store.dataset(plan.control_spec()))
    assert_disjoint(d.test, d.sim, d.real, d.unlabeled)
    assert_disjoint(d.sim_test, d.sim)
    return d


def _log_record(tlog: TrainLog) -> dict:
    return {"columns": list(tlog.columns),
            "rows": [[r.get(c) for c in tlog.columns] for r in tlog.rows]}


def log_column(extra: dict, name: str) -> np.ndarray:
    k = extra["log"]["columns"].index(name)
    return np.array([np.nan if r[k] is None else r[k] for r in extra["log"]["rows"]], dtype=float)


def write_log_csv(extra: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(extra["log"]["columns"])
        for r in extra["log"]["rows"]:
            wr.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])


# -- recipes -----------------------------------------------------------------------

def pretrained_spec(plan: DeskPlan) -> dict:
    return {"recipe": "pretrain", "sim": plan.sim_spec(), "cfg": plan.pretrain, "seed": plan.seed,
            "arch": desk_perception(plan.resolution).name}


def pretrained(store: Store, plan: DeskPlan) -> Module:
    def build():
        sim = store.dataset(plan.sim_spec())
        m = init_perception(desk_perception(plan.resolution), np.random.default_rng([plan.seed, 7]))
        _, tlog = pretrain_perception(m, sim, SupervisedConfig.from_dict(plan.pretrain))
        return [m], {"log": _log_record(tlog)}
    return store.modules(pretrained_spec(plan), build)[0][0]


def supervised_spec(plan: DeskPlan, n_real: int, n_sim: int | None = None, seed: int = 0) -> dict:
    return {"recipe": "adapt-supervised", "source": pretrained_spec(plan), "real": plan.real_spec(),
            "n_real": int(n_real), "n_sim": n_sim, "cfg": dict(plan.adapt, seed=seed)}


def supervised(store: Store, plan: DeskPlan, n_real: int, n_sim: int | None = None,
               seed: int = 0) -> Module:
    def build():
        src = pretrained(store, plan)
        sim = store.dataset(plan.sim_spec())
        real = store.dataset(plan.real_spec()).take(n_real)
        m, tlog = adapt_supervised(src, sim if n_sim is None else sim.take(n_sim), real,
                                   SupervisedConfig.from_dict(dict(plan.adapt, seed=seed)))
        return [m], {"log": _log_record(tlog)}
    return store.modules(supervised_spec(plan, n_real, n_sim, seed), build)[0][0]


def adt_spec(plan: DeskPlan, n_labeled: int, n_unlabeled: int | None = None, seed: int = 0,
             **overrides) -> dict:
    n_unl = plan.n_unlabeled if n_unlabeled is None else n_unlabeled
    return {"recipe": "adapt-adt", "source": pretrained_spec(plan), "real": plan.real_spec(),
            "unlabeled": plan.unlabeled_spec(), "n_labeled": int(n_labeled),
            "n_unlabeled": int(n_unl), "cfg": dict(plan.adt, seed=seed, **overrides)}


def adt(store: Store, plan: DeskPlan, n_labeled: int, n_unlabeled: int | None = None,
        seed: int = 0, **overrides) -> tuple[Module, dict]:
    spec = adt_spec(plan, n_labeled, n_unlabeled, seed, **overrides)

    def build():
        src = pretrained(store, plan)
        sim = store.dataset(plan.sim_spec())
        lab = store.dataset(plan.real_spec()).take(n_labeled) if n_labeled else None
        unl = store.dataset(plan.unlabeled_spec()).take(spec["n_unlabeled"])
        r = adapt_adt(src, sim, lab, unl, AdtConfig.from_dict(spec["cfg"]))
        if r.source_checksum[0] != r.source_checksum[1]:
            raise RuntimeError("source encoder changed during adaptation")
        return [r.target, r.discriminator], {"log": _log_record(r.log), "pi": r.pi.to_dict(),
                                             "source_checksum": list(r.source_checksum)}
    (m, _), extra = store.modules(spec, build)
    return m, extra


def control_module_spec(plan: DeskPlan, trajectories: int) -> dict:
    return {"recipe": "train-control", "data": control_spec(plan.trajectories, seed=plan.seed,
                                                            resolution=plan.resolution, images=False),
            "trajectories": int(trajectories), "cfg": plan.control}


def control_module(store: Store, plan: DeskPlan, trajectories: int | None = None) -> Module:
    n = plan.trajectories if trajectories is None else trajectories
    spec = control_module_spec(plan, n)

    def build():
        data = store.dataset(spec["data"]).take(n)
        m = init_control(np.random.default_rng([plan.seed, 11]))
        _, tlog = train_control(m, data, ControlConfig.from_dict(plan.control))
        return [m], {"final_loss": float(np.mean(tlog.column("L_c")[-100:]))}
    return store.modules(spec, build)[0][0]


def e2e_spec(plan: DeskPlan, variant: Variant | str, seed: int = 0) -> dict:
    v = Variant(variant)
    base = adt_spec(plan, plan.n_real // 2) if v is Variant.WEIGHTED_ADT else supervised_spec(plan, plan.n_real)
    cfg = e2e_defaults(v, steps=plan.e2e_steps, seed=seed).to_dict()
    return {"recipe": "finetune-e2e", "perception": base, "control": control_module_spec(plan, plan.trajectories),
            "control_data": plan.control_spec(), "cfg": cfg}


def base_network(store: Store, plan: DeskPlan, adversarial: bool = False) -> CombinedNetwork:
    """Directly connected network: adapted perception + trained control."""
    p = adt(store, plan, plan.n_real // 2)[0] if adversarial else supervised(store, plan, plan.n_real)
    return CombinedNetwork(p, control_module(store, plan))


def e2e(store: Store, plan: DeskPlan, variant: Variant | str, seed: int = 0) -> CombinedNetwork:
    v = Variant(variant)
    spec = e2e_spec(plan, v, seed)

    def build():
        net = base_network(store, plan, adversarial=v is Variant.WEIGHTED_ADT)
        ctl = store.dataset(plan.control_spec())
        real = store.dataset(plan.real_spec())
        if v is Variant.WEIGHTED_ADT:
            real = real.take(plan.n_real // 2)
        kw = dict(control_sim=ctl, real_labeled=real, sim_labeled=store.dataset(plan.sim_spec()),
                  real_unlabeled=store.dataset(plan.unlabeled_spec()))
        if v is Variant.NAIVE:
            kw["real_velocity"] = velocity_labels(real, seed=seed)
        out, tlog = finetune_e2e(net, e2e_defaults(v, steps=plan.e2e_steps, seed=seed), **kw)
        return [out.perception, out.control], {"log": _log_record(tlog)}
    (p, c), _ = store.modules(spec, build)
    return CombinedNetwork(p, c)


# -- evaluation --------------------------------------------------------------------

def perception_median(module: Module, test: Dataset) -> float:
    return float(np.median(evaluate_perception(module, test)))


def reach_summary(rep) -> dict:
    st = rep.stats
    return {"scenario": rep.scenario, "success_rate": rep.success_rate, "median": st.median,
            "q1": st.q1, "q3": st.q3, "n": st.n, "distances": rep.distances.tolist()}


def reach_control(plan: DeskPlan, control: Module, scenario=Scenario.CLUTTER_SEEN) -> dict:
    layout = TrialLayout(**plan.layout)
    return reach_summary(eval_reach(lambda ch: control_policy(control, ch), scenario, layout,
                                    profile_for(Domain.PSEUDO_REAL, plan.resolution)))


def reach_network(plan: DeskPlan, net: CombinedNetwork, scenario=Scenario.CLUTTER_NOVEL) -> dict:
    layout = TrialLayout(**plan.layout)
    return reach_summary(eval_reach(lambda ch: combined_policy(net, ch), scenario, layout,
                                    profile_for(Domain.PSEUDO_REAL, plan.resolution)))
