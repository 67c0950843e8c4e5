"""adt-reach: dataset generation, training, evaluation and report emission.

Every subcommand resolves one config (built-in defaults, then ``--config``
file, then flags), validates it against a schema before doing any work,
and writes it as ``config.json`` next to its outputs. Without ``--out`` the
output directory is ``$ADT_REACH_HOME/<command>/<run id>``, the run id being
a hash of the resolved config.

Exit codes: 0 success, 2 invalid config or arguments, 3 missing input,
4 checkpoint/config architecture mismatch, 5 training diverged.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from .bench import (ReportBundle, TrialLayout, box_stats, combined_policy,
                    control_policy, emit_report, error_map, eval_reach, evaluate_perception,
                    pseudo_inverse_policy)
from .bench.experiments import (build_dataset, config_hash, control_spec, default_home,
                                perception_spec)
from .policynet import (ArchitectureMismatch, CombinedNetwork, desk_perception, init_control,
                        init_perception, load_module, paper_perception, save_module)
from .simworld import load_dataset, save_dataset
from .simworld.scene import Domain, Scenario, profile_for
from .transfer import (AdtConfig, ControlConfig, SupervisedConfig, TrainingDiverged, Variant,
                       adapt_adt, adapt_supervised, e2e_defaults, finetune_e2e,
                       pretrain_perception, train_control, velocity_labels)

log = logging.getLogger("adtreach")

EXIT_CONFIG, EXIT_MISSING, EXIT_ARCH, EXIT_DIVERGED = 2, 3, 4, 5

PROCEDURES = ("pretrain", "adapt-supervised", "adapt-adt", "adapt-confusion", "train-control",
              "finetune-e2e")
SCENARIOS = {s.value.lower().replace("_", "-"): s for s in Scenario}
DOMAINS = {"sim": Domain.SIM, "pseudo-real": Domain.PSEUDO_REAL}


class ConfigError(ValueError):
    pass


class MissingInput(FileNotFoundError):
    pass


# -- schemas -----------------------------------------------------------------------

_STR = {"type": ["string", "null"]}
_POS = {"type": ["integer", "null"], "minimum": 1}
_NONNEG = {"type": ["integer", "null"], "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


SCHEMAS = {
    "gen": _obj({
        "kind": {"enum": ["perception", "control"]},
        "domain": {"enum": list(DOMAINS)},
        "n": _POS, "trajectories": _POS,
        "labeled": {"type": "boolean"},
        "scenario": {"enum": [None, *SCENARIOS]},
        "role": _STR,
        "seed": {"type": "integer", "minimum": 0},
        "resolution": {"type": "integer", "minimum": 8},
        "images": {"type": "boolean"},
        "out": _STR,
    }, ["kind", "domain", "seed", "resolution"]),
    "train": _obj({
        "procedure": {"enum": list(PROCEDURES)},
        "variant": {"enum": [v.value for v in Variant]},
        "arch": {"enum": ["desk", "paper"]},
        "resolution": {"type": "integer", "minimum": 8},
        "data": _obj({k: _STR for k in ("sim", "real", "unlabeled", "control", "velocity")}),
        "init": _STR, "control_init": _STR,
        "budgets": _obj({"sim": _POS, "labeled": _NONNEG, "unlabeled": _POS, "trajectories": _POS}),
        "hyper": {"type": "object"},
        "out": _STR,
    }, ["procedure"]),
    "eval": _obj({
        "perception": _STR, "control": _STR,
        "networks": {"type": "object", "additionalProperties": {
            "type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2}},
        "pseudo_inverse": {"type": "boolean"},
        "test": _STR,
        "scenario": {"enum": [None, *SCENARIOS]},
        "layout": _obj({"n_targets": {"type": "integer", "minimum": 1},
                        "trials_per_target": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer", "minimum": 0}}),
        "grid": {"anyOf": [{"type": "null"}, _obj({
            "kind": {"enum": ["supervised", "adt"]},
            "source": _STR, "sim": _STR, "real": _STR, "unlabeled": _STR, "test": _STR,
            "rows": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            "cols": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            "hyper": {"type": "object"},
        }, ["kind", "source", "sim", "real", "test", "rows", "cols"])]},
        "arch": {"enum": ["desk", "paper"]},
        "resolution": {"type": "integer", "minimum": 8},
        "out": _STR,
    }),
    "report": _obj({"results": _STR, "out": _STR}, ["results"]),
}

DEFAULTS = {
    "gen": {"kind": "perception", "domain": "sim", "n": None, "trajectories": None, "labeled": True,
            "scenario": None, "role": None, "seed": 0, "resolution": 64, "images": True, "out": None},
    "train": {"procedure": None, "variant": "weighted", "arch": "desk", "resolution": 64,
              "data": {}, "init": None, "control_init": None, "budgets": {}, "hyper": {}, "out": None},
    "eval": {"perception": None, "control": None, "networks": {}, "pseudo_inverse": False,
             "test": None, "scenario": None, "layout": {}, "grid": None, "arch": "desk",
             "resolution": 64, "out": None},
    "report": {"results": None, "out": None},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _parse_set(item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key, val


def resolve_config(command: str, file_cfg: dict | None, flags: dict) -> dict:
    """Defaults, then the config file, then flags; validated against the schema."""
    cfg = _merge(DEFAULTS[command], file_cfg or {})
    for key, val in flags.items():
        _set_path(cfg, key, val)
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid {command} config at {where}: {exc.message}") from None
    return cfg


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None


def run_id(cfg: dict) -> str:
    return config_hash(cfg)


def _out_dir(command: str, cfg: dict, home: Path) -> Path:
    if cfg.get("out"):
        return Path(cfg["out"])
    return home / command / run_id({k: v for k, v in cfg.items() if k != "out"})


def _echo_config(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _need(path, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"{what} not found: {p}")
    return p


def _dataset(path, what):
    return load_dataset(_need(path, what))


def _module(path, what, expect=None):
    return load_module(_need(path, what), expect)[0]


def _record(cls, hyper: dict, **fixed):
    try:
        return cls.from_dict({**fixed, **hyper})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid hyperparameters for {cls.__name__}: {exc}") from None


def _perception_arch(cfg):
    return (desk_perception if cfg["arch"] == "desk" else paper_perception)(cfg["resolution"])


# -- gen ---------------------------------------------------------------------------

def cmd_gen(cfg: dict, home: Path, jobs: int = 1) -> Path:
    dom = DOMAINS[cfg["domain"]]
    if cfg["kind"] == "perception":
        if not cfg["n"]:
            raise ConfigError("perception datasets need --n")
        spec = perception_spec(dom, cfg["n"], labeled=cfg["labeled"], seed=cfg["seed"],
                               resolution=cfg["resolution"], role=cfg["role"],
                               scenario=SCENARIOS[cfg["scenario"]] if cfg["scenario"] else None)
    else:
        if not cfg["trajectories"]:
            raise ConfigError("control datasets need --trajectories")
        if dom is not Domain.SIM:
            raise ConfigError("control datasets are collected in simulation only")
        spec = control_spec(cfg["trajectories"], seed=cfg["seed"], resolution=cfg["resolution"],
                            images=cfg["images"])
    out = _out_dir("gen", cfg, home)
    ds = build_dataset(spec, jobs)
    save_dataset(ds, out)
    _echo_config(out, cfg)
    log.info("wrote %d samples to %s", len(ds), out)
    return out


# -- train -------------------------------------------------------------------------

def _budget(ds, n, what):
    if n is None or ds is None:
        return ds
    have = ds.meta.get("trajectories", len(ds)) if ds.kind == "control" else len(ds)
    if n > have:
        raise ConfigError(f"{what} budget {n} exceeds the {have} available")
    return ds.take(n)


def cmd_train(cfg: dict, home: Path, jobs: int = 1) -> Path:
    proc, data, bud, hyper = cfg["procedure"], cfg["data"], cfg["budgets"], cfg["hyper"]
    out = _out_dir("train", cfg, home)
    arch = _perception_arch(cfg)
    logs = {}
    if proc == "pretrain":
        rec = _record(SupervisedConfig, hyper)
        sim = _budget(_dataset(data.get("sim"), "sim dataset"), bud.get("sim"), "sim")
        m = (_module(cfg["init"], "initial checkpoint", arch) if cfg["init"] else
             init_perception(arch, np.random.default_rng([rec.seed, 7])))
        _, logs["log"] = pretrain_perception(m, sim, rec)
        modules = {"model": m}
    elif proc == "adapt-supervised":
        rec = _record(SupervisedConfig, hyper, epochs=20)
        src = _module(cfg["init"], "source checkpoint", arch)
        sim = _budget(_dataset(data.get("sim"), "sim dataset"), bud.get("sim"), "sim")
        real = _budget(_dataset(data.get("real"), "real dataset"), bud.get("labeled"), "labeled")
        m, logs["log"] = adapt_supervised(src, sim, real, rec)
        modules = {"model": m}
    elif proc in ("adapt-adt", "adapt-confusion"):
        rec = _record(AdtConfig, hyper)
        src = _module(cfg["init"], "source checkpoint", arch)
        sim = _budget(_dataset(data.get("sim"), "sim dataset"), bud.get("sim"), "sim")
        unl = _budget(_dataset(data.get("unlabeled"), "unlabeled dataset"), bud.get("unlabeled"),
                      "unlabeled")
        lab = None
        if bud.get("labeled", None) != 0:
            lab = _budget(_dataset(data.get("real"), "real dataset"), bud.get("labeled"), "labeled")
        r = adapt_adt(src, sim, lab, unl, rec, shared_encoder=proc == "adapt-confusion")
        logs["log"] = r.log
        modules = {"model": r.target, "discriminator": r.discriminator}
    elif proc == "train-control":
        rec = _record(ControlConfig, hyper)
        ctl = _budget(_dataset(data.get("control"), "control dataset"), bud.get("trajectories"),
                      "trajectories")
        m = (_module(cfg["control_init"], "control checkpoint") if cfg["control_init"] else
             init_control(np.random.default_rng([rec.seed, 11])))
        _, logs["log"] = train_control(m, ctl, rec)
        modules = {"model": m}
    else:
        v = Variant(cfg["variant"])
        try:
            rec = e2e_defaults(v, **hyper)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid hyperparameters for E2EConfig: {exc}") from None
        net = CombinedNetwork(_module(cfg["init"], "perception checkpoint", arch),
                              _module(cfg["control_init"], "control checkpoint"))
        ctl = _budget(_dataset(data.get("control"), "control dataset"), bud.get("trajectories"),
                      "trajectories")
        kw = {"control_sim": ctl}
        if data.get("real"):
            kw["real_labeled"] = _budget(_dataset(data["real"], "real dataset"), bud.get("labeled"),
                                         "labeled")
        if data.get("unlabeled"):
            kw["real_unlabeled"] = _budget(_dataset(data["unlabeled"], "unlabeled dataset"),
                                           bud.get("unlabeled"), "unlabeled")
        if data.get("sim"):
            kw["sim_labeled"] = _dataset(data["sim"], "sim dataset")
        if v is Variant.NAIVE:
            if data.get("velocity"):
                kw["real_velocity"] = _dataset(data["velocity"], "velocity dataset")
            elif "real_labeled" in kw:
                kw["real_velocity"] = velocity_labels(kw["real_labeled"], seed=rec.seed)
        try:
            net_out, logs["log"] = finetune_e2e(net, rec, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        modules = {"perception": net_out.perception, "control": net_out.control}
    out.mkdir(parents=True, exist_ok=True)
    for name, m in modules.items():
        save_module(out / f"{name}.ckpt", m, {"procedure": proc, "run_id": run_id(cfg)})
    logs["log"].write_csv(out / "log.csv")
    _echo_config(out, cfg)
    return out


# -- eval --------------------------------------------------------------------------

def _grid_cell(args):
    kind, source, sim, real, unl, hyper, r, c = args
    if kind == "supervised":
        m, _ = adapt_supervised(source, sim.take(r), real.take(c),
                                SupervisedConfig.from_dict({"epochs": 20, **hyper}))
        return m
    lab = real.take(c) if c else None
    return adapt_adt(source, sim, lab, unl.take(r), AdtConfig.from_dict(hyper)).target


def _eval_grid(cfg, grid, jobs):
    arch = _perception_arch(cfg)
    source = _module(grid["source"], "source checkpoint", arch)
    sim = _dataset(grid["sim"], "sim dataset")
    real = _dataset(grid["real"], "real dataset")
    test = _dataset(grid["test"], "test dataset")
    unl = _dataset(grid["unlabeled"], "unlabeled dataset") if grid["kind"] == "adt" else None
    hyper = grid.get("hyper", {})
    _record(SupervisedConfig if grid["kind"] == "supervised" else AdtConfig, hyper)
    rows, cols = grid["rows"], grid["cols"]
    if grid["kind"] == "supervised" and 0 in cols:
        raise ConfigError("a supervised grid needs real budgets >= 1")
    cells = [(grid["kind"], source, sim, real, unl, hyper, r, c) for r in rows for c in cols]
    if jobs > 1:
        # cells train in workers; failures re-raise in adapt() and become NaN cells
        with ProcessPoolExecutor(jobs) as pool:
            futures = {(a[-2], a[-1]): pool.submit(_grid_cell, a) for a in cells}

        def adapt(r, c):
            return futures[(r, c)].result()
    else:
        def adapt(r, c):
            return _grid_cell((grid["kind"], source, sim, real, unl, hyper, r, c))
    labels = ("sim", "real") if grid["kind"] == "supervised" else ("unlabeled", "labeled")
    return error_map(adapt, rows, cols, lambda m: evaluate_perception(m, test),
                     name=grid["kind"], row_label=labels[0], col_label=labels[1])


def cmd_eval(cfg: dict, home: Path, jobs: int = 1) -> Path:
    out = _out_dir("eval", cfg, home)
    arch = _perception_arch(cfg)
    bundle = ReportBundle({k: v for k, v in cfg.items() if k != "out"})
    if cfg["grid"]:
        em = _eval_grid(cfg, cfg["grid"], jobs)
        bundle.error_maps.append(em)
        bundle.metrics = [{"row": r, "col": c, "median": None if s is None else s.median,
                           "q3": None if s is None else s.q3}
                          for r, line in zip(em.rows, em.cells) for c, s in zip(em.cols, line)]
    elif cfg["scenario"]:
        scenario = SCENARIOS[cfg["scenario"]]
        layout = TrialLayout(**cfg["layout"])
        profile = profile_for(Domain.PSEUDO_REAL, cfg["resolution"])
        policies = {}
        if cfg["pseudo_inverse"]:
            policies["pseudo-inverse"] = pseudo_inverse_policy
        if cfg["control"] and cfg["perception"]:
            net = CombinedNetwork(_module(cfg["perception"], "perception checkpoint", arch),
                                  _module(cfg["control"], "control checkpoint"))
            policies["network"] = lambda ch, n=net: combined_policy(n, ch)
        elif cfg["control"]:
            ctl = _module(cfg["control"], "control checkpoint")
            policies["control"] = lambda ch, c=ctl: control_policy(c, ch)
        for name, (pp, cp) in sorted(cfg["networks"].items()):
            net = CombinedNetwork(_module(pp, f"{name} perception checkpoint", arch),
                                  _module(cp, f"{name} control checkpoint"))
            policies[name] = lambda ch, n=net: combined_policy(n, ch)
        if not policies:
            raise ConfigError("a reach evaluation needs --control, --network or --pseudo-inverse")
        boxes = {}
        for name, factory in policies.items():
            rep = eval_reach(factory, scenario, layout, profile)
            st = rep.stats
            bundle.metrics.append({"network": name, "scenario": cfg["scenario"], "e_med": st.median,
                                   "e_q3": st.q3, "success_rate": rep.success_rate, "trials": st.n})
            boxes[name] = st
        bundle.boxes[cfg["scenario"]] = boxes
    else:
        m = _module(cfg["perception"], "perception checkpoint", arch)
        errs = evaluate_perception(m, _dataset(cfg["test"], "test dataset"))
        st = box_stats(errs)
        bundle.metrics.append({"network": "perception", "median": st.median, "q1": st.q1,
                               "q3": st.q3, "n": st.n})
        bundle.boxes["perception"] = {"perception": st}
    emit_report(bundle, out)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return out


def cmd_report(cfg: dict, home: Path, jobs: int = 1) -> Path:
    src = _need(cfg["results"], "results file")
    try:
        bundle = ReportBundle.from_dict(json.loads(src.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{src} is not a results file: {exc}") from None
    out = Path(cfg["out"]) if cfg["out"] else home / "report" / config_hash(bundle.to_dict())
    emit_report(bundle, out)
    return out


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


# -- argument parsing --------------------------------------------------------------

def _ints(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adt-reach", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="The default data root is $ADT_REACH_HOME (or ~/.adt_reach).")
    p.add_argument("--home", help="data root (overrides $ADT_REACH_HOME)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for generation and grids")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override its values")
        sp.add_argument("--out", dest="out", default=S, help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (dotted path, JSON value)")

    g = sub.add_parser("gen", help="generate a dataset directory")
    common(g)
    g.add_argument("--kind", choices=["perception", "control"], default=S)
    g.add_argument("--domain", choices=list(DOMAINS), default=S)
    g.add_argument("--n", type=int, default=S, help="perception samples")
    g.add_argument("--trajectories", type=int, default=S, help="control trajectories")
    g.add_argument("--unlabeled", dest="labeled", action="store_false", default=S)
    g.add_argument("--scenario", choices=list(SCENARIOS), default=S)
    g.add_argument("--role", default=S, help="seed partition name")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--resolution", type=int, default=S)
    g.add_argument("--no-images", dest="images", action="store_false", default=S)

    t = sub.add_parser("train", help="run one training procedure")
    common(t)
    t.add_argument("procedure", choices=PROCEDURES, nargs="?", default=S)
    t.add_argument("--variant", choices=[v.value for v in Variant], default=S)
    t.add_argument("--arch", choices=["desk", "paper"], default=S)
    t.add_argument("--resolution", type=int, default=S)
    for k in ("sim", "real", "control", "velocity"):
        t.add_argument(f"--{k}-data", dest=f"data.{k}", default=S, metavar="DIR")
    t.add_argument("--unlabeled-data", dest="data.unlabeled", default=S, metavar="DIR")
    t.add_argument("--init", default=S, metavar="CKPT")
    t.add_argument("--control-init", dest="control_init", default=S, metavar="CKPT")
    t.add_argument("--sim", dest="budgets.sim", type=int, default=S, help="sim budget")
    t.add_argument("--labeled", dest="budgets.labeled", type=int, default=S)
    t.add_argument("--unlabeled", dest="budgets.unlabeled", type=int, default=S)
    t.add_argument("--trajectories", dest="budgets.trajectories", type=int, default=S)
    t.add_argument("--steps", dest="hyper.steps", type=int, default=S)
    t.add_argument("--epochs", dest="hyper.epochs", type=int, default=S)
    t.add_argument("--lr", dest="hyper.lr", type=float, default=S)
    t.add_argument("--seed", dest="hyper.seed", type=int, default=S)
    t.add_argument("--setpoint", dest="hyper.setpoint", type=float, default=S)
    t.add_argument("--no-pi", dest="hyper.use_pi", action="store_false", default=S,
                   help="fixed gamma (1 unless --set hyper.fixed_gamma=...)")
    t.add_argument("--beta", dest="hyper.beta", type=float, default=S)

    e = sub.add_parser("eval", help="evaluate checkpoints and emit a report")
    common(e)
    e.add_argument("--perception", default=S, metavar="CKPT")
    e.add_argument("--control", default=S, metavar="CKPT")
    e.add_argument("--network", action="append", default=[], metavar="NAME=PCKPT,CCKPT",
                   help="add a combined network to a reach evaluation")
    e.add_argument("--pseudo-inverse", dest="pseudo_inverse", action="store_true", default=S)
    e.add_argument("--test", default=S, metavar="DIR")
    e.add_argument("--scenario", choices=list(SCENARIOS), default=S)
    e.add_argument("--targets", dest="layout.n_targets", type=int, default=S)
    e.add_argument("--trials", dest="layout.trials_per_target", type=int, default=S)
    e.add_argument("--layout-seed", dest="layout.seed", type=int, default=S)
    e.add_argument("--grid", dest="grid.kind", choices=["supervised", "adt"], default=S)
    e.add_argument("--source", dest="grid.source", default=S, metavar="CKPT")
    e.add_argument("--sim-data", dest="grid.sim", default=S, metavar="DIR")
    e.add_argument("--real-data", dest="grid.real", default=S, metavar="DIR")
    e.add_argument("--unlabeled-data", dest="grid.unlabeled", default=S, metavar="DIR")
    e.add_argument("--rows", dest="grid.rows", type=_ints, default=S,
                   help="sim budgets (supervised) or unlabeled budgets (adt)")
    e.add_argument("--cols", dest="grid.cols", type=_ints, default=S, help="labeled real budgets")
    e.add_argument("--arch", choices=["desk", "paper"], default=S)
    e.add_argument("--resolution", type=int, default=S)

    r = sub.add_parser("report", help="re-emit a report from a results.json")
    common(r)
    r.add_argument("--results", default=S, metavar="FILE")
    return p


def _flags(ns: argparse.Namespace) -> tuple[dict, list]:
    skip = {"command", "config", "set", "home", "jobs", "verbose", "network"}
    flags = {k: v for k, v in vars(ns).items() if k not in skip}
    sets = [_parse_set(s) for s in ns.set]
    if getattr(ns, "network", None):
        for item in ns.network:
            name, _, paths = item.partition("=")
            parts = paths.split(",")
            if not name or len(parts) != 2:
                raise ConfigError(f"--network expects NAME=PCKPT,CCKPT, got {item!r}")
            flags[f"networks.{name}"] = parts
    return flags, sets


def _grid_defaults(command, file_cfg, flags):
    # grid flags imply a grid object; fill its optional keys
    if command == "eval" and any(k.startswith("grid.") for k in flags):
        base = (file_cfg or {}).get("grid") or {}
        file_cfg = dict(file_cfg or {}, grid={"test": None, "unlabeled": None, "hyper": {}, **base})
        if "test" in flags and "grid.test" not in flags:
            flags["grid.test"] = flags["test"]
    return file_cfg, flags


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    home = Path(ns.home) if ns.home else default_home()
    try:
        flags, sets = _flags(ns)
        file_cfg = _read_config(ns.config)
        file_cfg, flags = _grid_defaults(ns.command, file_cfg, flags)
        for k, v in sets:
            flags[k] = v
        cfg = resolve_config(ns.command, file_cfg, flags)
        if ns.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = COMMANDS[ns.command](cfg, home, ns.jobs)
    except ConfigError as exc:
        print(f"adt-reach: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, FileNotFoundError) as exc:
        print(f"adt-reach: error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ArchitectureMismatch as exc:
        print(f"adt-reach: error: {exc}", file=sys.stderr)
        return EXIT_ARCH
    except TrainingDiverged as exc:
        print(f"adt-reach: error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
