"""Training procedures: pretraining, supervised adaptation, ADT, the
confusion-loss baseline, control training and end-to-end fine-tuning.

Every procedure draws batches and augmentation from one generator seeded
by its config, so a fixed (config, datasets) pair reproduces the final
parameters bit for bit.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..numgrad import Graph, NonFiniteGradient, OptimState, backward, rmsprop_step
from ..policynet import (CombinedNetwork, Module, bind, clone_params, combined_graph,
                         control_graph, discriminator_graph, encode, encoder_forward,
                         init_discriminator, regress)
from ..simworld.datasets import Dataset
from ..simworld.kinematics import KinematicChain, Unreachable, default_chain
from ..simworld.scene import denormalize_target
from ..simworld.trajectory import reach_target
from .augment import augment
from .config import AdtConfig, ControlConfig, E2EConfig, SupervisedConfig, Variant
from .losses import (confusion_loss_graph, discriminator_loss_graph, encoder_loss_graph,
                     sup_graph)
from .pi import PIState, pi_update

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "L_p_sup", "L_D_ad", "L_E_ad", "gamma", "u", "integral")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainLog:
    columns: tuple[str, ...] = LOG_COLUMNS
    rows: list[dict] = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.columns)
            for r in self.rows:
                wr.writerow(["" if r.get(c) is None else repr(r[c]) if isinstance(r[c], float)
                             else r[c] for c in self.columns])


class BatchStream:
    """Endless reshuffled passes over ``n`` indices."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n <= 0:
            raise ValueError("cannot draw batches from an empty dataset")
        self.n, self.rng = n, rng
        self._perm, self._pos = rng.permutation(n), 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self._pos == self.n:
                self._perm, self._pos = self.rng.permutation(self.n), 0
            step = min(k, self.n - self._pos)
            out.append(self._perm[self._pos:self._pos + step])
            self._pos += step
            k -= step
        return np.concatenate(out)


def _images(ds: Dataset, idx, rng, do_aug: bool) -> np.ndarray:
    x = ds.images_f64(idx)
    return augment(x, ds.domain, rng) if do_aug else x


def _check_loss(value: float, what: str, step: int) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise TrainingDiverged(f"{what} became {v} at step {step}")
    return v


def _step(params, grads, state, names, what, step):
    try:
        rmsprop_step(params, grads, state, names)
    except NonFiniteGradient as exc:
        raise TrainingDiverged(f"{what}: {exc} at step {step}") from exc


def _sup_loss_and_grads(module: Module, images, targets, trainable=True):
    g = Graph()
    t = bind(g, module, trainable)
    pred = regress(g, module.arch, t, encode(g, module.arch, t, g.constant(images)))
    loss = sup_graph(g, pred, g.constant(targets))
    return float(loss.data), backward(g, loss)


# -- perception ----------------------------------------------------------------------

def _supervised_loop(module: Module, sources, n_steps: int, cfg: SupervisedConfig, rng,
                     what: str) -> TrainLog:
    """``sources``: list of (dataset, stream, per-batch count)."""
    state = OptimState(cfg.lr)
    tlog = TrainLog(("step", "L_p_sup"))
    for k in range(n_steps):
        xs, ys = [], []
        for ds, stream, count in sources:
            if count == 0:
                continue
            idx = stream.take(count)
            xs.append(_images(ds, idx, rng, cfg.augment))
            ys.append(ds.targets[idx])
        loss, grads = _sup_loss_and_grads(module, np.concatenate(xs), np.concatenate(ys))
        _check_loss(loss, f"{what} loss", k)
        _step(module.params, grads, state, None, what, k)
        tlog.add(step=k, L_p_sup=loss)
    return tlog


def pretrain_perception(module: Module, sim: Dataset, cfg: SupervisedConfig | None = None):
    """Train ``module`` in place on labeled SIM images; returns (module, log)."""
    cfg = cfg or SupervisedConfig()
    if not sim.labeled:
        raise ValueError("pretraining needs a labeled dataset")
    rng = np.random.default_rng(cfg.seed)
    per_epoch = math.ceil(len(sim) / cfg.batch)
    n_steps = cfg.steps if cfg.steps is not None else cfg.epochs * per_epoch
    tlog = _supervised_loop(module, [(sim, BatchStream(len(sim), rng), cfg.batch)], n_steps,
                            cfg, rng, "pretrain")
    return module, tlog


def real_sim_split(batch: int, real_fraction: float) -> tuple[int, int]:
    n_real = int(round(batch * real_fraction))
    return n_real, batch - n_real


def adapt_supervised(source: Module, sim: Dataset, real: Dataset,
                     cfg: SupervisedConfig | None = None):
    """Fine-tune a copy of ``source`` on mixed SIM/PSEUDO_REAL labeled batches."""
    cfg = cfg or SupervisedConfig(epochs=20)
    if real is None or len(real) == 0:
        raise ValueError("supervised adaptation needs labeled real images; "
                         "with none, the pretrained module is the result")
    rng = np.random.default_rng(cfg.seed)
    target = clone_params(source)
    n_real, n_sim = real_sim_split(cfg.batch, cfg.real_fraction)
    n_steps = cfg.steps if cfg.steps is not None else cfg.epochs * math.ceil(len(real) / max(n_real, 1))
    sources = [(real, BatchStream(len(real), rng), n_real), (sim, BatchStream(len(sim), rng), n_sim)]
    tlog = _supervised_loop(target, sources, n_steps, cfg, rng, "adapt_supervised")
    return target, tlog


def _disc_update(D: Module, f_src, f_tgt, state, step, loss_graph=discriminator_loss_graph):
    g = Graph()
    t = bind(g, D, True)
    loss = loss_graph(g, discriminator_graph(g, D.arch, t, g.constant(f_src)),
                      discriminator_graph(g, D.arch, t, g.constant(f_tgt)))
    val = _check_loss(loss.data, "L_D", step)
    _step(D.params, backward(g, loss), state, None, "discriminator", step)
    return val


def _disc_value(D: Module, f_src, f_tgt) -> float:
    g = Graph()
    t = bind(g, D, False)
    return float(discriminator_loss_graph(g, discriminator_graph(g, D.arch, t, g.constant(f_src)),
                                          discriminator_graph(g, D.arch, t, g.constant(f_tgt))).data)


def _pi_state(cfg: AdtConfig) -> PIState:
    return PIState(setpoint=cfg.setpoint, kp=cfg.kp, ki=cfg.ki, i_limit=cfg.i_limit)


def _check_budget(name, ds, budget):
    have = 0 if ds is None else len(ds)
    if budget is not None and budget != have:
        raise ValueError(f"{name} budget {budget} does not match dataset size {have}")


@dataclass
class AdtResult:
    target: Module
    discriminator: Module
    log: TrainLog
    pi: PIState
    source_checksum: tuple[str, str]   # before, after


def adapt_adt(source: Module, sim: Dataset, real_labeled: Dataset | None, real_unlabeled: Dataset,
              cfg: AdtConfig | None = None, shared_encoder: bool = False) -> AdtResult:
    """Adversarial discriminative transfer from a frozen pretrained ``source``.

    Per step: (1) discriminator update on L_D from source features of SIM
    images and target features of unlabeled reals; (2) target encoder
    update on gamma * L_E through the updated, now fixed discriminator; (3)
    target encoder + regressor update on L_p^Sup with labeled reals,
    skipped when there are none; (4) PI update of gamma from this step's L_D.

    With ``shared_encoder`` the source features come from the target
    encoder itself and step (2) uses the confusion loss instead of L_E.
    Steps (2) and (3) share one optimizer state for the target module.
    """
    cfg = cfg or AdtConfig()
    _check_budget("labeled", real_labeled, cfg.n_labeled)
    _check_budget("unlabeled", real_unlabeled, cfg.n_unlabeled)
    if real_unlabeled is None or len(real_unlabeled) == 0:
        raise ValueError("ADT needs unlabeled real images")
    rng = np.random.default_rng(cfg.seed)
    before = source.checksum()
    target = clone_params(source)
    arch = target.arch
    D = init_discriminator(np.random.default_rng([cfg.seed, 1]), arch.feature_dim,
                           cfg.disc_net, cfg.disc_hidden)
    st_d, st_t = OptimState(cfg.lr), OptimState(cfg.lr)
    pi = _pi_state(cfg)
    gamma = pi.gamma if cfg.use_pi else cfg.fixed_gamma
    s_sim = BatchStream(len(sim), rng)
    s_unl = BatchStream(len(real_unlabeled), rng)
    have_lab = real_labeled is not None and len(real_labeled) > 0
    s_lab = BatchStream(len(real_labeled), rng) if have_lab else None
    enc_names = target.names("enc")
    tlog = TrainLog()
    for k in range(cfg.steps):
        x_sim = _images(sim, s_sim.take(cfg.sim_batch), rng, cfg.augment)
        x_unl = _images(real_unlabeled, s_unl.take(cfg.unlabeled_batch), rng, cfg.augment)

        g = Graph()
        t = bind(g, target, "enc")
        f_unl = encode(g, arch, t, g.constant(x_unl))
        if shared_encoder:
            f_sim = encode(g, arch, t, g.constant(x_sim))
        else:
            f_sim = g.constant(encoder_forward(source, x_sim))

        ld = _disc_update(D, f_sim.data, f_unl.data, st_d, k)
        measured = _disc_value(D, f_sim.data, f_unl.data) if cfg.measure == "post" else ld

        td = bind(g, D, False)
        p_unl = discriminator_graph(g, D.arch, td, f_unl)
        if shared_encoder:
            adv = confusion_loss_graph(g, discriminator_graph(g, D.arch, td, f_sim), p_unl)
        else:
            adv = encoder_loss_graph(g, p_unl)
        le = _check_loss(adv.data, "L_E", k)
        _step(target.params, backward(g, adv.scale(gamma)), st_t, enc_names, "target encoder", k)

        lsup = None
        if have_lab:
            idx = s_lab.take(cfg.labeled_batch)
            lsup, grads = _sup_loss_and_grads(
                target, _images(real_labeled, idx, rng, cfg.augment), real_labeled.targets[idx])
            _check_loss(lsup, "L_p_sup", k)
            _step(target.params, grads, st_t, None, "target perception", k)

        used_gamma = gamma
        if cfg.use_pi:
            gamma = pi_update(pi, measured)
        tlog.add(step=k, L_p_sup=lsup, L_D_ad=ld, L_E_ad=le, gamma=used_gamma,
                 u=pi.u if cfg.use_pi else None, integral=pi.integral if cfg.use_pi else None)
    after = source.checksum()
    return AdtResult(target, D, tlog, pi, (before, after))


def adapt_confusion(source: Module, sim: Dataset, real_labeled, real_unlabeled,
                    cfg: AdtConfig | None = None) -> AdtResult:
    """Shared-encoder baseline trained with the domain-confusion loss."""
    return adapt_adt(source, sim, real_labeled, real_unlabeled, cfg, shared_encoder=True)


# -- control -------------------------------------------------------------------------

def train_control(module: Module, data: Dataset, cfg: ControlConfig | None = None):
    """Fit scene configuration -> joint velocity on P-controller demonstrations."""
    cfg = cfg or ControlConfig()
    if data.kind != "control":
        raise ValueError("control training needs a trajectory dataset")
    rng = np.random.default_rng(cfg.seed)
    theta, vel = data.theta, data.velocities
    stream = BatchStream(len(data), rng)
    state = OptimState(cfg.lr_start)
    tlog = TrainLog(("step", "L_c", "lr"))
    for k in range(cfg.steps):
        idx = stream.take(cfg.batch)
        g = Graph()
        t = bind(g, module, True)
        loss = sup_graph(g, control_graph(g, module.arch, t, g.constant(theta[idx])),
                         g.constant(vel[idx]))
        val = _check_loss(loss.data, "L_c", k)
        state.lr = cfg.lr_at(k)
        _step(module.params, backward(g, loss), state, None, "control", k)
        tlog.add(step=k, L_c=val, lr=state.lr)
    return module, tlog


# -- end-to-end ----------------------------------------------------------------------

def velocity_labels(real: Dataset, chain: KinematicChain | None = None, seed: int = 0) -> Dataset:
    """Image-velocity pairs for labeled real images from the demonstration pipeline.

    Each image gets one P-controlled reach from a random initial
    configuration towards its labeled target; all frames share the image.
    """
    chain = chain or default_chain()
    tg, jq, vel, img, tid = [], [], [], [], []
    for i in range(len(real)):
        rng = np.random.default_rng([seed, int(real.seeds[real.image_index[i]] % (2 ** 32))])
        x_star = denormalize_target(real.targets[i])
        try:
            _, qs, vs = reach_target(rng, chain, x_star)
        except Unreachable as exc:
            log.info("no velocity labels for real image %d: %s", i, exc)
            continue
        for q, v in zip(qs, vs):
            tg.append(real.targets[i])
            jq.append(chain.normalize_q(q))
            vel.append(v)
            img.append(real.image_index[i])
            tid.append(i)
    meta = dict(real.meta, kind="control", velocity_labels=True)
    return Dataset(real.domain, "control", real.images, np.array(img), real.seeds,
                   np.array(tg), np.array(jq), np.array(vel), np.array(tid), meta)


def _control_batch_grads(net: CombinedNetwork, images, qn, v, trainable_p=True):
    g = Graph()
    tp = bind(g, net.perception, trainable_p)
    tc = bind(g, net.control, True)
    pred, _ = combined_graph(g, net, tp, tc, g.constant(images), g.constant(qn))
    loss = sup_graph(g, pred, g.constant(v))
    return float(loss.data), backward(g, loss)


def mix_perception_gradients(grad_p: dict, grad_c: dict, names, beta: float) -> dict:
    """beta * dL_p + (1 - beta) * dL_c^BN for the perception parameters."""
    return {k: beta * grad_p[k] + (1.0 - beta) * grad_c[k] for k in names}


def weighted_gradients(net: CombinedNetwork, lc_batch, lp_batch, beta: float,
                       adv_grads: dict | None = None, gamma: float = 0.0):
    """Gradients of one weighted fine-tuning step.

    ``lc_batch`` = (images, q_norm, v) for L_c; ``lp_batch`` = (images, x*) for
    L_p^Sup. Control parameters get dL_c; perception parameters get the
    beta-mix of dL_p (plus gamma * dL_E when given) and the control gradient
    at the bottleneck.
    """
    lc, g_c = _control_batch_grads(net, *lc_batch)
    lp, g_p = _sup_loss_and_grads(net.perception, *lp_batch)
    if adv_grads is not None:
        g_p = {k: g_p[k] + gamma * adv_grads.get(k, 0.0) for k in g_p}
    names = net.perception.names()
    grads = mix_perception_gradients(g_p, g_c, names, beta)
    grads.update({k: g_c[k] for k in net.control.names()})
    return grads, lc, lp


def finetune_e2e(net: CombinedNetwork, cfg: E2EConfig, *, control_sim: Dataset,
                 real_labeled: Dataset | None = None, real_velocity: Dataset | None = None,
                 sim_labeled: Dataset | None = None, real_unlabeled: Dataset | None = None):
    """Fine-tune a copy of ``net``; returns (network, log).

    NAIVE trains everything on L_c alone with images as the state, mixing
    real image-velocity pairs (``real_velocity``) with simulated ones.
    WEIGHTED_SUP and WEIGHTED_ADT use weighted gradients; the L_p^Sup batch
    reuses the L_c batch's simulated image-position pairs and tops it up
    with labeled reals. WEIGHTED_ADT also trains a discriminator on SIM
    images (``sim_labeled`` or the control images) against unlabeled reals.
    """
    v = cfg.variant
    need = {Variant.NAIVE: ("real_velocity",), Variant.WEIGHTED_SUP: ("real_labeled",),
            Variant.WEIGHTED_ADT: ("real_labeled", "real_unlabeled")}[v]
    provided = {"real_velocity": real_velocity, "real_labeled": real_labeled,
                "real_unlabeled": real_unlabeled}
    for name in need:
        if provided[name] is None or len(provided[name]) == 0:
            raise ValueError(f"{v.value} fine-tuning needs the {name} dataset")
    if control_sim is None or control_sim.images is None:
        raise ValueError("end-to-end fine-tuning needs simulated image-velocity pairs")
    rng = np.random.default_rng(cfg.seed)
    out = CombinedNetwork(clone_params(net.perception), clone_params(net.control))
    state = OptimState(cfg.lr)
    s_c = BatchStream(len(control_sim), rng)
    tlog = TrainLog(("step", "L_c", "L_p_sup", "L_D_ad", "L_E_ad", "gamma", "u", "integral"))

    if v is Variant.NAIVE:
        n_real, n_sim = real_sim_split(cfg.lc_batch, cfg.real_fraction)
        s_r = BatchStream(len(real_velocity), rng)
        for k in range(cfg.steps):
            ic, ir = s_c.take(n_sim), s_r.take(n_real)
            x = np.concatenate([_images(real_velocity, ir, rng, cfg.augment),
                                _images(control_sim, ic, rng, cfg.augment)])
            qn = np.concatenate([real_velocity.joints[ir], control_sim.joints[ic]])
            vel = np.concatenate([real_velocity.velocities[ir], control_sim.velocities[ic]])
            lc, grads = _control_batch_grads(out, x, qn, vel)
            _check_loss(lc, "L_c", k)
            _step({**out.perception.params, **out.control.params}, grads, state,
                  None, "naive e2e", k)
            tlog.add(step=k, L_c=lc)
        return out, tlog

    n_real = int(round(cfg.lp_batch * cfg.real_fraction))
    s_r = BatchStream(len(real_labeled), rng)
    adv = cfg.adversarial or v is Variant.WEIGHTED_ADT
    if adv:
        D = init_discriminator(np.random.default_rng([cfg.seed, 1]), out.perception.arch.feature_dim)
        st_d = OptimState(cfg.lr)
        pi = PIState()
        source_enc = clone_params(net.perception)   # frozen reference features
        d_sim = sim_labeled if sim_labeled is not None else control_sim
        s_ds = BatchStream(len(d_sim), rng)
        s_du = BatchStream(len(real_unlabeled), rng)
    for k in range(cfg.steps):
        ic = s_c.take(cfg.lc_batch)
        x_c = _images(control_sim, ic, rng, cfg.augment)
        lc_batch = (x_c, control_sim.joints[ic], control_sim.velocities[ic])
        ir = s_r.take(n_real)
        n_sim_p = cfg.lp_batch - n_real
        sim_take = min(n_sim_p, len(ic))
        x_p = np.concatenate([_images(real_labeled, ir, rng, cfg.augment), x_c[:sim_take]])
        y_p = np.concatenate([real_labeled.targets[ir], control_sim.targets[ic[:sim_take]]])
        adv_grads, gamma, row = None, 0.0, {}
        if adv:
            xs = _images(d_sim, s_ds.take(cfg.sim_batch_d), rng, cfg.augment)
            xu = _images(real_unlabeled, s_du.take(cfg.unlabeled_batch_d), rng, cfg.augment)
            g = Graph()
            t = bind(g, out.perception, "enc")
            f_u = encode(g, out.perception.arch, t, g.constant(xu))
            f_s = encoder_forward(source_enc, xs)
            ld = _disc_update(D, f_s, f_u.data, st_d, k)
            le_t = encoder_loss_graph(g, discriminator_graph(g, D.arch, bind(g, D, False), f_u))
            adv_grads = backward(g, le_t)
            gamma = pi.gamma
            pi_update(pi, ld)
            row = dict(L_D_ad=ld, L_E_ad=float(le_t.data), gamma=gamma, u=pi.u, integral=pi.integral)
        grads, lc, lp = weighted_gradients(out, lc_batch, (x_p, y_p), cfg.beta, adv_grads, gamma)
        _check_loss(lc, "L_c", k)
        _check_loss(lp, "L_p_sup", k)
        _step({**out.perception.params, **out.control.params}, grads, state, None, "weighted e2e", k)
        tlog.add(step=k, L_c=lc, L_p_sup=lp, **row)
    return out, tlog
