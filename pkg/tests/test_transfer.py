import math

import numpy as np
import pytest

from adtreach.policynet import (CombinedNetwork, PerceptionArch, clone_params, init_control,
                                init_discriminator, init_perception)
from adtreach.simworld import make_control_dataset, make_perception_dataset
from adtreach.simworld.scene import Domain, pseudo_real_profile, sim_profile
from adtreach.transfer import (AdtConfig, ControlConfig, E2EConfig, PIState, SupervisedConfig,
                               TrainLog, Variant, adapt_adt, adapt_confusion, adapt_supervised,
                               augment, e2e_defaults, finetune_e2e, gamma_of, loss_confusion,
                               loss_control, loss_discriminator, loss_encoder_adv,
                               loss_perception_sup, pi_update, pretrain_perception, train_control,
                               velocity_labels, weighted_gradients)
from adtreach.transfer.augment import BRIGHTNESS, WHITE_BALANCE, apply_scales
from adtreach.transfer.losses import (loss_confusion_probs, loss_discriminator_probs,
                                      loss_encoder_probs)
from adtreach.transfer.train import _control_batch_grads, _sup_loss_and_grads

LN2 = math.log(2.0)
TINY = PerceptionArch(16, ((4, True), (8, True)), (8,), "tiny")


def probs(rng, m):
    p = rng.uniform(0.05, 0.95, m)
    return np.stack([p, 1 - p], axis=1)


@pytest.fixture(scope="module")
def data():
    sim = make_perception_dataset(0, sim_profile(16), 40)
    real = make_perception_dataset(0, pseudo_real_profile(16), 12)
    unl = make_perception_dataset(0, pseudo_real_profile(16), 16, labeled=False)
    return sim, real, unl


@pytest.fixture(scope="module")
def control_data():
    return make_control_dataset(0, sim_profile(16), 4)


def tiny(seed=0):
    return init_perception(TINY, np.random.default_rng(seed))


# -- losses --------------------------------------------------------------------------

def test_sup_loss_examples():
    assert loss_perception_sup(np.ones((2, 3)), np.ones((2, 3))) == 0.0
    assert loss_perception_sup([[0.3, 0, 0]], [[0, 0, 0]]) == pytest.approx(0.045, abs=1e-15)
    assert loss_control(np.zeros((1, 7)), [[0, 0, 0.2, 0, 0, 0, 0]]) == pytest.approx(0.02, abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_regression_losses_match_oracle(seed):
    rng = np.random.default_rng(seed)
    for fn, d in ((loss_perception_sup, 3), (loss_control, 7)):
        m = int(rng.integers(1, 6))
        p, t = rng.normal(size=(m, d)), rng.normal(size=(m, d))
        oracle = sum(sum((p[j, i] - t[j, i]) ** 2 for i in range(d)) for j in range(m)) / (2 * m)
        assert abs(fn(p, t) - oracle) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_adversarial_losses_match_oracle(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 6))
    ps, pt = probs(rng, m), probs(rng, m)
    ld = -sum(math.log(ps[j, 0]) + math.log(1 - pt[j, 0]) for j in range(m)) / (2 * m)
    le = -sum(math.log(pt[j, 0]) for j in range(m)) / m
    lconf = -sum(0.5 * math.log(ps[j, 0]) + 0.5 * math.log(1 - ps[j, 0])
                 + 0.5 * math.log(pt[j, 0]) + 0.5 * math.log(1 - pt[j, 0]) for j in range(m)) / (2 * m)
    assert abs(loss_discriminator_probs(ps, pt) - ld) < 1e-12
    assert abs(loss_encoder_probs(pt) - le) < 1e-12
    assert abs(loss_confusion_probs(ps, pt) - lconf) < 1e-12


def test_confused_discriminator_gives_ln2():
    half = np.full((5, 2), 0.5)
    assert abs(loss_discriminator_probs(half, half) - LN2) < 1e-12
    assert abs(loss_encoder_probs(half) - LN2) < 1e-12
    assert abs(loss_confusion_probs(half, half) - LN2) < 1e-12


def test_module_losses_with_zero_discriminator():
    # all-zero weights give p = (0.5, 0.5) on any input
    D = init_discriminator(np.random.default_rng(0), 8)
    for v in D.params.values():
        v[...] = 0.0
    f = np.random.default_rng(1).normal(size=(4, 8))
    assert abs(loss_discriminator(D, f, f) - LN2) < 1e-12
    assert abs(loss_encoder_adv(D, f) - LN2) < 1e-12
    assert abs(loss_confusion(D, f, f, shared_encoder=True) - LN2) < 1e-12
    with pytest.raises(ValueError):
        loss_confusion(D, f, f, shared_encoder=False)


def test_loss_limits():
    d = 1e-9
    good_src, good_tgt = np.array([[1 - d, d]]), np.array([[d, 1 - d]])
    assert loss_discriminator_probs(good_src, good_tgt) < 1e-8
    assert loss_encoder_probs(np.array([[1.0, 0.0]])) == 0.0
    # p_sim at 1 puts the log(1 - D) term on the clamp
    assert loss_confusion_probs(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])) > 10.0


def test_losses_reject_bad_batches():
    with pytest.raises(ValueError):
        loss_perception_sup(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        loss_encoder_probs(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        loss_discriminator_probs(np.full((2, 2), .5), np.full((3, 2), .5))


def test_losses_nonnegative():
    rng = np.random.default_rng(3)
    for _ in range(50):
        ps, pt = probs(rng, 4), probs(rng, 4)
        assert loss_discriminator_probs(ps, pt) >= 0
        assert loss_encoder_probs(pt) >= 0
        assert loss_confusion_probs(ps, pt) >= 0


# -- PI controller -------------------------------------------------------------------

def test_gamma_midpoint_and_range():
    assert gamma_of(0.0) == 0.01
    # losses lie in [0, -log(LOG_FLOOR)], which bounds e and so u
    st = PIState()
    u_hi = st.kp * st.setpoint + st.ki * st.i_limit
    u_lo = st.kp * (st.setpoint - math.log(1e12)) - st.ki * st.i_limit
    gs = [gamma_of(u) for u in np.linspace(u_lo, u_hi, 4001)]
    assert all(0.0 < g < 0.02 for g in gs)
    assert all(a < b for a, b in zip(gs, gs[1:]))
    assert math.isfinite(gamma_of(-1e6)) and math.isfinite(gamma_of(1e6))


def test_pi_update_example():
    st = PIState()
    g = pi_update(st, 0.23)
    assert st.error == pytest.approx(0.05, abs=1e-15)
    assert st.integral == pytest.approx(0.05, abs=1e-15)
    assert st.u == pytest.approx(0.0204, abs=1e-15)
    assert g == pytest.approx(0.02 / (1 + math.exp(-1.02)), abs=1e-15)


@pytest.mark.parametrize("e", [1.0, -1.0])
def test_integral_pinned(e):
    st = PIState()
    for _ in range(1000):
        pi_update(st, st.setpoint - e)
        assert -0.1 <= st.integral <= 0.1
    assert st.integral == math.copysign(0.1, e)


def test_pi_rejects_nonfinite():
    with pytest.raises(ValueError):
        pi_update(PIState(), float("nan"))


@pytest.mark.parametrize("a,b", [(0.302, 2.0), (0.30, 2.0), (0.32, 4.0), (0.29, 1.0), (0.31, 3.0)])
def test_stub_plant_settles(a, b):
    st = PIState()
    gamma, trace = st.gamma, []
    for _ in range(500):
        loss = a - b * gamma
        trace.append(loss)
        gamma = pi_update(st, loss)
        assert -0.1 <= st.integral <= 0.1
        assert 0.0 < gamma < 0.02
    assert all(abs(v - 0.28) <= 0.01 for v in trace[-50:])


# -- augmentation --------------------------------------------------------------------

def test_augment_bounds_and_identity():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (3, 8, 8, 3))
    for b in (0.2, 1.8):
        out = apply_scales(x, np.full(3, b), np.full((3, 3), 1 + WHITE_BALANCE))
        assert out.min() >= -1.0 and out.max() <= 1.0
    np.testing.assert_array_equal(apply_scales(x, np.ones(3), np.ones((3, 3))), x)


def test_augment_seeded_and_in_range():
    x = np.zeros((400, 2, 2, 3))     # intensity 0.5 in [0, 1] space
    for dom in Domain:
        a = augment(x, dom, np.random.default_rng(5))
        np.testing.assert_array_equal(a, augment(x, dom, np.random.default_rng(5)))
        k = a + 1.0
        b = BRIGHTNESS[dom]
        lo = max((1 - b) * (1 - WHITE_BALANCE), 0.0)
        assert k.min() >= lo - 1e-12 and k.max() <= min((1 + b) * (1 + WHITE_BALANCE), 2.0) + 1e-12
        ratio = k[:, 0, 0, :] / k[:, 0, 0, :1]
        assert np.all(np.abs(ratio - 1) <= 2 * WHITE_BALANCE / (1 - WHITE_BALANCE) + 1e-12)
    single = augment(np.zeros((4, 4, 3)), Domain.SIM, np.random.default_rng(0))
    assert single.shape == (4, 4, 3)


# -- training procedures -------------------------------------------------------------

def test_pretrain_zero_epochs_unchanged(data):
    m = tiny()
    before = m.checksum()
    pretrain_perception(m, data[0], SupervisedConfig(epochs=0))
    assert m.checksum() == before


def test_pretrain_smoke_loss_decreases():
    sim = make_perception_dataset(1, sim_profile(16), 50)
    m = tiny(1)
    _, log = pretrain_perception(m, sim, SupervisedConfig(epochs=4, batch=10, augment=False))
    per_epoch = log.column("L_p_sup").reshape(4, 5).mean(axis=1)
    assert np.all(np.diff(per_epoch) < 0)


def test_pretrain_rejects_unlabeled(data):
    with pytest.raises(ValueError):
        pretrain_perception(tiny(), data[2], SupervisedConfig(epochs=1))


def test_adapt_supervised_deterministic(data):
    sim, real, _ = data
    cfg = SupervisedConfig(steps=3)
    a, _ = adapt_supervised(tiny(), sim, real, cfg)
    b, _ = adapt_supervised(tiny(), sim, real, cfg)
    assert a.checksum() == b.checksum()
    assert a.checksum() != tiny().checksum()
    with pytest.raises(ValueError):
        adapt_supervised(tiny(), sim, None, cfg)


def test_adt_frozen_source_and_log(data):
    sim, real, unl = data
    src = tiny()
    before = src.checksum()
    r = adapt_adt(src, sim, real, unl, AdtConfig(steps=4, sim_batch=8, unlabeled_batch=8,
                                                  labeled_batch=8))
    assert r.source_checksum[0] == r.source_checksum[1] == before == src.checksum()
    assert len(r.log.rows) == 4
    assert r.log.column("gamma")[0] == 0.01
    assert np.all(np.isfinite(r.log.column("L_p_sup")))
    assert -0.1 <= r.pi.integral <= 0.1
    assert r.target.checksum() != before


def test_adt_deterministic_and_unsupervised(data):
    sim, real, unl = data
    cfg = AdtConfig(steps=3, sim_batch=8, unlabeled_batch=8, labeled_batch=8, seed=4)
    a = adapt_adt(tiny(), sim, None, unl, cfg)
    b = adapt_adt(tiny(), sim, None, unl, cfg)
    assert a.target.checksum() == b.target.checksum()
    assert a.discriminator.checksum() == b.discriminator.checksum()
    assert np.all(np.isnan(a.log.column("L_p_sup")))
    # without labels the regressor never moves
    assert a.target.checksum("reg") == tiny().checksum("reg")


def test_adt_fixed_gamma_and_budgets(data):
    sim, real, unl = data
    r = adapt_adt(tiny(), sim, real, unl, AdtConfig(steps=2, use_pi=False, sim_batch=4,
                                                    unlabeled_batch=4, labeled_batch=4))
    assert np.all(r.log.column("gamma") == 1.0)
    with pytest.raises(ValueError):
        adapt_adt(tiny(), sim, real, unl, AdtConfig(steps=1, n_labeled=len(real) + 1))
    with pytest.raises(ValueError):
        adapt_adt(tiny(), sim, real, None, AdtConfig(steps=1))


def test_confusion_baseline_runs(data):
    sim, real, unl = data
    r = adapt_confusion(tiny(), sim, real, unl, AdtConfig(steps=2, sim_batch=4,
                                                          unlabeled_batch=4, labeled_batch=4))
    assert np.all(np.isfinite(r.log.column("L_E_ad")))


def test_train_log_csv(tmp_path):
    log = TrainLog()
    log.add(step=0, L_p_sup=0.5, L_D_ad=None, L_E_ad=0.1, gamma=0.01, u=0.0, integral=0.0)
    p = tmp_path / "log.csv"
    log.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "step,L_p_sup,L_D_ad,L_E_ad,gamma,u,integral"
    assert lines[1] == "0,0.5,,0.1,0.01,0.0,0.0"


def test_train_control_deterministic(control_data):
    cfg = ControlConfig(steps=20, batch=16)
    a, log = train_control(init_control(np.random.default_rng(0)), control_data, cfg)
    b, _ = train_control(init_control(np.random.default_rng(0)), control_data, cfg)
    assert a.checksum() == b.checksum()
    assert log.column("lr")[0] == 0.01 and log.column("lr")[-1] == pytest.approx(0.001)
    assert log.column("L_c")[-5:].mean() < log.column("L_c")[:5].mean()


def net_and_batches(control_data, data, seed=0):
    net = CombinedNetwork(tiny(seed), init_control(np.random.default_rng(seed)))
    rng = np.random.default_rng(seed)
    idx = np.arange(6)
    imgs = control_data.images_f64(idx)
    lc = (imgs, control_data.joints[idx], control_data.velocities[idx])
    real = data[1]
    lp = (real.images_f64(np.arange(5)), real.targets[:5] + 0 * rng.normal())
    return net, lc, lp


@pytest.mark.parametrize("beta", [0.0, 0.3, 0.9, 1.0])
def test_gradient_mixing_identity(control_data, data, beta):
    net, lc, lp = net_and_batches(control_data, data)
    names = net.perception.names()
    _, g_p = _sup_loss_and_grads(net.perception, *lp)
    _, g_c = _control_batch_grads(net, *lc)
    grads, _, _ = weighted_gradients(net, lc, lp, beta)
    g1, _, _ = weighted_gradients(net, lc, lp, 1.0)
    g0, _, _ = weighted_gradients(net, lc, lp, 0.0)
    for k in names:
        if beta == 1.0:
            np.testing.assert_allclose(grads[k], g_p[k], rtol=0, atol=1e-10)
        if beta == 0.0:
            np.testing.assert_allclose(grads[k], g_c[k], rtol=0, atol=1e-10)
        np.testing.assert_allclose(grads[k], beta * g1[k] + (1 - beta) * g0[k], rtol=0, atol=1e-10)
    for k in net.control.names():
        np.testing.assert_array_equal(grads[k], g_c[k])


def test_velocity_labels_shapes(data):
    v = velocity_labels(data[1].take(3))
    assert v.kind == "control"
    assert v.joints.shape[1] == 7 and v.velocities.shape == v.joints.shape
    assert set(np.unique(v.trajectory)) <= {0, 1, 2}
    np.testing.assert_array_equal(v.targets, data[1].targets[v.trajectory])


@pytest.mark.parametrize("variant", list(Variant))
def test_finetune_variants_run(control_data, data, variant):
    sim, real, unl = data
    net = CombinedNetwork(tiny(), init_control(np.random.default_rng(0)))
    before = (net.perception.checksum(), net.control.checksum())
    cfg = e2e_defaults(variant, steps=2, sim_batch_d=8, unlabeled_batch_d=4)
    kw = dict(control_sim=control_data, real_labeled=real, real_unlabeled=unl, sim_labeled=sim,
              real_velocity=velocity_labels(real.take(2)))
    out, log = finetune_e2e(net, cfg, **kw)
    again, _ = finetune_e2e(net, cfg, **kw)
    assert (net.perception.checksum(), net.control.checksum()) == before
    assert out.perception.checksum() == again.perception.checksum()
    assert out.control.checksum() != before[1]
    assert len(log.rows) == 2
    if variant is Variant.WEIGHTED_ADT:
        assert np.all(np.isfinite(log.column("L_D_ad")))


def test_finetune_missing_dataset(control_data):
    net = CombinedNetwork(tiny(), init_control(np.random.default_rng(0)))
    with pytest.raises(ValueError):
        finetune_e2e(net, e2e_defaults("naive", steps=1), control_sim=control_data)
    with pytest.raises(ValueError):
        finetune_e2e(net, e2e_defaults("weighted-adt", steps=1), control_sim=control_data,
                     real_labeled=None)


def test_config_records():
    cfg = AdtConfig(steps=7, disc_hidden=(32, 16))
    assert AdtConfig.from_dict(cfg.to_dict()) == cfg
    e = e2e_defaults("weighted-adt")
    assert (e.lc_batch, e.lp_batch, e.real_fraction, e.lr) == (16, 32, 0.5, 0.001)
    assert E2EConfig.from_dict(e.to_dict()) == e
    with pytest.raises(ValueError):
        AdtConfig.from_dict({"stepz": 3})
    with pytest.raises(ValueError):
        E2EConfig(beta=1.5)
    with pytest.raises(ValueError):
        AdtConfig(measure="mid")
