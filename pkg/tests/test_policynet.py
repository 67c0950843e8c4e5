import numpy as np
import pytest

from adtreach.numgrad import Graph, backward
from adtreach.numgrad.gradcheck import activation_signature, check_gradients
from adtreach.policynet import (DISCRIMINATOR_NETS, ArchitectureMismatch, CombinedNetwork, bind,
                                clone_params, combined_forward, control_forward, control_graph,
                                desk_perception, discriminator_forward, discriminator_graph,
                                encode, expected_param_count, init_control, init_discriminator,
                                init_perception, load_module, paper_perception, perception_forward,
                                regress, save_module)

# pinned once from the layer arithmetic of each profile
DESK_PERCEPTION_PARAMS = 41379
PAPER_PERCEPTION_PARAMS = 721107
CONTROL_PARAMS = 126807
DISCRIMINATOR_256_PARAMS = 132098


def zeroed(mod):
    for v in mod.params.values():
        v[...] = 0.0
    return mod


def images(rng, m=2, res=64):
    return rng.uniform(-1, 1, (m, res, res, 3))


def test_zero_perception_outputs_zero():
    mod = zeroed(init_perception(desk_perception(), np.random.default_rng(0)))
    out = perception_forward(mod, images(np.random.default_rng(1)))
    assert out.shape == (2, 3)
    np.testing.assert_array_equal(out, 0.0)


def test_feature_dims():
    assert desk_perception().feature_dim == 512
    assert paper_perception().feature_dim == 256
    mod = init_perception(desk_perception(), np.random.default_rng(0))
    _, feats = perception_forward(mod, images(np.random.default_rng(1)), return_features=True)
    assert feats.shape == (2, 512)


def test_paper_profile_layout():
    arch = paper_perception()
    assert len(arch.conv) == 12
    assert sum(p for _, p in arch.conv) == 7
    assert arch.resolution == 256
    assert len(arch.hidden) == 2


def test_resolution_mismatch_rejected():
    mod = init_perception(desk_perception(), np.random.default_rng(0))
    with pytest.raises(ArchitectureMismatch):
        perception_forward(mod, np.zeros((1, 32, 32, 3)))


def test_control_zero_and_deterministic():
    rng = np.random.default_rng(0)
    mod = init_control(rng)
    assert mod.arch.hidden == (400, 300)
    th = rng.uniform(0, 1, (3, 10))
    np.testing.assert_array_equal(control_forward(mod, th), control_forward(mod, th))
    np.testing.assert_array_equal(control_forward(zeroed(mod), th), 0.0)


def test_control_rejects_unnormalized_input():
    mod = init_control(np.random.default_rng(0))
    th = np.full((1, 10), 0.5)
    th[0, 4] = 1.0 + 1e-3
    with pytest.raises(ValueError):
        control_forward(mod, th)
    th[0, 4] = 1.0 + 1e-7
    control_forward(mod, th)


def test_discriminator_zero_is_half_and_simplex():
    rng = np.random.default_rng(0)
    D = init_discriminator(rng, 512)
    f = rng.standard_normal((5, 512))
    p = discriminator_forward(D, f)
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(discriminator_forward(zeroed(D), f), 0.5)
    with pytest.raises(ArchitectureMismatch):
        discriminator_forward(D, f[:, :100])


@pytest.mark.parametrize("net", sorted(DISCRIMINATOR_NETS))
def test_discriminator_nets(net):
    D = init_discriminator(np.random.default_rng(net), 256, net)
    widths = DISCRIMINATOR_NETS[net]
    assert D.arch.hidden == widths
    assert D.count() == expected_param_count(D.arch)


def test_pinned_parameter_counts():
    rng = np.random.default_rng(0)
    assert init_perception(desk_perception(), rng).count() == DESK_PERCEPTION_PARAMS
    assert init_perception(paper_perception(), rng).count() == PAPER_PERCEPTION_PARAMS
    assert init_control(rng).count() == CONTROL_PARAMS
    assert init_discriminator(rng, 256).count() == DISCRIMINATOR_256_PARAMS
    for arch in (desk_perception(), paper_perception()):
        assert expected_param_count(arch) == init_perception(arch, rng).count()


def test_glorot_bounds_and_zero_bias():
    mod = init_perception(desk_perception(), np.random.default_rng(0))
    w = mod.params["enc.conv1.w"]
    lim = np.sqrt(6.0 / (9 * 8 + 9 * 16))
    assert np.abs(w).max() <= lim
    assert np.abs(w).max() > 0.9 * lim
    assert not mod.params["reg.fc0.b"].any()


def test_clone_is_independent_and_identical():
    rng = np.random.default_rng(0)
    src = init_perception(desk_perception(), rng)
    before = {k: v.copy() for k, v in src.params.items()}
    dst = clone_params(src)
    x = images(rng)
    np.testing.assert_array_equal(perception_forward(src, x), perception_forward(dst, x))
    for v in dst.params.values():
        v += 1.0
    for k in before:
        np.testing.assert_array_equal(src.params[k], before[k])


def test_clone_architecture_mismatch():
    rng = np.random.default_rng(0)
    a = init_discriminator(rng, 256, 1)
    b = init_discriminator(rng, 256, 2)
    with pytest.raises(ArchitectureMismatch):
        clone_params(a, b)


def test_combined_equals_composition():
    rng = np.random.default_rng(0)
    net = CombinedNetwork(init_perception(desk_perception(), rng), init_control(rng))
    x = images(rng, 3)
    qn = rng.uniform(0, 1, (3, 7))
    x_hat = perception_forward(net.perception, x)
    g = Graph()
    ref = control_graph(g, net.control.arch, bind(g, net.control, False),
                        g.constant(np.concatenate([x_hat, qn], axis=1))).data
    np.testing.assert_array_equal(combined_forward(net, x, qn), ref)
    if np.all((x_hat >= 0) & (x_hat <= 1)):
        np.testing.assert_array_equal(combined_forward(net, x, qn),
                                      control_forward(net.control, np.concatenate([x_hat, qn], 1)))


def test_module_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mod = init_perception(desk_perception(), rng)
    save_module(tmp_path / "p.ckpt", mod, {"note": "x"})
    back, header = load_module(tmp_path / "p.ckpt", expect=desk_perception())
    assert header["note"] == "x"
    assert back.arch == mod.arch
    for k in mod.params:
        np.testing.assert_array_equal(back.params[k], mod.params[k])
    with pytest.raises(ArchitectureMismatch):
        load_module(tmp_path / "p.ckpt", expect=paper_perception())


# -- whole-module gradient checks -----------------------------------------------------

def perception_gradcheck(seed):
    rng = np.random.default_rng(seed)
    mod = init_perception(desk_perception(), rng)
    for k in mod.names():
        if k.endswith(".b"):
            mod.params[k] += 0.05 * rng.standard_normal(mod.params[k].shape)
    x, y = images(rng), rng.uniform(0, 1, (2, 3))

    last = {}

    def lg():
        g = last["g"] = Graph()
        t = bind(g, mod)
        loss = g.apply("mse", regress(g, mod.arch, t, encode(g, mod.arch, t, g.constant(x))),
                       g.constant(y))
        return float(loss.data), backward(g, loss)
    return check_gradients(lg, mod.params, rng, n_coords=3, n_dirs=2,
                           signature=lambda: activation_signature(last["g"]))


def control_gradcheck(seed):
    rng = np.random.default_rng(seed)
    mod = init_control(rng)
    th, v = rng.uniform(0, 1, (4, 10)), rng.uniform(-0.5, 0.5, (4, 7))

    last = {}

    def lg():
        g = last["g"] = Graph()
        loss = g.apply("mse", control_graph(g, mod.arch, bind(g, mod), g.constant(th)), g.constant(v))
        return float(loss.data), backward(g, loss)
    return check_gradients(lg, mod.params, rng, n_coords=4, n_dirs=2,
                           signature=lambda: activation_signature(last["g"]))


def discriminator_gradcheck(seed):
    rng = np.random.default_rng(seed)
    D = init_discriminator(rng, 64)
    f = rng.standard_normal((6, 64))
    labels = rng.integers(0, 2, 6)

    last = {}

    def lg():
        g = last["g"] = Graph()
        p = discriminator_graph(g, D.arch, bind(g, D), g.constant(f))
        loss = g.apply("nll", p, labels=labels)
        return float(loss.data), backward(g, loss)
    return check_gradients(lg, D.params, rng, n_coords=4, n_dirs=2,
                           signature=lambda: activation_signature(last["g"]))


MODULE_CHECKS = {"perception": perception_gradcheck, "control": control_gradcheck,
                 "discriminator": discriminator_gradcheck}


@pytest.mark.parametrize("name", sorted(MODULE_CHECKS))
def test_module_gradients_match_finite_differences(name):
    for seed in range(20):
        assert MODULE_CHECKS[name](seed) < 1e-4, (name, seed)
