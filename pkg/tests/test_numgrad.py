import gc
import weakref

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adtreach.numgrad import (Graph, NonFiniteGradient, OptimState, ShapeError, backward,
                              forward_op, load_checkpoint, rmsprop_step, save_checkpoint)
from adtreach.numgrad import _pykernels
from adtreach.numgrad.gradcheck import check_gradients, fd_coordinates, rel_error


def run(kind, *arrays, **attrs):
    g = Graph()
    return forward_op(kind, [g.constant(a) for a in arrays], **attrs).data


def test_maxpool_trivial():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert run("maxpool2x2", x).reshape(-1).tolist() == [4.0]


def test_relu_trivial():
    assert run("relu", np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]


def test_conv_identity_kernel():
    img = np.arange(9.0).reshape(1, 3, 3, 1)
    w = np.zeros((3, 3, 1, 1))
    w[1, 1, 0, 0] = 1.0
    np.testing.assert_array_equal(run("conv2d", img, w, np.zeros(1)), img)


def test_shape_mismatch_reports_kind_and_shapes():
    g = Graph()
    with pytest.raises(ShapeError) as e:
        g.apply("linear", g.constant(np.ones((2, 3))), g.constant(np.ones((4, 5))),
                g.constant(np.ones(5)))
    assert e.value.kind == "linear"
    assert (2, 3) in e.value.shapes and (4, 5) in e.value.shapes
    with pytest.raises(ShapeError):
        run("maxpool2x2", np.ones((1, 3, 4, 1)))
    with pytest.raises(ShapeError):
        run("add", np.ones(3), np.ones(4))


def test_square_gradient():
    g = Graph()
    x = g.param("x", np.array([3.0]))
    loss = g.apply("reshape", x * x, shape=())
    assert backward(g, loss)["x"][0] == 6.0


def test_backward_rejects_non_scalar():
    g = Graph()
    x = g.param("x", np.ones(3))
    with pytest.raises(ValueError):
        backward(g, x * x)


def test_relu_zero_subgradient():
    g = Graph()
    x = g.param("x", np.array([0.0, 1.0]))
    y = g.apply("relu", x)
    w = g.constant(np.array([1.0, 1.0]))
    loss = g.apply("reshape", g.apply("linear", g.apply("reshape", y, shape=(1, 2)),
                                      g.constant(np.ones((2, 1))), g.constant(np.zeros(1))),
                   shape=())
    del w
    np.testing.assert_array_equal(backward(g, loss)["x"], [0.0, 1.0])


def test_maxpool_tie_goes_to_first():
    g = Graph()
    x = g.param("x", np.full((1, 2, 2, 1), 5.0))
    y = g.apply("reshape", g.apply("maxpool2x2", x), shape=(1, 1))
    loss = g.apply("mse", y, g.constant(np.zeros((1, 1))))
    grad = backward(g, loss)["x"].reshape(-1)
    assert grad[0] == 5.0 and np.all(grad[1:] == 0.0)


def test_unreached_parameter_gets_zero_grad():
    g = Graph()
    a = g.param("a", np.array([2.0]))
    g.param("b", np.array([1.0]))
    grads = backward(g, g.apply("reshape", a * a, shape=()))
    assert grads["b"].tolist() == [0.0]


# -- finite-difference checks, one per op kind -------------------------------

def _op_case(kind, rng):
    """(input arrays, attrs, trailing reduction) for a random small instance."""
    if kind == "conv2d":
        return [rng.standard_normal((2, 4, 4, 2)), rng.standard_normal((3, 3, 2, 3)),
                rng.standard_normal(3)], {}
    if kind == "maxpool2x2":
        # well-separated values keep the perturbation away from ties
        return [0.1 * rng.permutation(64).reshape(2, 4, 4, 2).astype(float)], {}
    if kind == "linear":
        return [rng.standard_normal((3, 4)), rng.standard_normal((4, 2)),
                rng.standard_normal(2)], {}
    if kind in ("add", "mul"):
        return [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))], {}
    if kind == "log":
        return [rng.uniform(0.5, 2.0, (3, 4))], {}
    if kind == "relu":
        x = rng.standard_normal((3, 4))
        return [np.where(np.abs(x) < 0.05, 0.3, x)], {}
    if kind in ("sigmoid", "softmax"):
        return [rng.standard_normal((3, 4))], {}
    if kind == "scale":
        return [rng.standard_normal((3, 4))], {"c": -1.7}
    if kind == "reshape":
        return [rng.standard_normal((3, 4))], {"shape": (4, 3)}
    if kind == "concat":
        return [rng.standard_normal((3, 2)), rng.standard_normal((3, 5))], {}
    if kind == "mse":
        return [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))], {}
    if kind == "nll":
        p = rng.uniform(0.1, 1.0, (4, 3))
        return [p / p.sum(1, keepdims=True)], {"labels": rng.integers(0, 3, 4)}
    raise KeyError(kind)


ALL_OPS = ["conv2d", "maxpool2x2", "relu", "linear", "sigmoid", "softmax", "add", "mul",
           "scale", "log", "reshape", "concat", "mse", "nll"]


def op_gradcheck(kind, seed):
    rng = np.random.default_rng(seed)
    arrays, attrs = _op_case(kind, rng)
    params = {f"in{i}": a for i, a in enumerate(arrays)}
    probe = None

    def loss_and_grads():
        nonlocal probe
        g = Graph()
        ins = [g.param(k, v) for k, v in params.items()]
        out = g.apply(kind, *ins, **attrs)
        if out.data.size == 1:
            loss = g.apply("reshape", out, shape=())
        else:
            flat = g.apply("reshape", out, shape=(1, out.data.size))
            if probe is None:
                probe = rng.standard_normal((1, out.data.size))
            loss = g.apply("mse", flat, g.constant(probe))
        return float(loss.data), backward(g, loss)

    return check_gradients(loss_and_grads, params, rng)


@pytest.mark.parametrize("kind", ALL_OPS)
def test_op_gradients_match_finite_differences(kind):
    for seed in range(20):
        assert op_gradcheck(kind, seed) < 1e-4, (kind, seed)


def test_softmax_simplex():
    rng = np.random.default_rng(3)
    p = run("softmax", 10 * rng.standard_normal((50, 5)))
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all((p > 0) & (p < 1))


def test_log_is_clamped():
    assert run("log", np.array([0.0]))[0] == pytest.approx(np.log(1e-12))


def _tiny_net(params, x, t):
    g = Graph()
    p = {k: g.param(k, v) for k, v in params.items()}
    h = g.apply("relu", g.apply("conv2d", g.constant(x), p["w1"], p["b1"]))
    h = g.apply("maxpool2x2", h)
    h = g.apply("reshape", h, shape=(x.shape[0], -1))
    y = g.apply("linear", h, p["w2"], p["b2"])
    return g, g.apply("mse", y, g.constant(t))


def _tiny_params(rng):
    return {"w1": rng.standard_normal((3, 3, 2, 3)) * 0.5, "b1": rng.standard_normal(3) * 0.1,
            "w2": rng.standard_normal((12, 2)) * 0.5, "b2": np.zeros(2)}


def test_determinism_bit_identical():
    rng = np.random.default_rng(11)
    params = _tiny_params(rng)
    x, t = rng.standard_normal((2, 4, 4, 2)), rng.standard_normal((2, 2))
    g1, l1 = _tiny_net(params, x, t)
    g2, l2 = _tiny_net(params, x, t)
    assert l1.data.tobytes() == l2.data.tobytes()
    a, b = backward(g1, l1), backward(g2, l2)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_backward_is_linear():
    rng = np.random.default_rng(5)
    params = _tiny_params(rng)
    x = rng.standard_normal((2, 4, 4, 2))
    t1, t2 = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    a, b = 0.3, -1.2
    g, l1 = _tiny_net(params, x, t1)
    gr1 = backward(g, l1)
    g, l2 = _tiny_net(params, x, t2)
    gr2 = backward(g, l2)
    g = Graph()
    p = {k: g.param(k, v) for k, v in params.items()}
    h = g.apply("maxpool2x2", g.apply("relu", g.apply("conv2d", g.constant(x), p["w1"], p["b1"])))
    y = g.apply("linear", g.apply("reshape", h, shape=(2, -1)), p["w2"], p["b2"])
    loss = g.apply("mse", y, g.constant(t1)).scale(a) + g.apply("mse", y, g.constant(t2)).scale(b)
    gc = backward(g, loss)
    for k in params:
        np.testing.assert_allclose(gc[k], a * gr1[k] + b * gr2[k], atol=1e-10, rtol=0)


# -- kernels ------------------------------------------------------------------

def test_compiled_kernels_match_reference():
    from adtreach.numgrad import kernels
    if kernels.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    from adtreach.numgrad import _ckernels
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 8, 6, 5))
    cols = _pykernels.im2col3x3(x)
    assert np.array_equal(cols, _ckernels.im2col3x3(x))
    assert np.array_equal(_pykernels.col2im3x3(cols, 3, 8, 6, 5),
                          _ckernels.col2im3x3(cols, 3, 8, 6, 5))
    x[0, 0, 0, 0] = x[0, 0, 1, 0] = 9.0  # tie
    o1, a1 = _pykernels.maxpool2x2_fwd(x)
    o2, a2 = _ckernels.maxpool2x2_fwd(x)
    assert np.array_equal(o1, o2) and np.array_equal(a1, a2)
    assert np.array_equal(_pykernels.maxpool2x2_bwd(o1, a1), _ckernels.maxpool2x2_bwd(o1, a1))


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 5, 4, 3))
    y = rng.standard_normal((2 * 5 * 4, 27))
    lhs = np.sum(_pykernels.im2col3x3(x) * y)
    rhs = np.sum(x * _pykernels.col2im3x3(y, 2, 5, 4, 3))
    assert lhs == pytest.approx(rhs, rel=1e-12)


# -- RMSProp -------------------------------------------------------------------

def test_rmsprop_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    st_ = OptimState(lr=0.01, mean_sq={"w": np.array([4.0, 1.0])})
    rmsprop_step(p, {"w": np.zeros(2)}, st_)
    assert p["w"].tolist() == [1.0, -2.0]
    np.testing.assert_array_equal(st_.mean_sq["w"], [3.6, 0.9])


def test_rmsprop_scalar_hand_oracle():
    p = {"p": np.array([1.0])}
    st_ = OptimState(lr=0.01, rho=0.9, eps=1e-8)
    rmsprop_step(p, {"p": np.array([2.0])}, st_)
    e = 0.9 * 0.0 + 0.1 * 2.0 ** 2
    expected = 1.0 - 0.01 * 2.0 / (e + 1e-8) ** 0.5
    assert st_.mean_sq["p"][0] == pytest.approx(0.4, abs=1e-15)
    assert p["p"][0] == pytest.approx(expected, abs=1e-15)


def test_rmsprop_second_step_smaller():
    p = {"p": np.array([1.0])}
    st_ = OptimState(lr=0.01)
    g = {"p": np.array([2.0])}
    rmsprop_step(p, g, st_)
    first = 1.0 - p["p"][0]
    before = p["p"][0]
    rmsprop_step(p, g, st_)
    second = before - p["p"][0]
    # E grows 0.4 -> 0.76 so the normalized step shrinks, and both exceed lr*g/|g|
    assert 0.01 < second < first


def test_rmsprop_nan_aborts_without_modifying():
    p = {"a": np.array([1.0]), "b": np.array([2.0])}
    st_ = OptimState(lr=0.1)
    with pytest.raises(NonFiniteGradient) as e:
        rmsprop_step(p, {"a": np.array([1.0]), "b": np.array([np.nan])}, st_)
    assert e.value.name == "b"
    assert p["a"][0] == 1.0 and not st_.mean_sq


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
def test_rmsprop_mean_sq_nonnegative(gs):
    p = {"w": np.zeros(1)}
    s = OptimState(lr=0.01)
    for g in gs:
        rmsprop_step(p, {"w": np.array([g])}, s)
        assert s.mean_sq["w"][0] >= 0.0


# -- checkpoint ------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    tensors = {"enc.conv0.w": rng.standard_normal((3, 3, 3, 8)), "b": np.array([np.pi]),
               "scalar": np.array(1.5)}
    path = tmp_path / "c.ngc"
    save_checkpoint(path, tensors, {"arch": "desk"})
    back, header = load_checkpoint(path)
    assert header == {"arch": "desk"}
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()
    save_checkpoint(tmp_path / "d.ngc", back, header)
    assert (tmp_path / "d.ngc").read_bytes() == path.read_bytes()


def test_gradcheck_helpers_detect_wrong_gradient():
    arr = np.array([1.0, 2.0])
    num = fd_coordinates(lambda: float(np.sum(arr ** 3)), arr, [0, 1])
    np.testing.assert_allclose(num, 3 * arr ** 2, rtol=1e-7)
    assert rel_error(num, 2 * arr ** 2) > 0.1


def test_dropped_graph_freed_without_cycle_collection():
    gc.disable()
    try:
        g = Graph()
        x = g.param("x", np.ones((2, 3)))
        g.apply("mse", x.scale(2.0), g.constant(np.zeros((2, 3))))
        ref = weakref.ref(g)
        del g
        assert ref() is None
        with pytest.raises(ReferenceError):
            x.scale(1.0)
    finally:
        gc.enable()
