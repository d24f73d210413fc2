import numpy as np
import pytest
from hypothesis import given, strategies as st

from segan import _kernels
from segan.tensor import (Parameter, Tensor, avg_pool, concat_channels, conv2d, grad_check,
                          nearest_upsample, no_grad, relative_error, same_padding)


def conv_loop(x, w, b=None, stride=1, pad=(0, 0)):
    """Direct quadruple loop, cross-correlation convention."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    lo, hi = pad
    xp = np.zeros((B, C, H + lo + hi, W + lo + hi))
    xp[:, :, lo:lo + H, lo:lo + W] = x
    Ho = (H + lo + hi - k) // stride + 1
    Wo = (W + lo + hi - k) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[n, c, i * stride + di, j * stride + dj] * w[o, c, di, dj]
                    out[n, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


# -- conv2d --------------------------------------------------------------------

def test_conv_constant_field():
    y = conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))))
    assert y.shape == (1, 2, 2)
    assert np.all(y.data == 4.0)


def test_conv_scalar_product():
    y = conv2d(Tensor(np.array([[[5.0]]])), Tensor(np.array([[[[3.0]]]])))
    assert y.data.ravel().tolist() == [15.0]


def test_conv_against_loop_2x5x5(rng):
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 4, 4))
    got = conv2d(Tensor(x), Tensor(w)).data
    assert np.max(np.abs(got - conv_loop(x[None], w)[0])) < 1e-12


@pytest.mark.parametrize("backend", sorted(_kernels.BACKENDS))
@pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 6])
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backends_match_loop(backend, k, stride, rng):
    mod = _kernels.BACKENDS[backend]
    for C, O, side in [(1, 1, 6), (4, 4, 8), (2, 3, 7)]:
        if side < k:
            continue
        x = rng.standard_normal((2, C, side, side))
        w = rng.standard_normal((O, C, k, k))
        got = mod.conv2d_forward(x, w, stride)
        assert np.max(np.abs(got - conv_loop(x, w, stride=stride))) < 1e-12


@pytest.mark.parametrize("backend", sorted(_kernels.BACKENDS))
def test_conv_backward_backends_agree(backend, rng):
    mod = _kernels.BACKENDS[backend]
    ref = _kernels.BACKENDS["python"]
    x = rng.standard_normal((2, 3, 9, 9))
    w = rng.standard_normal((4, 3, 4, 4))
    for stride in (1, 2):
        g = rng.standard_normal(ref.conv2d_forward(x, w, stride).shape)
        gx, gw = mod.conv2d_backward(x, w, g, stride)
        rx, rw = ref.conv2d_backward(x, w, g, stride)
        assert np.max(np.abs(gx - rx)) < 1e-12
        assert np.max(np.abs(gw - rw)) < 1e-12


def test_same_padding_even_kernels():
    assert same_padding(2) == (0, 1, 0, 1)
    assert same_padding(4) == (1, 2, 1, 2)
    assert same_padding(6) == (2, 3, 2, 3)
    assert same_padding(3) == (1, 1, 1, 1)


@pytest.mark.parametrize("k", [2, 3, 4, 6])
def test_conv_same_keeps_size_and_matches_loop(k, rng):
    x = rng.standard_normal((1, 2, 8, 8))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(3)
    y = conv2d(Tensor(x), Tensor(w), Tensor(b), padding="same")
    assert y.shape == (1, 3, 8, 8)
    assert np.max(np.abs(y.data - conv_loop(x, w, b, pad=same_padding(k)[:2]))) < 1e-12


def test_conv_output_size_formula(rng):
    x = rng.standard_normal((1, 1, 9, 9))
    for k, s, p in [(3, 2, 1), (4, 1, 0), (2, 3, 2)]:
        y = conv2d(Tensor(x), Tensor(np.ones((1, 1, k, k))), stride=s, padding=p)
        assert y.shape[-1] == (9 + 2 * p - k) // s + 1


def test_conv_errors():
    with pytest.raises(ValueError, match="channel"):
        conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 2, 2))))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), stride=0)


# -- elementwise and reductions --------------------------------------------------

def test_small_examples():
    assert Tensor(np.array(-1.0)).leaky_relu(0.2).item() == pytest.approx(-0.2)
    assert Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])).mean().item() == 2.5
    assert Tensor(np.array(0.0)).sigmoid().item() == 0.5


def test_log_sqrt_reject_nonpositive():
    with pytest.raises(ValueError):
        Tensor(np.array([1.0, 0.0])).log()
    with pytest.raises(ValueError):
        Tensor(np.array([-1.0])).sqrt()


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 3)))


def test_sigmoid_extreme_values_finite():
    s = Tensor(np.array([-800.0, 0.0, 800.0])).sigmoid().data
    assert np.all(np.isfinite(s))
    assert s[0] == 0.0 and s[2] == 1.0


def test_resampling_ops():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    down = avg_pool(x)
    assert down.data[0, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]
    up = nearest_upsample(down)
    assert up.shape == (1, 1, 4, 4)
    assert up.data[0, 0, 1, 1] == 2.5
    cat = concat_channels([x, x * 2.0])
    assert cat.shape == (1, 2, 4, 4)


# -- backward --------------------------------------------------------------------

def test_backward_examples():
    p = Parameter(np.array([1.0, 2.0, 3.0]), "p")
    assert p.square().sum().backward()["p"].tolist() == [2.0, 4.0, 6.0]
    q = Parameter(np.ones(4), "q")
    assert np.all(q.mean().backward()["q"] == 0.25)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        (Parameter(np.ones(3), "p") * 2.0).backward()


def test_backward_repeatable(rng):
    w = Parameter(rng.standard_normal((2, 1, 3, 3)), "w")
    x = Tensor(rng.random((2, 1, 8, 8)))

    def grads():
        return conv2d(x, w, padding="same").leaky_relu().square().mean().backward()["w"]
    assert np.array_equal(grads(), grads())


def test_diamond_graph_accumulates():
    p = Parameter(np.array([2.0]), "p")
    a = p * 3.0
    root = (a * a + a).sum()  # 9p^2 + 3p
    assert root.backward()["p"][0] == pytest.approx(18 * 2 + 3)


def test_backward_linearity(rng):
    w = Parameter(rng.standard_normal((1, 1, 3, 3)), "w")
    x = Tensor(rng.random((1, 1, 8, 8)))

    def L1():
        return conv2d(x, w).sigmoid().mean()

    def L2():
        return conv2d(x, w).square().sum()
    a, b = 0.7, -1.3
    g = (L1() * a + L2() * b).backward()["w"]
    ref = a * L1().backward()["w"] + b * L2().backward()["w"]
    assert np.max(np.abs(g - ref)) < 1e-12


def test_no_grad_builds_no_graph():
    p = Parameter(np.ones(2), "p")
    with no_grad():
        y = (p * 2.0).sum()
    assert y._parents == () or not y.requires_grad


def test_gradients_only_for_named_leaves():
    p = Parameter(np.ones(2), "p")
    c = Tensor(np.ones(2))
    g = (p * c).sum().backward()
    assert set(g) == {"p"}


# -- finite-difference oracle ------------------------------------------------------

def test_grad_check_quadratic(rng):
    p = Parameter(rng.standard_normal(6), "p")
    A = rng.standard_normal((6, 6))
    A = A @ A.T
    At = Tensor(A)
    rep = grad_check(lambda: (p.reshape(1, 6) @ At @ p.reshape(6, 1)).sum(), [p])
    assert rep.worst < 1e-9


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "square", "sqrt", "log", "exp",
                                "sigmoid", "leaky", "mean", "sum", "pool", "upsample", "concat",
                                "matmul", "transpose", "getitem", "pow", "clip"])
def test_every_op_passes_grad_check(op, rng):
    a = Parameter(0.1 + 0.9 * rng.random((2, 2, 4, 4)), "a")
    b = Parameter(0.1 + 0.9 * rng.random((2, 2, 4, 4)), "b")
    fns = {
        "add": lambda: (a + b).square().sum(),
        "sub": lambda: (a - b).square().sum(),
        "mul": lambda: (a * b).sum(),
        "div": lambda: (a / b).sum(),
        "square": lambda: a.square().sum(),
        "sqrt": lambda: a.sqrt().sum(),
        "log": lambda: a.log().sum(),
        "exp": lambda: a.exp().sum(),
        "sigmoid": lambda: a.sigmoid().sum(),
        "leaky": lambda: ((a - 0.55).leaky_relu(0.2) * b).sum(),
        "mean": lambda: (a.mean(axis=(1, 2)) * b.mean(axis=(1, 2))).sum(),
        "sum": lambda: (a.sum(axis=1, keepdims=True) * b).sum(),
        "pool": lambda: (avg_pool(a) * avg_pool(b)).sum(),
        "upsample": lambda: (nearest_upsample(a) ** 3).sum(),
        "concat": lambda: (concat_channels([a, b * a]) ** 2).sum(),
        "matmul": lambda: (a @ b).sum(),
        "transpose": lambda: (a.transpose(0, 1, 3, 2) * b).sum(),
        "getitem": lambda: (a[:, 1, 1:3] * b[:, 0, :2]).sum(),
        "pow": lambda: (a ** 3).sum(),
        "clip": lambda: (a.clip(0.3, 0.8) * b).sum(),
    }
    rep = grad_check(fns[op], [a, b])
    assert rep.ok(1e-5), rep.lines()


def test_grad_check_reports_nonfinite():
    p = Parameter(np.array([1.0]), "p")
    rep = grad_check(lambda: (p * np.inf).sum(), [p])
    assert rep.nonfinite == ["p"]
    assert not rep.ok()


def test_grad_check_composite_loss(rng):
    w = Parameter(rng.standard_normal((2, 1, 3, 3)) * 0.5, "w")
    x = Tensor(0.1 + 0.9 * rng.random((1, 1, 8, 8)))
    t = Tensor(rng.random((1, 2, 8, 8)))
    rep = grad_check(lambda: (conv2d(x, w, padding="same").sigmoid() - t).square().mean(), [w])
    assert rep.ok(1e-5), rep.lines()


def test_relative_error_floor():
    assert relative_error(np.array(0.0), np.array(0.0)) == 0.0
    assert relative_error(np.array(1.0), np.array(1.0 + 1e-9)) < 1e-9


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
def test_leaky_relu_definition(vals):
    a = np.array(vals)
    out = Tensor(a).leaky_relu(0.2).data
    assert np.array_equal(out, np.where(a >= 0, a, 0.2 * a))
