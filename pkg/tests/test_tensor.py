import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sprmamba import functional as F
from sprmamba.exceptions import ConfigurationError, DimensionError, UsageError
from sprmamba.gradcheck import check_gradients
from sprmamba.tensor import (Tensor, clamp_max, clamp_min, concat, exp, getitem, log, matmul, no_grad, sigmoid,
                             softplus, split, take, tanh, where)

SEEDS = range(20)


def leaf(rng, *shape, low=None, high=None):
    data = rng.standard_normal(shape) if low is None else rng.uniform(low, high, shape)
    return Tensor(data, requires_grad=True)


# -- forward values -------------------------------------------------------------
def test_matmul_hand_product():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_identity():
    m = np.random.default_rng(0).standard_normal((2, 2))
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(m)).data, m)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_softmax_closed_forms():
    np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(F.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], rtol=1e-12)
    big = F.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] == pytest.approx(0.0)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_are_distributions(seed):
    x = np.random.default_rng(seed).standard_normal((5, 7)) * 5
    p = F.softmax(Tensor(x), axis=-1).data
    assert np.max(np.abs(p.sum(axis=-1) - 1.0)) <= 1e-12
    assert np.all((p > 0) & (p < 1))


def test_conv1d_identity_kernel_all_dilations():
    x = np.random.default_rng(1).standard_normal((20, 3))
    kernel = np.zeros((3, 3, 3))
    kernel[1] = np.eye(3)
    for dilation in (1, 2, 4, 8, 32):
        for padding in ("same", "causal"):
            if padding == "causal":
                k = np.zeros((3, 3, 3))
                k[2] = np.eye(3)  # the newest tap is the last one in causal mode
            else:
                k = kernel
            np.testing.assert_array_equal(F.conv1d(Tensor(x), k, dilation=dilation, padding=padding).data, x)


def test_conv1d_impulse_offsets():
    x = np.zeros((11, 1))
    x[5] = 1.0
    out = F.conv1d(Tensor(x), np.ones((3, 1, 1)), dilation=2).data[:, 0]
    assert set(np.nonzero(out)[0]) == {3, 5, 7}


def test_conv1d_causal_ignores_future():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((16, 2))
    kernel = rng.standard_normal((3, 2, 2))
    base = F.conv1d(Tensor(x), kernel, dilation=2, padding="causal").data
    x2 = x.copy()
    x2[9] += 5.0
    moved = F.conv1d(Tensor(x2), kernel, dilation=2, padding="causal").data
    np.testing.assert_array_equal(base[:9], moved[:9])
    assert not np.array_equal(base[9:], moved[9:])


def test_conv1d_output_length_and_even_kernel():
    x = Tensor(np.ones((7, 2)))
    assert F.conv1d(x, np.ones((5, 2, 4)), dilation=3).shape == (7, 4)
    with pytest.raises(ConfigurationError):
        F.conv1d(x, np.ones((2, 2, 2)))
    with pytest.raises(ConfigurationError):
        F.conv1d(x, np.ones((3, 2, 2)), dilation=0)


def test_instance_norm_closed_forms():
    one = Tensor(np.ones(2))
    zero = Tensor(np.zeros(2))
    const = F.instance_norm(Tensor(np.full((5, 2), 3.0)), one, zero).data
    np.testing.assert_array_equal(const, 0.0)
    pair = F.instance_norm(Tensor([[-1.0], [1.0]]), Tensor([1.0]), Tensor([0.0]), eps=1e-5).data[:, 0]
    np.testing.assert_allclose(pair, [-1 / np.sqrt(1 + 1e-5), 1 / np.sqrt(1 + 1e-5)], rtol=1e-14)
    single = F.instance_norm(Tensor([[4.0, -2.0]]), one, zero).data
    np.testing.assert_array_equal(single, 0.0)


def test_instance_norm_standardises():
    x = np.random.default_rng(3).standard_normal((400, 4)) * 3 + 2
    out = F.instance_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-5)


def test_instance_norm_mask_ignores_pads():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 3))
    mask = np.array([1, 1, 1, 1, 0, 0], dtype=bool)
    g, b = Tensor(np.ones(3)), Tensor(np.zeros(3))
    ref = F.instance_norm(Tensor(x[:4]), g, b).data
    x[4:] = 1e3
    out = F.instance_norm(Tensor(x), g, b, mask=mask).data
    np.testing.assert_allclose(out[:4], ref, rtol=1e-12)
    np.testing.assert_array_equal(out[4:], 0.0)


def test_activations():
    assert F.silu(Tensor(0.0)).data == 0.0
    assert F.gelu(Tensor(0.0)).data == 0.0
    assert F.silu(Tensor(10.0)).data == pytest.approx(9.99954602, abs=1e-6)
    with pytest.raises(ConfigurationError):
        F.activation(Tensor(1.0), "swish")


def test_gelu_grid_shape():
    # GELU (exact or tanh form) has a single minimum near x = -0.75, so it is
    # non-decreasing only to the right of it; on the left it decreases towards 0-
    x = np.linspace(-5, 5, 2001)
    y = F.gelu(Tensor(x)).data
    turn = int(np.argmin(y))
    assert -0.8 < x[turn] < -0.7
    assert np.all(np.diff(y[turn:]) >= 0)
    assert np.all(np.diff(y[: turn + 1]) <= 0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        (x * 2).backward()


def test_square_sum_gradient():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, -4.0, 6.0])


def test_softmax_sum_gradient_is_zero():
    x = Tensor(np.random.default_rng(5).standard_normal(6), requires_grad=True)
    F.softmax(x).sum().backward()
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (x * 3).sum()
    assert not y.requires_grad


def test_determinism():
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    first = F.gelu(matmul(Tensor(a), Tensor(b))).data
    again = F.gelu(matmul(Tensor(a), Tensor(b))).data
    assert first.tobytes() == again.tobytes()


# -- finite-difference checks, >= 20 seeds per op ------------------------------------
ELEMENTARY = {
    "add_broadcast": lambda r: ((lambda a, b: lambda: ((a + b) ** 2).sum()), (leaf(r, 3, 4), leaf(r, 4))),
    "mul_div": lambda r: ((lambda a, b: lambda: (a * b / (b * b + 1.0)).sum()), (leaf(r, 3, 4), leaf(r, 3, 4))),
    "exp_log": lambda r: ((lambda a: lambda: (exp(a * 0.3) + log(a * a + 1.0)).sum()), (leaf(r, 5),)),
    "tanh_sigmoid_softplus": lambda r: ((lambda a: lambda: (tanh(a) * sigmoid(a) + softplus(a)).sum()),
                                        (leaf(r, 6),)),
    "matmul": lambda r: ((lambda a, b: lambda: (matmul(a, b) ** 2).sum()), (leaf(r, 3, 4), leaf(r, 4, 2))),
    "batched_matmul": lambda r: ((lambda a, b: lambda: (matmul(a, b) ** 2).sum()), (leaf(r, 2, 3, 4), leaf(r, 4, 2))),
    "softmax": lambda r: ((lambda a: lambda: (F.softmax(a, -1) * np.arange(5.0)).sum()), (leaf(r, 3, 5),)),
    "log_softmax": lambda r: ((lambda a: lambda: (F.log_softmax(a, -1) * np.arange(5.0)).sum()), (leaf(r, 3, 5),)),
    "silu_gelu": lambda r: ((lambda a: lambda: (F.silu(a) * F.gelu(a)).sum()), (leaf(r, 7),)),
    "conv1d_same": lambda r: ((lambda x, k: lambda: (F.conv1d(x, k, dilation=2) ** 2).sum()),
                              (leaf(r, 9, 2), leaf(r, 3, 2, 3))),
    "conv1d_causal": lambda r: ((lambda x, k: lambda: (F.conv1d(x, k, dilation=1, padding="causal") ** 2).sum()),
                                (leaf(r, 9, 2), leaf(r, 3, 2, 3))),
    "depthwise": lambda r: ((lambda x, k: lambda: (F.depthwise_conv1d(x, k) ** 2).sum()), (leaf(r, 8, 3), leaf(r, 3, 3))),
    "instance_norm": lambda r: ((lambda x, g, b: lambda: (F.instance_norm(x, g, b) * np.arange(12.0).reshape(6, 2)).sum()),
                                (leaf(r, 6, 2), leaf(r, 2), leaf(r, 2))),
    "instance_norm_causal": lambda r: ((lambda x, g, b: lambda: (F.instance_norm(x, g, b, causal=True) ** 3).sum()),
                                       (leaf(r, 6, 2), leaf(r, 2), leaf(r, 2))),
    "layer_norm": lambda r: ((lambda x, g, b: lambda: (F.layer_norm(x, g, b) * np.arange(8.0).reshape(2, 4)).sum()),
                             (leaf(r, 2, 4), leaf(r, 4), leaf(r, 4))),
    "getitem_take_concat": lambda r: ((lambda a: lambda: (concat([getitem(a, (slice(1, 3),)), take(a, np.array([2, -1, 0, 2]))], 0) ** 2).sum()),
                                      (leaf(r, 4, 3),)),
    "split_where_clamp": lambda r: ((lambda a: lambda: sum((clamp_min(clamp_max(p, 1.5), -1.5) ** 2).sum() for p in split(where(np.arange(6) % 2 == 0, a, a * 2.0), [2, 4]))),
                                    (leaf(r, 6),)),
    "composite": lambda r: ((lambda x, w, g, b: lambda: F.gelu(F.instance_norm(matmul(x, w), g, b)).sum()),
                            (leaf(r, 5, 3), leaf(r, 3, 4), leaf(r, 4), leaf(r, 4))),
}


@pytest.mark.parametrize("name", sorted(ELEMENTARY))
@pytest.mark.parametrize("seed", SEEDS)
def test_elementary_gradients(name, seed):
    rng = np.random.default_rng(seed)
    make, tensors = ELEMENTARY[name](rng)
    fn = make(*tensors)
    # keep clamp kinks away from the probe step
    assert check_gradients(fn, tensors, eps=1e-5) <= 1e-4
