"""Tensor graph: forward semantics, backward rules, finite differences."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from avsr.errors import NumericError, ShapeError
from avsr.tensor import Graph, grad_check, op_tags


def test_matmul_identity():
    g = Graph()
    a = np.random.default_rng(0).normal(size=(3, 3))
    out = g.op("matmul", g.constant(np.eye(3)), g.constant(a))
    np.testing.assert_array_equal(out.value, a)


def test_softmax_symmetry():
    g = Graph()
    out = g.op("softmax_last", g.constant(np.zeros(4)))
    np.testing.assert_allclose(out.value, [0.25, 0.25, 0.25, 0.25], atol=0)


def test_layer_norm_constant_vector_is_zero_before_affine():
    g = Graph()
    x = g.constant(np.full((2, 5), 3.7))
    out = g.op("layer_norm", x, g.constant(np.ones(5)), g.constant(np.zeros(5)))
    np.testing.assert_array_equal(out.value, np.zeros((2, 5)))


def test_layer_norm_affine_offsets_constant_rows():
    g = Graph()
    x = g.constant(np.full((1, 4), -2.0))
    out = g.op("layer_norm", x, g.constant(np.full(4, 2.0)), g.constant(np.arange(4.0)))
    np.testing.assert_array_equal(out.value, np.arange(4.0)[None, :])


def test_backward_linear_scale():
    g = Graph()
    p = g.parameter("p", np.random.default_rng(0).normal(size=(2, 3)))
    loss = g.op("sum_all", g.op("scale", p, factor=3.0))
    grads = g.backward(loss)
    np.testing.assert_array_equal(grads["p"], np.full((2, 3), 3.0))


def test_backward_softmax_conservation():
    g = Graph()
    p = g.parameter("p", np.random.default_rng(1).normal(size=(7,)))
    loss = g.op("sum_all", g.op("softmax_last", p))
    grads = g.backward(loss)
    np.testing.assert_allclose(grads["p"], np.zeros(7), atol=1e-15)


def test_two_layer_network_matches_central_differences():
    rng = np.random.default_rng(7)
    g = Graph()
    x = g.constant(rng.normal(size=(4, 3)))
    w1 = g.parameter("w1", rng.normal(size=(3, 6)))
    b1 = g.parameter("b1", rng.normal(size=(6,)))
    w2 = g.parameter("w2", rng.normal(size=(6, 2)))
    h = g.op("relu", g.op("add", g.op("matmul", x, w1), b1))
    y = g.op("log_softmax_last", g.op("matmul", h, w2))
    loss = g.op("mean_all", g.op("mul", y, g.constant(rng.normal(size=(4, 2)))))
    assert grad_check(g, loss, h=1e-6) < 1e-5


def test_grad_check_linear_model_nearly_exact():
    rng = np.random.default_rng(3)
    g = Graph()
    w = g.parameter("w", rng.normal(size=(5, 2)))
    loss = g.op("sum_all", g.op("matmul", g.constant(rng.normal(size=(3, 5))), w))
    assert grad_check(g, loss, h=1e-6) < 1e-7


def test_grad_check_zero_parameter_graph():
    g = Graph()
    loss = g.op("sum_all", g.constant(np.ones((2, 2))))
    assert grad_check(g, loss) == 0.0
    assert g.backward(loss) == {}


def test_unreachable_parameter_gets_zero_gradient():
    g = Graph()
    p = g.parameter("touched", np.ones(3))
    q = g.parameter("untouched", np.ones(4))
    loss = g.op("sum_all", p)
    grads = g.backward(loss)
    np.testing.assert_array_equal(grads["touched"], np.ones(3))
    np.testing.assert_array_equal(grads["untouched"], np.zeros(4))


def test_non_scalar_loss_rejected():
    g = Graph()
    p = g.parameter("p", np.ones((2, 2)))
    with pytest.raises(NumericError, match="scalar"):
        g.backward(p)


def test_shape_error_names_the_op():
    g = Graph()
    with pytest.raises(ShapeError, match="matmul"):
        g.op("matmul", g.constant(np.ones((2, 3))), g.constant(np.ones((2, 3))))


def test_non_finite_output_rejected():
    g = Graph()
    big = g.constant(np.full(3, 1e308))
    with pytest.raises(NumericError, match="non-finite"):
        g.op("mul", big, big)


def test_all_masked_softmax_row_rejected():
    g = Graph()
    with pytest.raises(NumericError, match="masked"):
        g.op("softmax_last", g.constant(np.zeros((2, 3))), mask=np.zeros((2, 3), dtype=bool))


def test_forward_determinism():
    def build():
        rng = np.random.default_rng(11)
        g = Graph()
        x = g.parameter("x", rng.normal(size=(3, 3)))
        y = g.op("softmax_last", g.op("matmul", x, x))
        return y.value

    np.testing.assert_array_equal(build(), build())


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 6))
def test_softmax_rows_sum_to_one(seed, rows, cols):
    rng = np.random.default_rng(seed)
    g = Graph()
    out = g.op("softmax_last", g.constant(rng.normal(scale=20.0, size=(rows, cols))))
    np.testing.assert_allclose(out.value.sum(axis=-1), np.ones(rows), atol=1e-9)
    assert (out.value >= 0).all()


# ---------------------------------------------------------------------------
# finite differences across the whole closed op set
# ---------------------------------------------------------------------------


def _away_from_kinks(rng, shape, margin=0.2):
    """Random values bounded away from zero (ReLU kink) and from ties."""
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x) + (x == 0) * margin, x)


def _build_op_graph(tag, rng):
    g = Graph()
    if tag == "matmul":
        p = g.parameter("p", rng.normal(size=(3, 4)))
        out = g.op("matmul", p, g.parameter("q", rng.normal(size=(4, 2))))
    elif tag == "add":
        p = g.parameter("p", rng.normal(size=(3, 4)))
        out = g.op("add", p, g.parameter("q", rng.normal(size=(4,))))
    elif tag == "mul":
        p = g.parameter("p", rng.normal(size=(3, 4)))
        out = g.op("mul", p, g.parameter("q", rng.normal(size=(3, 4))))
    elif tag == "scale":
        out = g.op("scale", g.parameter("p", rng.normal(size=(3, 2))), factor=-1.7)
    elif tag == "concat_last":
        out = g.op("concat_last", g.parameter("p", rng.normal(size=(3, 2))), g.parameter("q", rng.normal(size=(3, 3))))
    elif tag == "relu":
        out = g.op("relu", g.parameter("p", _away_from_kinks(rng, (3, 4))))
    elif tag == "softmax_last":
        mask = rng.random((3, 4)) < 0.7
        mask[:, 0] = True
        out = g.op("softmax_last", g.parameter("p", rng.normal(size=(3, 4))), mask=mask)
    elif tag == "log_softmax_last":
        out = g.op("log_softmax_last", g.parameter("p", rng.normal(size=(3, 4))))
    elif tag == "layer_norm":
        out = g.op(
            "layer_norm",
            g.parameter("p", rng.normal(size=(3, 5))),
            g.parameter("g", rng.normal(size=(5,))),
            g.parameter("b", rng.normal(size=(5,))),
        )
    elif tag == "embedding":
        out = g.op("embedding", g.parameter("p", rng.normal(size=(6, 3))), ids=np.array([0, 2, 2, 5]))
    elif tag == "take_flat":
        out = g.op("take_flat", g.parameter("p", rng.normal(size=(4, 3))), idx=np.array([0, 5, 5, 11, 3]))
    elif tag == "mean_axis":
        out = g.op("mean_axis", g.parameter("p", rng.normal(size=(3, 4))), axis=1)
    elif tag == "sum_all":
        out = g.op("sum_all", g.parameter("p", rng.normal(size=(3, 4))))
    elif tag == "mean_all":
        out = g.op("mean_all", g.parameter("p", rng.normal(size=(3, 4))))
    elif tag == "transpose":
        out = g.op("transpose", g.parameter("p", rng.normal(size=(3, 4))))
    elif tag == "reshape":
        out = g.op("reshape", g.parameter("p", rng.normal(size=(3, 4))), shape=(2, 6))
    elif tag == "max_last":
        base = rng.normal(size=(3, 4))
        base += np.arange(4) * 0.5  # keep argmax unambiguous under perturbation
        out = g.op("max_last", g.parameter("p", base))
    elif tag == "pad":
        out = g.op("pad", g.parameter("p", rng.normal(size=(2, 3))), widths=[(1, 0), (0, 2)], value=0.5)
    elif tag == "dropout":
        out = g.op("dropout", g.parameter("p", rng.normal(size=(4, 4))), p=0.3, rng=np.random.default_rng(0))
    elif tag == "ctc":
        lp = g.op("log_softmax_last", g.parameter("p", rng.normal(size=(4, 3))))
        out = g.op("ctc", lp, target=(0, 1), blank=2)
    else:
        raise AssertionError(f"op {tag} missing a finite-difference case")
    if out.value.shape not in ((), (1,)):
        weights = g.constant(rng.normal(size=out.value.shape))
        out = g.op("sum_all", g.op("mul", out, weights))
    return g, out


@pytest.mark.parametrize("tag", op_tags())
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_op_matches_finite_differences(tag, seed):
    rng = np.random.default_rng(100 + seed)
    g, loss = _build_op_graph(tag, rng)
    assert grad_check(g, loss, h=1e-6) < 1e-4
