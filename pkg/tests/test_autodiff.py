import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaxgan import autodiff as ad
from relaxgan.autodiff import Tensor, Graph
from relaxgan.gradcheck import check_grads, rel_error, numeric_grad


def _u(rng, *shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


def _away_from_zero(rng, *shape):
    x = _u(rng, *shape)
    return np.where(np.abs(x) < 0.1, 0.5, x)


# each case: (name, builder(rng) -> (arrays, fn)); fn maps tensors to a tensor
def _cases():
    def w(fn, *arrays):
        return list(arrays), fn

    return {
        "matmul": lambda r: w(lambda t: ad.matmul(*t), _u(r, 3, 4), _u(r, 4, 2)),
        "matmul_batched": lambda r: w(lambda t: ad.matmul(*t), _u(r, 2, 3, 4), _u(r, 4, 2)),
        "add_broadcast": lambda r: w(lambda t: t[0] + t[1], _u(r, 3, 4), _u(r, 4)),
        "sub": lambda r: w(lambda t: t[0] - t[1], _u(r, 3, 4), _u(r, 3, 1)),
        "mul": lambda r: w(lambda t: t[0] * t[1], _u(r, 3, 4), _u(r, 3, 4)),
        "div": lambda r: w(lambda t: t[0] / t[1], _u(r, 3, 4), _u(r, 3, 4, lo=0.5, hi=2.0)),
        "power": lambda r: w(lambda t: t[0] ** 3, _u(r, 5)),
        "exp": lambda r: w(lambda t: ad.exp(t[0]), _u(r, 5)),
        "log": lambda r: w(lambda t: ad.log(t[0]), _u(r, 5, lo=0.2, hi=2.0)),
        "sigmoid": lambda r: w(lambda t: ad.sigmoid(t[0]), _u(r, 3, 4)),
        "tanh": lambda r: w(lambda t: ad.tanh(t[0]), _u(r, 3, 4)),
        "relu": lambda r: w(lambda t: ad.relu(t[0]), _away_from_zero(r, 3, 4)),
        "softplus": lambda r: w(lambda t: ad.softplus(t[0]), _u(r, 3, 4)),
        "softmax": lambda r: w(lambda t: ad.softmax(t[0]), _u(r, 3, 5)),
        "conv1d_same": lambda r: w(lambda t: ad.conv1d_same(*t), _u(r, 2, 6, 3), _u(r, 3, 3, 4)),
        "batch_norm": lambda r: w(lambda t: ad.batch_norm(*t), _u(r, 4, 3, 2), _u(r, 2), _u(r, 2)),
        "sum": lambda r: w(lambda t: ad.sum(t[0], axis=1), _u(r, 3, 4)),
        "mean": lambda r: w(lambda t: ad.mean(t[0], axis=0, keepdims=True), _u(r, 3, 4)),
        "l2_norm": lambda r: w(lambda t: ad.l2_norm(t[0], axis=1), _u(r, 3, 4)),
        "concat": lambda r: w(lambda t: ad.concat(t, axis=1), _u(r, 2, 3), _u(r, 2, 2)),
        "stack": lambda r: w(lambda t: ad.stack(t, axis=1), _u(r, 2, 3), _u(r, 2, 3)),
        "getitem": lambda r: w(lambda t: t[0][:, 1:3], _u(r, 3, 4)),
        "broadcast_to": lambda r: w(lambda t: ad.broadcast_to(t[0], (3, 4)), _u(r, 1, 4)),
        "transpose": lambda r: w(lambda t: ad.transpose(t[0], (1, 0, 2)), _u(r, 2, 3, 4)),
        "reshape": lambda r: w(lambda t: ad.reshape(t[0], (4, 3)), _u(r, 3, 4)),
    }


CASES = _cases()


def primitive_errors(name, trials, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        arrays, fn = CASES[name](rng)
        out_shape = fn([Tensor(a) for a in arrays]).shape
        weights = rng.uniform(-1, 1, size=out_shape)
        errs = check_grads(lambda t: ad.sum(fn(t) * weights), arrays)
        worst = max(worst, max(errs))
    return worst


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_matches_finite_differences(name):
    assert primitive_errors(name, trials=20) < 1e-4


def test_identity_matmul():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(ad.matmul(np.eye(3), a).data, a)


def test_softmax_equal_logits_is_uniform():
    out = ad.softmax(np.full((2, 7), 3.3)).data
    assert np.allclose(out, 1 / 7, atol=1e-15)


def test_conv_delta_kernel_is_identity():
    x = np.random.default_rng(0).normal(size=(2, 6, 1))
    w = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
    assert np.array_equal(ad.conv1d_same(x, w).data, x)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.floats(-50, 50))
def test_softmax_rows_are_distributions(rows, cols, scale):
    x = np.random.default_rng(rows * 10 + cols).normal(size=(rows, cols)) * scale
    y = ad.softmax(x).data
    assert np.all(np.abs(y.sum(-1) - 1) < 1e-9)
    assert np.all(y >= 0) and np.all(y <= 1)


def test_softmax_entries_strictly_inside_unit_interval_for_moderate_logits():
    y = ad.softmax(np.random.default_rng(0).uniform(-2, 2, size=(100, 5))).data
    assert np.all((y > 0) & (y < 1))


def test_shape_mismatch_names_kind_and_shapes():
    with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(np.ones((2, 3)), np.ones((4,)))


def test_sum_of_squares_gradient():
    w = Tensor([1.0, -2.0], requires_grad=True)
    with Graph() as g:
        grads = g.backward(ad.sum(w * w))
    assert np.array_equal(grads[w.node_id].data, [2.0, -4.0])


def test_unused_leaf_gets_zero_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True)
    v = Tensor([3.0], requires_grad=True)
    with Graph() as g:
        grads = g.backward(ad.sum(w * 2.0), wrt=[w, v])
    assert np.array_equal(grads[v.node_id].data, [0.0])


def test_non_scalar_loss_rejected():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        with pytest.raises(ad.ShapeError):
            g.backward(w * 2.0)


def test_random_four_layer_graph():
    rng = np.random.default_rng(3)
    arrays = [_u(rng, 5, 4), _u(rng, 4, 6), _u(rng, 6), _u(rng, 6, 3), _u(rng, 3, 2)]

    def net(t):
        h = ad.tanh(ad.matmul(t[0], t[1]) + t[2])
        h = ad.sigmoid(ad.matmul(h, t[3]))
        h = ad.softmax(ad.matmul(h, t[4]))
        return ad.sum(h * h)

    assert max(check_grads(net, arrays)) < 1e-4


def test_nonfinite_forward_names_op():
    with pytest.raises(ad.NonFiniteError, match="log"):
        ad.log(np.array([0.0, 1.0]))
    with pytest.raises(ad.NonFiniteError, match="exp"):
        ad.exp(np.array([1e4]))


def test_nonfinite_backward_names_op():
    # sqrt is finite at 0 but its derivative is not
    with ad.Graph() as g:
        x = ad.Tensor(np.array([0.0, 1.0]), requires_grad=True)
        y = ad.sum(ad.power(x, 0.5))
        with np.errstate(divide="ignore"), pytest.raises(ad.NonFiniteError, match="adjoint of 'pow'"):
            g.backward(y)


def test_graph_records_in_topological_order():
    w = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g:
        ad.sum(ad.tanh(w * 2.0) + w)
    seen = {w.node_id}
    for rec in g.records:
        for t in rec.inputs:
            if isinstance(t, Tensor) and t.requires_grad:
                assert t.node_id in seen
        seen.add(rec.output.node_id)


def test_no_grad_records_nothing():
    w = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g, ad.no_grad():
        ad.sum(w * w)
    assert len(g) == 0


def test_replay_is_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        x = rng.normal(size=(3, 4))
        with Graph() as g:
            y = ad.softmax(ad.tanh(ad.matmul(x, w)))
            grads = g.backward(ad.sum(y * y))
        return y.data, grads[w.node_id].data

    a, b = run(), run()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


# --- second order

def test_linear_critic_closed_form():
    w = Tensor(np.array([1.0, 2.0, 2.0]), requires_grad=True)   # norm 3
    x = Tensor(np.array([0.3, -0.1, 0.7]), requires_grad=True)
    lam = 10.0
    with Graph() as g:
        grad = ad.grad_as_node(g, ad.sum(w * x), x)
        pen = lam * (ad.l2_norm(grad, axis=0) - 1.0) ** 2
        gw = g.backward(pen, wrt=[w])[w.node_id].data
    assert np.array_equal(grad.data, w.data)
    assert abs(pen.item() - 40.0) < 1e-10
    n = np.linalg.norm(w.data)
    assert np.max(np.abs(gw - 2 * lam * (n - 1) * w.data / n)) < 1e-10


def test_quadratic_critic_gradient_node():
    rng = np.random.default_rng(0)
    w0, x0 = rng.normal(size=4), rng.normal(size=4)
    w = Tensor(w0, requires_grad=True)
    x = Tensor(x0, requires_grad=True)
    with Graph() as g:
        grad = ad.grad_as_node(g, ad.sum(w * x) ** 2, x)
    assert np.allclose(grad.data, 2 * (w0 @ x0) * w0, rtol=1e-12)

    def penalty(t):
        xv = Tensor(x0, requires_grad=True)
        gr = ad.grad_as_node(ad.active_graph(), ad.sum(t[0] * xv) ** 2, xv)
        return (ad.l2_norm(gr, axis=0) - 1.0) ** 2

    # the numeric side also needs a graph to form the inner gradient
    wt = Tensor(w0.copy(), requires_grad=True)
    with Graph() as g:
        pen = penalty([wt])
        analytic = g.backward(pen, wrt=[wt])[wt.node_id].data

    def value():
        with Graph():
            return penalty([Tensor(wt.data, requires_grad=True)]).item()

    assert rel_error(analytic, numeric_grad(value, wt.data)) < 1e-3


def test_gradient_of_constant_is_zero():
    x = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g:
        grad = ad.grad_as_node(g, Tensor(5.0), x)
    assert np.array_equal(grad.data, np.zeros(3))


def test_grad_as_node_rejects_foreign_tensor():
    with Graph() as g:
        with pytest.raises(ValueError):
            ad.grad_as_node(g, Tensor(1.0), Tensor(np.ones(2)))


def two_layer_penalty_error(seed):
    """Relative error of the penalty's weight gradient for a random 2-layer critic."""
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-1, 1, size=(3, 4))
    arrays = [rng.uniform(-1, 1, size=(4, 5)), rng.uniform(-1, 1, size=5), rng.uniform(-1, 1, size=(5, 1))]

    def penalty(ws):
        x = Tensor(x0, requires_grad=True)
        s = ad.matmul(ad.tanh(ad.matmul(x, ws[0]) + ws[1]), ws[2])
        gr = ad.grad_as_node(ad.active_graph(), ad.sum(s), x)
        return 10.0 * ad.mean((ad.l2_norm(gr, axis=1) - 1.0) ** 2)

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Graph() as g:
        grads = g.backward(penalty(leaves), wrt=leaves)

    def value():
        with Graph():
            return penalty([Tensor(l.data, requires_grad=True) for l in leaves]).item()

    return max(rel_error(grads[l.node_id].data, numeric_grad(value, l.data)) for l in leaves)


def test_double_backward_two_layer_critic():
    assert max(two_layer_penalty_error(s) for s in range(10)) < 1e-3
