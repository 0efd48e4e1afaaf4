import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from chanfree.autodiff import Adam, Param, Tensor, TrainSchedule, functional as F, grad_check, no_grad
from chanfree.autodiff.gradcheck import numerical_grad
from chanfree.autodiff.nn import BatchNorm1d, Conv1d, Embedding, LayerNorm, Linear
from chanfree.errors import ConfigurationError, InputError, NumericError

TOL = 1e-6


def param(rng, *shape):
    return Param(rng.normal(size=shape))


def check(fn, inputs, tol=TOL):
    report = grad_check(fn, inputs, tolerance=tol)
    assert report.ok, report.per_input


@pytest.mark.parametrize("op", [F.add, F.sub, F.mul])
def test_broadcasting_binary_ops(rng, op):
    a, b = param(rng, 3, 4), param(rng, 4)
    check(lambda: F.sum(op(a, b) * op(a, b)), [a, b])


def test_div(rng):
    a = param(rng, 3, 4)
    b = Param(rng.uniform(1.0, 2.0, size=(3, 1)))
    check(lambda: F.sum(F.div(a, b)), [a, b])


def test_elementwise_nonlinearities(rng):
    x = Param(rng.normal(size=(5, 6)) + 0.05)  # keep clear of relu's kink
    check(lambda: F.sum(F.tanh(x) * F.relu(x)), [x])


def test_shape_ops(rng):
    x = param(rng, 2, 3, 4)
    w = Tensor(rng.normal(size=(4, 3, 2)))
    check(lambda: F.sum(F.transpose(F.reshape(x, (2, 12)).reshape(2, 3, 4), (2, 1, 0)) * w), [x])


def test_getitem_and_concat(rng):
    a, b = param(rng, 4, 3), param(rng, 4, 2)
    w = Tensor(rng.normal(size=(2, 5)))
    check(lambda: F.sum(F.getitem(F.concat([a, b], axis=1), (slice(1, 3),)) * w), [a, b])


def test_take_rows_accumulates_repeats(rng):
    x = param(rng, 4, 3)
    rows = np.array([0, 2, 2, 3, 0])
    w = Tensor(rng.normal(size=(5, 3)))
    check(lambda: F.sum(F.take_rows(x, rows) * w), [x])


def test_scatter_rows(rng):
    x = param(rng, 3, 2)
    out = F.scatter_rows(x, np.array([4, 0, 2]), 6)
    assert np.array_equal(out.data[[1, 3, 5]], np.zeros((3, 2)))
    w = Tensor(rng.normal(size=(6, 2)))
    check(lambda: F.sum(F.scatter_rows(x, np.array([4, 0, 2]), 6) * w), [x])


def test_reductions(rng):
    x = param(rng, 3, 4, 5)
    check(lambda: F.sum(F.mean(x, axis=(0, 2)) * F.sum(x, axis=1, keepdims=True).sum()), [x])


def test_bmm(rng):
    a, b = param(rng, 2, 3, 4), param(rng, 2, 4, 5)
    check(lambda: F.sum(F.tanh(F.bmm(a, b))), [a, b])


def test_softmax_and_cross_entropy(rng):
    x = param(rng, 4, 5)
    labels = np.array([0, 4, 2, 2])
    weights = np.array([0.1, 0.2, 0.3, 0.4])
    check(lambda: F.sum(F.softmax(x, axis=0) * F.softmax(x, axis=1)), [x])
    check(lambda: F.softmax_cross_entropy(x, labels, weights), [x])
    assert F.softmax_cross_entropy(x, labels).item() == pytest.approx(oracles.cross_entropy(x.data, labels), abs=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_conv1d_matches_loop_oracle_and_gradients(rng, stride, padding):
    x, w, b = param(rng, 2, 3, 11), param(rng, 4, 3, 3), param(rng, 4)
    out = F.conv1d(x, w, b, stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, oracles.conv1d(x.data, w.data, b.data, stride, padding), atol=1e-12)
    check(lambda: F.sum(F.tanh(F.conv1d(x, w, b, stride=stride, padding=padding))), [x, w, b])


def test_batch_norm_train_and_eval_gradients(rng):
    x, g, b = param(rng, 3, 4, 5), Param(rng.uniform(0.5, 1.5, 4)), param(rng, 4)
    mix = Tensor(rng.normal(size=(3, 4, 5)))
    check(lambda: F.sum(F.batch_norm(x, g, b)[0] * mix), [x, g, b])
    mu, var = rng.normal(size=4), rng.uniform(0.5, 2.0, 4)
    check(lambda: F.sum(F.batch_norm(x, g, b, mu, var)[0] * mix), [x, g, b])


def test_layer_norm_and_embedding(rng):
    x, g, b = param(rng, 3, 6), Param(rng.uniform(0.5, 1.5, 6)), param(rng, 6)
    mix = Tensor(rng.normal(size=(3, 6)))
    check(lambda: F.sum(F.layer_norm(x, g, b) * mix), [x, g, b])
    table = param(rng, 5, 3)
    ids = np.array([[0, 4], [4, 1]])
    check(lambda: F.sum(F.tanh(F.embedding(table, ids))), [table])


def test_numerical_grad_agrees_with_independent_differences(rng):
    x = param(rng, 3, 4)
    ours = numerical_grad(lambda: F.sum(F.tanh(x) * x), x)
    ref = oracles.fd_grad(lambda a: float((np.tanh(a) * a).sum()), x.data)
    np.testing.assert_allclose(ours, ref, atol=1e-7)


def test_grad_check_catches_a_wrong_backward(rng):
    from chanfree.autodiff.tensor import make_node
    x = param(rng, 4)

    def bad_square(t):
        return make_node(t.data ** 2, (t,), lambda g: t._accumulate(g * t.data))  # missing factor 2
    assert not grad_check(lambda: F.sum(bad_square(x)), [x], tolerance=1e-4).ok


def test_grad_check_requires_double(rng):
    x = Param(rng.normal(size=3).astype(np.float32))
    with pytest.raises(TypeError):
        grad_check(lambda: F.sum(x), [x])


@given(st.integers(1, 3), st.integers(1, 4), st.integers(3, 12), st.integers(1, 3), st.sampled_from([1, 3, 5]),
       st.integers(0, 10_000))
def test_conv1d_property(n, c_in, length, stride, k, seed):
    r = np.random.default_rng(seed)
    padding = (k - 1) // 2
    x, w = r.normal(size=(n, c_in, length)), r.normal(size=(2, c_in, k))
    out = F.conv1d(Tensor(x), Tensor(w), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, oracles.conv1d(x, w, None, stride, padding), atol=1e-12)


def test_layer_modules_forward(rng):
    lin = Linear(3, 2, rng)
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose(lin(Tensor(x)).data, x @ lin.weight.data.T + lin.bias.data, atol=1e-14)
    conv = Conv1d(2, 3, 5, rng)
    assert conv(Tensor(rng.normal(size=(1, 2, 9)))).shape == (1, 3, 9)
    assert conv.macs(9) == 3 * 2 * 5 * 9
    with pytest.raises(ConfigurationError):
        Conv1d(2, 3, 4, rng)
    ln = LayerNorm(3)
    y = ln(Tensor(x)).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)


def test_batchnorm_running_statistics(rng):
    bn = BatchNorm1d(3, momentum=0.1)
    with pytest.raises(ConfigurationError):
        bn.eval()
        bn(Tensor(rng.normal(size=(2, 3, 4))))
    bn.train()
    x1, x2 = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4)) + 1
    bn(Tensor(x1))
    mu1, var1 = oracles.bn_stats(x1)
    np.testing.assert_allclose(bn.running_mean, mu1, atol=1e-12)
    np.testing.assert_allclose(bn.running_var, var1 * 8 / 7, atol=1e-12)
    bn(Tensor(x2))
    mu2, _ = oracles.bn_stats(x2)
    np.testing.assert_allclose(bn.running_mean, 0.9 * mu1 + 0.1 * mu2, atol=1e-12)
    with pytest.raises(ConfigurationError):
        bn(Tensor(rng.normal(size=(1, 3, 1))))


def test_embedding_grow_keeps_rows(rng):
    emb = Embedding(3, 4, rng)
    old = emb.table.data.copy()
    emb.grow(6, rng)
    assert emb.table.shape == (6, 4)
    np.testing.assert_array_equal(emb.table.data[:3], old)
    with pytest.raises(InputError):
        F.embedding(emb.table, np.array([6]))


def test_no_grad_builds_no_graph(rng):
    x = param(rng, 3)
    with no_grad():
        y = F.sum(x * x)
    assert not y.requires_grad and y._parents == ()


def test_non_finite_input_raises_numeric_error(rng):
    x = Tensor(np.array([[1.0, np.nan]]))
    with pytest.raises(NumericError):
        F.linear(x, Param(np.ones((2, 2))))


def test_cross_entropy_validates_labels(rng):
    logits = param(rng, 2, 3)
    with pytest.raises(InputError):
        F.softmax_cross_entropy(logits, np.array([0, 3]))
    with pytest.raises(InputError):
        F.softmax_cross_entropy(logits, np.array([0.0, 1.0]))


def test_adam_matches_hand_computed_step():
    p = Param(np.array([1.0, -2.0]))
    opt = Adam([p], TrainSchedule(learning_rate=0.1, epochs=1))
    p.grad = np.array([0.5, -1.0])
    opt.step(0)
    # first bias-corrected step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)


def test_cosine_schedule_endpoints():
    s = TrainSchedule(learning_rate=0.01, epochs=10, lr_floor=0.001)
    assert s.lr_at(0) == pytest.approx(0.01)
    assert s.lr_at(5) == pytest.approx(0.0055)
    assert s.lr_at(10) == pytest.approx(0.001)
