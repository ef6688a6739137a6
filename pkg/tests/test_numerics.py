"""Kernel tests: hand-checkable cases plus finite-difference verification."""

import math

import numpy as np
import pytest

from simvtp import numerics as nm
from simvtp.errors import ContractError, DegenerateMaskError, ShapeError


def fd_check(build, params, tol=1e-6, h=1e-5, seed=0):
    """Run the central-difference oracle over every coordinate."""
    report = nm.grad_check(build, params, h=h, tol=tol, rng=np.random.default_rng(seed))
    assert report.passed, (
        f"max rel err {report.max_rel_err:.3e} > {tol:.1e} at "
        f"{report.worst.param}{report.worst.index}: "
        f"analytic={report.worst.analytic}, numeric={report.worst.numeric}"
    )
    return report


def randp(rng, *shape):
    return nm.parameter(rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def test_matmul_identity():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 3))
    out = nm.matmul(nm.constant(np.eye(3)), nm.constant(a))
    np.testing.assert_allclose(out.data, a, rtol=0, atol=1e-14)


def test_matmul_hand_case():
    out = nm.matmul(nm.constant([[1.0, 2.0], [3.0, 4.0]]), nm.constant([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        nm.matmul(nm.constant(np.zeros((2, 3))), nm.constant(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_matmul_grad_of_sum_equals_bt_broadcast():
    rng = np.random.default_rng(2)
    a = randp(rng, 4, 3)
    b = randp(rng, 3, 5)
    loss = nm.array_sum(nm.matmul(a, b))
    loss.backward()
    # d sum(AB) / dA[i, j] = sum_n B[j, n], independent of i
    expected = np.tile(b.data.sum(axis=1), (4, 1))
    np.testing.assert_allclose(a.grad, expected, rtol=1e-12)
    fd_check(lambda: nm.array_sum(nm.matmul(a, b)), {"a": a, "b": b})


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matmul_batched_fd(seed):
    rng = np.random.default_rng(seed)
    shapes = [((2, 3, 4), (4, 5)), ((2, 2, 3, 4), (2, 2, 4, 2)), ((5, 4), (4, 3))]
    a_s, b_s = shapes[seed % len(shapes)]
    a, b = randp(rng, *a_s), randp(rng, *b_s)
    w = nm.constant(rng.standard_normal(np.matmul(a.data, b.data).shape))
    fd_check(lambda: nm.array_sum(nm.mul(nm.matmul(a, b), w)), {"a": a, "b": b})


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------


def test_softmax_symmetric_pair():
    out = nm.softmax(nm.constant([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-12)


def test_softmax_large_values_no_overflow():
    out = nm.softmax(nm.constant([1000.0, 1000.0]))
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-12)


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 9))
    p = nm.softmax(nm.constant(x), axis=-1)
    np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, atol=1e-6)
    p_shift = nm.softmax(nm.constant(x + 17.3), axis=-1)
    np.testing.assert_allclose(p.data, p_shift.data, atol=1e-6)


def test_softmax_invalid_axis():
    with pytest.raises(ShapeError):
        nm.softmax(nm.constant(np.zeros((2, 2))), axis=5)


def test_softmax_fd():
    rng = np.random.default_rng(4)
    x = randp(rng, 3, 7)
    w = nm.constant(rng.standard_normal((3, 7)))
    fd_check(lambda: nm.array_sum(nm.mul(nm.softmax(x, axis=-1), w)), {"x": x})


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------


def test_layer_norm_constant_row():
    x = nm.constant(np.full((2, 8), 3.7))
    gamma = nm.constant(np.ones(8))
    beta = nm.constant(np.zeros(8))
    out = nm.layer_norm(x, gamma, beta)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-7)
    out_b = nm.layer_norm(x, gamma, nm.constant(np.full(8, 2.5)))
    np.testing.assert_allclose(out_b.data, 2.5, atol=1e-7)


def test_layer_norm_shape_guard():
    with pytest.raises(ShapeError):
        nm.layer_norm(nm.constant(np.zeros((2, 8))), nm.constant(np.ones(4)), nm.constant(np.zeros(8)))


def test_layer_norm_fd():
    rng = np.random.default_rng(5)
    x, gamma, beta = randp(rng, 4, 6), randp(rng, 6), randp(rng, 6)
    w = nm.constant(rng.standard_normal((4, 6)))
    fd_check(
        lambda: nm.array_sum(nm.mul(nm.layer_norm(x, gamma, beta), w)),
        {"x": x, "gamma": gamma, "beta": beta},
    )


# ---------------------------------------------------------------------------
# gelu / cross entropy / mse
# ---------------------------------------------------------------------------


def test_gelu_zero_and_fd():
    assert nm.gelu(nm.constant([0.0])).data[0] == 0.0
    rng = np.random.default_rng(6)
    x = randp(rng, 20)
    w = nm.constant(rng.standard_normal(20))
    fd_check(lambda: nm.array_sum(nm.mul(nm.gelu(x), w)), {"x": x})


def test_cross_entropy_confident_prediction_is_zero():
    logits = nm.constant(np.array([[500.0, 0.0, 0.0], [0.0, 500.0, 0.0]]))
    loss = nm.cross_entropy(logits, np.array([0, 1]))
    assert abs(loss.item()) < 1e-9


def test_cross_entropy_uniform_logits_is_log_v():
    v = 13
    logits = nm.constant(np.zeros((4, v)))
    loss = nm.cross_entropy(logits, np.array([0, 5, 7, 12]))
    assert abs(loss.item() - math.log(v)) < 1e-12


def test_cross_entropy_fd():
    rng = np.random.default_rng(7)
    logits = randp(rng, 5, 6)
    targets = rng.integers(0, 6, size=5)
    fd_check(lambda: nm.cross_entropy(logits, targets), {"logits": logits})


def test_cross_entropy_target_range_guard():
    with pytest.raises(ContractError):
        nm.cross_entropy(nm.constant(np.zeros((2, 3))), np.array([0, 3]))


def test_mse_identity_is_zero():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((3, 4))
    mask = rng.random((3, 4)) > 0.5
    mask[0, 0] = True
    loss = nm.mse(nm.constant(x), nm.constant(x.copy()), mask)
    assert loss.item() == 0.0


def test_mse_full_mask_equals_plain_mean():
    rng = np.random.default_rng(9)
    p, t = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
    loss = nm.mse(nm.constant(p), nm.constant(t), np.ones((4, 5), dtype=bool))
    assert abs(loss.item() - np.mean((p - t) ** 2)) < 1e-12


def test_mse_normalizes_by_selected_count():
    p = nm.constant(np.array([[1.0, 0.0], [0.0, 0.0]]))
    t = nm.constant(np.zeros((2, 2)))
    mask = np.array([[True, False], [False, False]])
    assert abs(nm.mse(p, t, mask).item() - 1.0) < 1e-12


def test_mse_empty_mask_raises():
    with pytest.raises(DegenerateMaskError):
        nm.mse(nm.constant(np.zeros((2, 2))), nm.constant(np.zeros((2, 2))), np.zeros((2, 2), dtype=bool))


def test_mse_fd():
    rng = np.random.default_rng(10)
    p = randp(rng, 3, 6)
    t = nm.constant(rng.standard_normal((3, 6)))
    mask = rng.random((3, 6)) > 0.4
    mask[1, 1] = True
    fd_check(lambda: nm.mse(p, t, mask), {"p": p})


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def test_elementwise_broadcast_rules():
    big = nm.constant(np.zeros((2, 3, 4)))
    ok = nm.add(big, nm.constant(np.ones(4)))
    assert ok.shape == (2, 3, 4)
    with pytest.raises(ShapeError) as err:
        nm.add(big, nm.constant(np.ones((2, 3))))
    assert "(2, 3, 4)" in str(err.value) and "(2, 3)" in str(err.value)


def test_dtype_mixing_rejected():
    with pytest.raises(ContractError):
        nm.add(nm.constant(np.zeros(2, dtype=np.float32)), nm.constant(np.zeros(2, dtype=np.float64)))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_elementwise_fd(seed):
    rng = np.random.default_rng(100 + seed)
    a = randp(rng, 2, 5)
    b = randp(rng, 5)
    b.data += 3.0  # keep division well conditioned
    op = [nm.add, nm.sub, nm.mul, nm.div][seed]
    w = nm.constant(rng.standard_normal((2, 5)))
    fd_check(lambda: nm.array_sum(nm.mul(op(a, b), w)), {"a": a, "b": b})


def test_exp_log_fd():
    rng = np.random.default_rng(11)
    x = randp(rng, 8)
    x.data = np.abs(x.data) + 0.5
    fd_check(lambda: nm.array_sum(nm.log(nm.exp(x))), {"x": x})


def test_reshape_transpose_concat_slice_fd():
    rng = np.random.default_rng(12)
    a, b = randp(rng, 2, 3, 4), randp(rng, 2, 2, 4)
    w = nm.constant(rng.standard_normal((2, 4, 5)))

    def build():
        cat = nm.concat([a, b], axis=1)            # [2, 5, 4]
        tr = nm.transpose(cat, (0, 2, 1))          # [2, 4, 5]
        sl = nm.slice_axis(tr, 2, 0, 5)
        return nm.array_sum(nm.mul(nm.reshape(sl, (2, 4, 5)), w))

    fd_check(build, {"a": a, "b": b})


def test_gather_scatter_fd():
    rng = np.random.default_rng(13)
    table = randp(rng, 7, 3)
    ids = rng.integers(0, 7, size=(2, 4))
    fd_check(lambda: nm.array_sum(nm.gather_rows(table, ids)), {"table": table})

    x = randp(rng, 2, 6, 3)
    idx = np.stack([rng.permutation(6)[:4] for _ in range(2)])
    w = nm.constant(rng.standard_normal((2, 4, 3)))
    fd_check(lambda: nm.array_sum(nm.mul(nm.gather_tokens(x, idx), w)), {"x": x})

    y = randp(rng, 2, 4, 3)
    w2 = nm.constant(rng.standard_normal((2, 6, 3)))
    fd_check(lambda: nm.array_sum(nm.mul(nm.scatter_tokens(y, idx, 6), w2)), {"y": y})


def test_scatter_rejects_duplicate_indices():
    x = nm.constant(np.zeros((1, 2, 3)))
    with pytest.raises(ContractError):
        nm.scatter_tokens(x, np.array([[1, 1]]), 4)


def test_l2_normalize_unit_norm_and_fd():
    rng = np.random.default_rng(14)
    x = randp(rng, 5, 6)
    out = nm.l2_normalize(x)
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), 1.0, atol=1e-6)
    w = nm.constant(rng.standard_normal((5, 6)))
    fd_check(lambda: nm.array_sum(nm.mul(nm.l2_normalize(x), w)), {"x": x})


def test_mean_sum_axis_fd():
    rng = np.random.default_rng(15)
    x = randp(rng, 3, 4, 5)
    w = nm.constant(rng.standard_normal((3, 5)))
    fd_check(lambda: nm.array_sum(nm.mul(nm.mean(x, axis=1), w)), {"x": x})
    fd_check(lambda: nm.mean(nm.array_sum(x, axis=(0, 2))), {"x": x})


# ---------------------------------------------------------------------------
# graph mechanics
# ---------------------------------------------------------------------------


def test_fanout_accumulates_both_contributions():
    x = nm.parameter(np.array(2.0))
    y = nm.parameter(np.array(5.0))
    z = nm.add(nm.mul(x, y), x)  # dz/dx = y + 1
    z.backward()
    assert x.grad == pytest.approx(6.0)
    assert y.grad == pytest.approx(2.0)


def test_deep_reuse_chain():
    x = nm.parameter(np.array(3.0))
    acc = x
    for _ in range(4):
        acc = nm.add(acc, x)  # acc = 5x
    acc.backward()
    assert x.grad == pytest.approx(5.0)


def test_backward_requires_scalar():
    x = nm.parameter(np.zeros(3))
    with pytest.raises(ContractError):
        nm.mul(x, x).backward()


def test_no_grad_produces_constants():
    x = nm.parameter(np.ones(3))
    with nm.no_grad():
        y = nm.mul(x, x)
    assert not y.requires_grad
    assert y._parents == ()


# ---------------------------------------------------------------------------
# grad_check harness
# ---------------------------------------------------------------------------


def test_grad_check_square_closed_form():
    x = nm.parameter(np.array(3.0))
    report = nm.grad_check(lambda: nm.mul(x, x), {"x": x}, h=1e-6)
    assert report.passed
    coord = report.coords[0]
    assert coord.analytic == pytest.approx(6.0)
    assert coord.numeric == pytest.approx(6.0, abs=1e-7)


def test_grad_check_constant_function_zero_grad():
    x = nm.parameter(np.array([1.0, 2.0]))
    c = nm.constant(np.array(4.0))
    report = nm.grad_check(lambda: nm.add(nm.mul(nm.array_sum(x), 0.0), c), {"x": x})
    assert report.passed
    assert report.max_rel_err == 0.0


def test_grad_check_rejects_non_scalar():
    x = nm.parameter(np.ones(2))
    with pytest.raises(ContractError):
        nm.grad_check(lambda: nm.mul(x, x), {"x": x})


def test_grad_check_rejects_float32():
    x = nm.parameter(np.ones(2, dtype=np.float32))
    with pytest.raises(ContractError):
        nm.grad_check(lambda: nm.array_sum(x), {"x": x})


def test_grad_check_sampling_covers_every_param():
    rng = np.random.default_rng(16)
    a, b = randp(rng, 10, 10), randp(rng, 10)
    report = nm.grad_check(
        lambda: nm.array_sum(nm.mul(nm.add(a, b), a)),
        {"a": a, "b": b},
        samples_per_param=3,
        rng=np.random.default_rng(1),
    )
    assert report.passed
    assert {c.param for c in report.coords} == {"a", "b"}
    assert report.n_coords == 6


@pytest.mark.parametrize("seed", range(4))
def test_randomized_composite_graphs_fd(seed):
    """Random small expression graphs stay within 1e-6 of central differences."""
    rng = np.random.default_rng(200 + seed)
    m, k, n = rng.integers(2, 5, size=3)
    a, b = randp(rng, int(m), int(k)), randp(rng, int(k), int(n))
    g1, b1 = randp(rng, int(n)), randp(rng, int(n))

    def build():
        h = nm.gelu(nm.matmul(a, b))
        h = nm.layer_norm(h, g1, b1)
        p = nm.softmax(h, axis=-1)
        return nm.mean(nm.mul(p, p))

    fd_check(build, {"a": a, "b": b, "g1": g1, "b1": b1})
