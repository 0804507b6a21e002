import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from branchnet.gradcheck import check_gradients, kink_margin, random_problem, relative_error
from branchnet.gradient import Gradients, Source, backward, combine_shared, log_multinomial_loss
from branchnet.linalg import ContractViolation
from branchnet.network import NetworkSpec, Parameters, forward, init_params, zero_params

TOL = 1e-5


def test_log_loss_examples():
    assert log_multinomial_loss(np.eye(3), [0, 1, 2]) == 0.0
    assert log_multinomial_loss(np.full((4, 20), 0.05), [0, 5, 19, 7]) == pytest.approx(math.log(20), abs=1e-12)
    assert log_multinomial_loss(np.array([[0.5, 0.5]]), [0]) == pytest.approx(math.log(2), abs=1e-15)


def test_log_loss_clamps_zero_probability():
    assert log_multinomial_loss(np.array([[1.0, 0.0]]), [1]) == pytest.approx(-math.log(1e-12))


def test_log_loss_rejects_bad_labels():
    with pytest.raises(ContractViolation):
        log_multinomial_loss(np.full((1, 3), 1 / 3), [3])
    with pytest.raises(ContractViolation):
        log_multinomial_loss(np.full((2, 3), 1 / 3), [0])


@pytest.mark.parametrize("seed", range(8))
def test_gradients_match_finite_differences(seed):
    result = check_gradients(seed, NetworkSpec(5, (4,), 1, 3, 2), l2_lambda=0.05, h=1e-6)
    assert result.max_rel_error <= TOL, result.worst


@given(
    st.integers(0, 10_000),
    st.sampled_from([((4, 3, 4), 1), ((4, 3, 4), 2), ((4, 3, 4), 3), ((6, 5), 2), ((3,), 1)]),
    st.sampled_from([0.0, 1e-4, 0.3]),
)
def test_gradients_match_finite_differences_deeper(seed, topology, lam):
    widths, tap = topology
    spec = NetworkSpec(5, widths, tap, 4, 3)
    spec, params, x, _, _ = random_problem(seed, spec)
    # a ±h step must not cross a ReLU kink
    assume(kink_margin(spec, params, x) > 1e-4)
    result = check_gradients(seed, spec, l2_lambda=lam)
    assert result.max_rel_error <= TOL, result.worst


def test_relative_error_floor_only_touches_near_zero_entries():
    assert relative_error(np.array([1e-27]), np.array([0.0]))[0] < 1e-19
    assert relative_error(np.array([1.0]), np.array([1.1]))[0] == pytest.approx(0.1 / 1.1)


def _problem(seed=0, lam=0.0, spec=None):
    spec = spec or NetworkSpec(6, (5, 4, 3), 2, 4, 3)
    _, params, x, fine, coarse = random_problem(seed, spec, batch=8)
    trace = forward(spec, params, x)
    return spec, params, trace, fine, coarse


def test_structural_zeros():
    spec, params, trace, fine, coarse = _problem()
    gf, gb, _ = backward(spec, params, trace, fine, coarse, 0.1)
    assert gf.source is Source.FINAL and gb.source is Source.BRANCH
    assert not gf.branch[0].any() and not gf.branch[1].any()
    for w, b in gb.trunk[spec.branch_tap:]:
        assert not w.any() and not b.any()
    assert gb.trunk[0][0].any()


def test_l2_contribution_is_exactly_additive():
    spec, params, trace, fine, coarse = _problem(seed=3)
    lam = 0.25
    _, gb0, loss0 = backward(spec, params, trace, fine, coarse, 0.0)
    _, gb1, loss1 = backward(spec, params, trace, fine, coarse, lam)
    w1 = params.trunk[0][0]
    np.testing.assert_array_equal(gb1.trunk[0][0], gb0.trunk[0][0] + 2 * lam * w1)
    # (a + d) - d is only equal to a up to rounding
    np.testing.assert_allclose(gb1.trunk[0][0] - 2 * lam * w1, gb0.trunk[0][0], rtol=0, atol=1e-15)
    for a, b in zip(gb0.blocks()[1:], gb1.blocks()[1:]):
        np.testing.assert_array_equal(a, b)
    assert loss0.l2_term == 0.0
    assert loss1.branch_loss - loss1.l2_term == pytest.approx(loss0.branch_loss, abs=1e-15)
    assert loss1.l2_term == pytest.approx(lam * float((w1**2).sum()), rel=1e-12)


def test_zero_head_gradient_closed_form(rng):
    # zero head weights -> uniform probabilities -> dW = h^T (U - Y) / n
    spec = NetworkSpec(4, (3,), 1, 5, 2)
    params = init_params(spec, 2)
    params.trunk[0] = (rng.normal(size=(4, 3)), rng.uniform(0.5, 1.0, size=3))
    params.trunk[-1] = (np.zeros((3, 5)), np.zeros(5))
    params.branch = (np.zeros((3, 2)), np.zeros(2))
    x = rng.normal(size=(6, 4))
    fine = np.array([0, 1, 2, 3, 4, 0])
    coarse = np.array([0, 1, 1, 0, 1, 0])
    trace = forward(spec, params, x)
    gf, gb, _ = backward(spec, params, trace, fine, coarse, 0.0)
    h = np.maximum(x @ params.trunk[0][0] + params.trunk[0][1], 0)
    for g, k, labels in ((gf.trunk[-1], 5, fine), (gb.branch, 2, coarse)):
        resid = np.full((6, k), 1 / k) - np.eye(k)[labels]
        np.testing.assert_allclose(g[0], h.T @ resid / 6, rtol=1e-13, atol=1e-16)
        np.testing.assert_allclose(g[1], resid.sum(axis=0) / 6, rtol=1e-13, atol=1e-16)


def test_zero_parameter_losses():
    spec = NetworkSpec(8, (6, 5), 1, 20, 5)
    x = np.random.default_rng(0).normal(size=(11, 8))
    trace = forward(spec, zero_params(spec), x)
    _, _, losses = backward(spec, zero_params(spec), trace, np.arange(11) % 20, np.arange(11) % 5, 0.3)
    assert abs(losses.final_loss - math.log(20)) <= 1e-12
    assert abs(losses.branch_loss - math.log(5)) <= 1e-12


def test_backward_rejects_bad_labels():
    spec, params, trace, fine, coarse = _problem()
    with pytest.raises(ContractViolation):
        backward(spec, params, trace, fine + 10, coarse, 0.0)
    with pytest.raises(ContractViolation):
        backward(spec, params, trace, fine[:-1], coarse, 0.0)


def _grads(spec, value_f, value_b):
    p = zero_params(spec)
    mk = lambda v, src: Gradients.from_blocks([np.full_like(b, v) for b in p.blocks()], src)  # noqa: E731
    return mk(value_f, Source.FINAL), mk(value_b, Source.BRANCH)


def test_combine_shared_examples():
    spec = NetworkSpec(3, (2, 2, 2), 2, 2, 2)
    gf, gb = _grads(spec, 2.0, 4.0)
    half = combine_shared(gf, gb, 0.5, spec.branch_tap)
    assert half.source is Source.COMBINED
    for i, (w, b) in enumerate(half.trunk):
        expected = 3.0 if i < 2 else 2.0
        assert (w == expected).all() and (b == expected).all()
    assert (half.branch[0] == 4.0).all()
    one = combine_shared(gf, gb, 1.0, 2)
    zero = combine_shared(gf, gb, 0.0, 2)
    for i in range(2):
        np.testing.assert_array_equal(one.trunk[i][0], gf.trunk[i][0])
        np.testing.assert_array_equal(zero.trunk[i][0], gb.trunk[i][0])
    with pytest.raises(ContractViolation):
        combine_shared(gf, gb, 1.5, 2)
    with pytest.raises(ContractViolation):
        combine_shared(gf, gb, -0.1, 2)


@given(st.floats(0, 1), st.integers(0, 1000))
def test_combine_shared_linear_and_fixed_on_equal_inputs(alpha, seed):
    spec, params, trace, fine, coarse = _problem(seed % 50)
    gf, gb, _ = backward(spec, params, trace, fine, coarse, 0.01)
    same = combine_shared(gf, gf, alpha, spec.branch_tap)
    for a, b in zip(same.trunk, gf.trunk):
        np.testing.assert_allclose(a[0], b[0], rtol=1e-15, atol=0)
    # linearity: combine(2gf, 2gb) == 2 combine(gf, gb)
    double = lambda g: Gradients.from_blocks([2 * b for b in g.blocks()], g.source)  # noqa: E731
    lhs = combine_shared(double(gf), double(gb), alpha, spec.branch_tap)
    rhs = combine_shared(gf, gb, alpha, spec.branch_tap)
    for a, b in zip(lhs.blocks(), rhs.blocks()):
        np.testing.assert_allclose(a, 2 * b, rtol=1e-15, atol=1e-300)


def test_gradients_are_finite():
    spec, params, trace, fine, coarse = _problem(9)
    gf, gb, _ = backward(spec, params, trace, fine, coarse, 1e-4)
    for g in (gf, gb):
        assert all(np.isfinite(b).all() for b in g.blocks())
        assert [b.shape for b in g.blocks()] == [b.shape for b in params.blocks()]
