import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from subriem.diffusion import (PATH_BLOCK, EstimateWithError, RepresentationInapplicableError, RNGSpec,
                               TestFunction, adjoint_action_samples, agree, estimate_Ptf,
                               finite_difference_gradient, gradient_bound_check, gradient_rep_adjoint,
                               gradient_rep_adjoint_action, gradient_rep_carnot, gradient_rep_polygrowth,
                               path_increments, polygrowth_samples, semigroup_gradient_check, shipped_suite,
                               simulate_paths, sup_differential_norm, variance_bound_check)

XYZ = ("x", "y", "z")
BASE = np.array([0.3, -0.2, 0.1])


@pytest.fixture(scope="module")
def heis_batch(heis):
    return simulate_paths(heis, None, 0.5, 2 ** -6, 3 * PATH_BLOCK, RNGSpec(21), transport=True, polygrowth=True)


@given(st.integers(0, 2 ** 63), st.integers(0, 3 * PATH_BLOCK - 1))
def test_increments_do_not_depend_on_batch_size(seed, path):
    alone = path_increments(RNGSpec(seed), path, 3, 0.25, 2)
    assert alone.shape == (3, 2)
    assert np.array_equal(alone, path_increments(RNGSpec(seed), path, 3, 0.25, 2))


def test_paths_are_prefix_stable(heis):
    small = simulate_paths(heis, None, 0.25, 2 ** -4, 10, RNGSpec(4))
    large = simulate_paths(heis, None, 0.25, 2 ** -4, PATH_BLOCK + 10, RNGSpec(4))
    assert np.array_equal(small.path_end, large.path_end[:10])
    # the single-path reconstruction agrees with the batch
    inc = path_increments(RNGSpec(4), PATH_BLOCK + 3, 4, 2 ** -4, 2)
    np.testing.assert_allclose(inc.sum(axis=0), large.increments_sum[PATH_BLOCK + 3], atol=1e-15)


def test_runs_are_bit_reproducible(heis):
    a = simulate_paths(heis, BASE, 0.5, 2 ** -5, 500, RNGSpec(9), transport=True)
    b = simulate_paths(heis, BASE, 0.5, 2 ** -5, 500, RNGSpec(9), transport=True)
    assert np.array_equal(a.path_end, b.path_end) and np.array_equal(a.q_hat, b.q_hat)
    c = simulate_paths(heis, BASE, 0.5, 2 ** -5, 500, RNGSpec(10))
    assert not np.array_equal(a.path_end, c.path_end)


def test_step_must_divide_time(heis):
    with pytest.raises(ValueError, match="divide"):
        simulate_paths(heis, None, 0.5, 0.3, 10, RNGSpec(0))


@pytest.mark.parametrize("text", ["__import__('os')", "log(x)", "x.real", "w + 1", "lambda: 1"])
def test_expression_grammar_is_closed(text):
    with pytest.raises(ValueError):
        TestFunction.from_expression(text, XYZ)


def test_expression_gradient():
    f = TestFunction.from_expression("sin(x)*exp(z) + atan(y)", XYZ)
    pts = np.array([[0.1, 2.0, -0.3]])
    expected = [math.cos(0.1) * math.exp(-0.3), 1 / 5, math.sin(0.1) * math.exp(-0.3)]
    np.testing.assert_allclose(f.coordinate_gradient(pts)[0], expected)


def test_zero_time_is_exact(heis):
    batch = simulate_paths(heis, BASE, 0.0, 2 ** -8, 7, RNGSpec(0), transport=True, polygrowth=True)
    f = TestFunction.from_expression("sin(x + z)", XYZ)
    assert estimate_Ptf(f, batch).value == pytest.approx(float(f(BASE)[0]), rel=1e-15)
    v = np.array([1.0, 0, 0])
    # F_1 = ∂x − (y/2)∂z at BASE
    exact = math.cos(0.4) * (1 + 0.1)
    for rep in (gradient_rep_carnot(f, BASE, v, batch=batch), gradient_rep_polygrowth(f, BASE, v, batch=batch),
                gradient_rep_adjoint(heis, f, BASE, v, batch=batch),
                gradient_rep_adjoint_action(f, BASE, v, batch=batch)):
        assert rep.value == pytest.approx(exact, abs=1e-14) and rep.stderr == 0


def test_constant_function_has_zero_gradient(heis_batch, heis):
    one = TestFunction.from_expression("1", XYZ)
    assert estimate_Ptf(one, heis_batch).value == 1 and estimate_Ptf(one, heis_batch).stderr == 0
    assert gradient_rep_adjoint(heis, one, BASE, [1, 0, 0], batch=heis_batch).value == 0


def test_weak_order_oracle_for_the_euler_scheme(heis):
    # the geometric Euler chain has E[z_T²] = T²(1 − 1/N)/4 exactly, against T²/4 in the limit
    n_steps, t = 8, 1.0
    batch = simulate_paths(heis, None, t, t / n_steps, 20 * PATH_BLOCK, RNGSpec(2))
    est = EstimateWithError.from_samples(batch.path_end[:, 2] ** 2)
    exact = t * t * (1 - 1 / n_steps) / 4
    assert abs(est.value - exact) <= 4 * est.stderr
    assert abs(est.value - t * t / 4) > 4 * est.stderr


@pytest.mark.parametrize("f", shipped_suite(XYZ), ids=str)
@pytest.mark.parametrize("direction", [0, 1, 2])
def test_representations_match_finite_differences_on_heisenberg(heis, heis_batch, f, direction):
    v = np.eye(3)[direction]
    fd = finite_difference_gradient(f, BASE, v, batch=heis_batch)
    for rep in (gradient_rep_carnot, gradient_rep_polygrowth, gradient_rep_adjoint_action):
        assert agree(rep(f, BASE, v, batch=heis_batch), fd)
    assert agree(gradient_rep_adjoint(heis, f, BASE, v, batch=heis_batch), fd)


def test_engel_refuses_the_carnot_and_adjoint_representations(engel_left, engel_right):
    batch = simulate_paths(engel_left, None, 0.25, 2 ** -4, 16, RNGSpec(0))
    f = TestFunction.from_expression("sin(x4)", engel_left.algebra.basis_names)
    with pytest.raises(RepresentationInapplicableError, match="ψ"):
        gradient_rep_carnot(f, np.zeros(4), np.eye(4)[0], batch=batch)
    with pytest.raises(RepresentationInapplicableError):
        simulate_paths(engel_right, None, 0.25, 2 ** -4, 16, RNGSpec(0), transport=True)


def test_polygrowth_formula_is_biased_on_engel_while_the_adjoint_action_is_exact(engel_left):
    batch = simulate_paths(engel_left, None, 1.0, 2 ** -6, 16 * PATH_BLOCK, RNGSpec(5), polygrowth=True)
    f = TestFunction.from_expression("x4*x3", engel_left.algebra.basis_names)
    x, v = np.zeros(4), np.eye(4)[0]
    exact = adjoint_action_samples(engel_left, f, x, v, batch)
    fd = finite_difference_gradient(f, x, v, batch=batch)
    assert abs(exact.mean() - fd.value) < 1e-8
    gap = polygrowth_samples(engel_left, f, x, v, batch) - exact
    gap_err = gap.std(ddof=1) / math.sqrt(gap.size)
    assert gap.mean() == pytest.approx(-0.245, abs=0.02)
    assert abs(gap.mean()) > 20 * gap_err


def test_agree_uses_combined_error_bars():
    a = EstimateWithError(1.0, 0.1, 100)
    assert agree(a, EstimateWithError(1.4, 0.1, 100))
    assert not agree(a, EstimateWithError(1.5, 0.1, 100))


@pytest.mark.parametrize("f", shipped_suite(XYZ)[:3], ids=str)
def test_bound_checks_on_a_small_batch(heis, heis_batch, f):
    assert gradient_bound_check(heis, f, BASE, 0.5, 2.0, 5.3, heis_batch).passed
    assert variance_bound_check(heis, f, BASE, 0.5, 5.3, heis_batch).passed
    # a batch only answers questions at its own final time
    with pytest.raises(ValueError):
        variance_bound_check(heis, f, BASE, 0.25, 5.3, heis_batch)


def test_sup_norm_detects_unbounded_differentials(heis):
    assert sup_differential_norm(heis, TestFunction.from_expression("sin(x)", XYZ)) == 1.0
    # X atan(z) = −(y/2)/(1 + z²) grows along the y axis
    assert math.isinf(sup_differential_norm(heis, TestFunction.from_expression("atan(z)", XYZ)))
    assert math.isinf(sup_differential_norm(heis, TestFunction.from_expression("sin(x + z)", XYZ)))


def test_semigroup_gradient_check(heis, heis_batch):
    f = shipped_suite(XYZ)[-1]
    report = semigroup_gradient_check(heis, f, [BASE, np.zeros(3)], heis_batch)
    assert math.isfinite(report["bound"])
    assert report["pass"] and report["K"] == pytest.approx(1.0)


def test_stream_ids_are_disjoint_families(heis):
    a = simulate_paths(heis, None, 0.25, 2 ** -4, 64, RNGSpec(5))
    b = simulate_paths(heis, None, 0.25, 2 ** -4, 64, RNGSpec(5, stream_id=1))
    assert not np.array_equal(a.path_end, b.path_end)
    np.testing.assert_array_equal(path_increments(RNGSpec(5, 1), 3, 4, 2 ** -4, 2).sum(axis=0),
                                  b.increments_sum[3])


def test_first_layer_coordinates_are_the_driving_brownian_motion(heis):
    batch = simulate_paths(heis, None, 1.0, 2 ** -5, 2048, RNGSpec(6))
    np.testing.assert_allclose(batch.path_end[:, :2], batch.increments_sum, atol=1e-12)


def test_abelian_endpoints_are_gaussian(plane):
    batch = simulate_paths(plane, None, 1.0, 2 ** -3, 8 * PATH_BLOCK, RNGSpec(7))
    sq = EstimateWithError.from_samples(np.sum(batch.path_end ** 2, axis=1))
    assert abs(sq.value - 2.0) <= 3 * sq.stderr
    first = estimate_Ptf(TestFunction.from_expression("x**2", ("x", "y")), batch)
    assert abs(first.value - 1.0) <= 3 * first.stderr


def test_dynkin_oracle_for_the_squared_radius(heis):
    # Δ_H(x² + y²) = 4, so P_t f(𝟏) = 2t
    f = TestFunction.from_expression("x**2 + y**2", XYZ)
    for t in (0.5, 1.0):
        est = estimate_Ptf(f, simulate_paths(heis, None, t, 2 ** -5, 4 * PATH_BLOCK, RNGSpec(8)))
        assert abs(est.value - 2 * t) <= 3 * est.stderr


def test_euler_bias_halves_with_the_step(heis):
    biases = []
    for n_steps in (4, 8):
        batch = simulate_paths(heis, None, 1.0, 1 / n_steps, 20 * PATH_BLOCK, RNGSpec(9))
        est = EstimateWithError.from_samples(batch.path_end[:, 2] ** 2)
        biases.append((0.25 - est.value, est.stderr))
    (coarse, err_c), (fine, err_f) = biases
    # exact biases are 1/16 and 1/32
    assert abs(coarse - 2 * fine) <= 3 * math.hypot(err_c, 2 * err_f)


def test_first_layer_linear_function_has_constant_gradient(heis, heis_batch):
    f = TestFunction.from_expression("2*x - 3*y", XYZ)
    for direction, expected in ((0, 2.0), (1, -3.0)):
        v = np.eye(3)[direction]
        est = gradient_rep_carnot(f, np.zeros(3), v, batch=heis_batch)
        assert est.value == pytest.approx(expected, abs=1e-12) and est.stderr < 1e-12


def test_polygrowth_equals_carnot_path_for_path_when_psi_vanishes(heis, heis_batch):
    from subriem.diffusion import carnot_samples
    f = shipped_suite(XYZ)[3]
    v = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(polygrowth_samples(heis, f, BASE, v, heis_batch),
                               carnot_samples(heis, f, BASE, v, heis_batch), atol=1e-12)


def test_adjoint_reduces_to_plain_derivative_on_the_plane(plane):
    batch = simulate_paths(plane, None, 0.5, 2 ** -4, 1024, RNGSpec(10), transport=True)
    f = TestFunction.from_expression("sin(x)*cos(y)", ("x", "y"))
    v = np.array([1.0, 0.0])
    plain = np.cos(batch.path_end[:, 0]) * np.cos(batch.path_end[:, 1])
    assert gradient_rep_adjoint(plane, f, np.zeros(2), v, batch=batch).value == pytest.approx(plain.mean(),
                                                                                              abs=1e-12)
    linear = TestFunction.from_expression("3*x - y", ("x", "y"))
    assert finite_difference_gradient(linear, np.zeros(2), v, batch=batch).value == pytest.approx(3, abs=1e-9)


def test_bound_checks_on_first_layer_linear_functions(heis, heis_batch, plane):
    f = TestFunction.from_expression("3*x + 4*y", XYZ)
    check = gradient_bound_check(heis, f, BASE, 0.5, 2.0, 1.0, heis_batch)
    assert check.lhs == pytest.approx(5.0, abs=1e-9) and check.rhs == pytest.approx(5.0, abs=1e-9)
    assert check.passed
    assert not gradient_bound_check(heis, f, BASE, 0.5, 2.0, 0.9, heis_batch).passed
    batch = simulate_paths(plane, None, 1.0, 2 ** -3, 4 * PATH_BLOCK, RNGSpec(11))
    variance = variance_bound_check(plane, TestFunction.from_expression("x", ("x", "y")), np.zeros(2), 1.0, 1.0,
                                    batch)
    assert abs(variance.lhs - 1.0) <= 3 * variance.lhs_stderr and variance.passed
    constant = TestFunction.from_expression("2", XYZ)
    assert gradient_bound_check(heis, constant, BASE, 0.5, 4.0, 1.0, heis_batch).lhs == 0
