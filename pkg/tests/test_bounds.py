import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import simpson

from subriem.bounds import (GaussianHeatKernel, HeisenbergHeatKernel, KDEHeatKernel, c2_upper_bound, c_nq,
                            conjugate_exponent, estimate_Cp, gaussian_projection_moment, moment_diagnostics,
                            printed_projection_moment, provider_for, root_moment, theta)
from subriem.diffusion import PATH_BLOCK, RNGSpec, simulate_paths
from subriem.geometry import PreconditionError


@pytest.fixture(scope="module")
def kernel():
    return HeisenbergHeatKernel()


@pytest.fixture(scope="module")
def unit_batch(heis):
    return simulate_paths(heis, None, 1.0, 2 ** -6, 4 * PATH_BLOCK, RNGSpec(13))


def test_c_nq_closed_form():
    assert c_nq(2, 4) == pytest.approx((16 * math.sqrt(math.pi)) ** 0.25, rel=0, abs=1e-12)


def test_projection_moment_closed_forms():
    assert gaussian_projection_moment(2, 2) == pytest.approx(2.0, abs=1e-12)
    assert gaussian_projection_moment(3, 4) == pytest.approx(15.0, abs=1e-12)
    assert printed_projection_moment(2, 2) == pytest.approx(4 * math.sqrt(2 * math.pi) / math.sqrt(2), rel=1e-12)


@pytest.mark.parametrize("p, q", [(2, 2), (4, 4 / 3), (math.inf, 1)])
def test_conjugate_exponent(p, q):
    assert conjugate_exponent(p) == pytest.approx(q)


def test_heisenberg_kernel_has_unit_mass(kernel):
    r = np.linspace(0, 12, 241)
    z = np.linspace(-14, 14, 561)
    rr, zz = np.meshgrid(r, z, indexing="ij")
    pts = np.stack([rr.ravel(), np.zeros(rr.size), zz.ravel()], axis=1)
    density = kernel.density(pts).reshape(rr.shape)
    mass = simpson(simpson(density, x=z, axis=1) * 2 * math.pi * r, x=r)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_heisenberg_kernel_scaling():
    pts = np.array([[0.3, -0.4, 0.2], [1.1, 0.5, -0.7]])
    t = 0.5
    scaled = pts / np.array([math.sqrt(t), math.sqrt(t), t])
    np.testing.assert_allclose(HeisenbergHeatKernel(t).density(pts),
                               HeisenbergHeatKernel().density(scaled) / t ** 2, rtol=1e-10)


def test_log_gradient_matches_finite_differences(kernel):
    x = np.array([0.7, -0.4, 0.3])
    eps = 1e-5
    fields = [np.array([1.0, 0, -x[1] / 2]), np.array([0, 1.0, x[0] / 2])]
    grads = []
    for field in fields:
        up, down = kernel.density([x + eps * field]), kernel.density([x - eps * field])
        grads.append((math.log(up[0]) - math.log(down[0])) / (2 * eps))
    assert kernel.log_gradient_norm([x])[0] == pytest.approx(math.hypot(*grads), rel=1e-7)


def test_vertical_marginal_matches_simulation(kernel, unit_batch):
    result = stats.kstest(unit_batch.path_end[:, 2], kernel.z_marginal_cdf)
    assert result.pvalue > 0.01


def test_provider_selection(heis, plane, engel_left):
    assert isinstance(provider_for(heis), HeisenbergHeatKernel)
    assert isinstance(provider_for(plane), GaussianHeatKernel)
    with pytest.raises(PreconditionError):
        provider_for(engel_left)


def test_theta_on_the_plane_is_n_plus_squared_radius(plane):
    pts = np.array([[0.0, 0.0], [3.0, -4.0]])
    np.testing.assert_allclose(theta(plane, GaussianHeatKernel(2), pts), [2.0, 27.0])


def test_c2_estimate_inside_its_bounds(heis, kernel, unit_batch):
    est = estimate_Cp(kernel, 2, unit_batch)
    upper = c2_upper_bound(kernel, heis.algebra.stratification, unit_batch)
    assert est.certified and upper.consistent
    assert 2 - 3 * est.stderr <= est.value <= upper.value + 3 * math.hypot(est.stderr, upper.stderr)


def test_time_mismatch_is_refused(kernel, heis):
    batch = simulate_paths(heis, None, 0.5, 2 ** -4, 8, RNGSpec(0))
    with pytest.raises(ValueError, match="provider"):
        estimate_Cp(kernel, 2, batch)


def test_moment_diagnostics_favour_the_gaussian_value(kernel, unit_batch):
    diag = moment_diagnostics(2, 2, unit_batch, kernel)
    assert diag.matches_gaussian and not diag.matches_printed
    energy = diag.log_gradient_energy
    assert abs(energy.value - 4) <= 3 * energy.stderr


def test_tail_dominated_moments_are_not_certified():
    rng = np.random.default_rng(0)
    heavy = rng.pareto(1.1, size=20000)
    assert not root_moment(heavy, 2).certified
    assert root_moment(np.abs(rng.normal(size=20000)), 2).certified


def test_kde_provider_recovers_a_gaussian(plane):
    rng = np.random.default_rng(1)
    kde = KDEHeatKernel(plane, rng.normal(size=(4000, 2)), 1.0)
    pts = np.array([[0.5, 0.0], [0.0, -1.0]])
    # smoothing widens the peak, so the tolerance is loose
    np.testing.assert_allclose(kde.density(pts), GaussianHeatKernel(2).density(pts), rtol=0.15)
    np.testing.assert_allclose(kde.log_gradient_norm(pts), GaussianHeatKernel(2).log_gradient_norm(pts), atol=0.15)


class _FlatProvider:
    provenance = "test"
    t = 1.0

    def log_gradient_norm(self, points):
        return np.zeros(len(points))


def test_degenerate_provider_gives_c_p_equal_to_n(unit_batch):
    assert estimate_Cp(_FlatProvider(), 3, unit_batch).value == pytest.approx(2.0, abs=1e-12)


def test_theta_at_the_identity(heis, kernel):
    assert theta(heis, kernel, np.zeros((1, 3)))[0] == 2.0


def test_infinite_p_is_the_mean_of_theta(heis, kernel, unit_batch):
    expected = theta(heis, kernel, unit_batch.path_end).mean()
    est = estimate_Cp(kernel, math.inf, unit_batch)
    assert est.value == pytest.approx(expected, rel=1e-12)
    assert est.value >= 2 and estimate_Cp(kernel, 4, unit_batch).value >= 2


def test_c_nq_spot_values():
    assert c_nq(1, 2) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert c_nq(2, 4) < c_nq(2, 6)
    with pytest.raises(ValueError):
        c_nq(2, 1.5)


def test_closed_form_and_kde_kernels_agree(heis, kernel):
    fit = simulate_paths(heis, None, 1.0, 2 ** -6, 10 * PATH_BLOCK, RNGSpec(17))
    kde = KDEHeatKernel(heis, fit.path_end, 1.0)
    pts = np.array([[0.0, 0.0, 0.0], [0.5, -0.5, 0.2], [1.0, 0.3, -0.4]])
    # the bandwidth bias of a 3-d Gaussian KDE at 4·10⁴ samples is of order 10%
    np.testing.assert_allclose(kde.density(pts), kernel.density(pts), rtol=0.15)


def test_abelian_c2_upper_bound(plane):
    batch = simulate_paths(plane, None, 1.0, 2 ** -3, 8 * PATH_BLOCK, RNGSpec(18))
    upper = c2_upper_bound(GaussianHeatKernel(2), plane.algebra.stratification, batch)
    # Cov[|x|², −|x|²/2] = −Var(|x|²)/2 = −2 for the standard plane Gaussian
    assert abs(upper.covariance + 2) <= 3 * upper.covariance_stderr
    assert upper.value == pytest.approx(2 + math.sqrt(4 - 2 * upper.covariance), abs=1e-12)
