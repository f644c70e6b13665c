"""Constants in horizontal gradient bounds on Carnot groups.

Heat kernels are those of the generator ½Δ_H, i.e. densities of the simulated X_t.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .diffusion import (BoundCheck, DiffusionBatch, EstimateWithError, TestFunction, _verdict,
                        horizontal_gradient_norm, horizontal_gradient_samples, _norm_with_error,
                        default_representation, projection)
from .geometry import PreconditionError, SubRiemannianStructure
from .lie_core import bracket, homogeneous_dimension

TAIL_SHARE_LIMIT = 0.5


# Heat-kernel providers ------------------------------------------------------------------

class HeatKernelProvider:
    """ρ_t(y) = p_t(1, y) and |∇^H log ρ_t|(y) for points in declared coordinates."""
    provenance = "abstract"
    t = 1.0

    def density(self, points) -> np.ndarray:
        raise NotImplementedError

    def log_gradient_norm(self, points) -> np.ndarray:
        raise NotImplementedError


class HeisenbergHeatKernel(HeatKernelProvider):
    """Oscillatory-integral kernel of the 3-dimensional Heisenberg group with A1 = ∂x − y/2 ∂z, A2 = ∂y + x/2 ∂z.

    p_t(r, z) = 1/(π² t²) ∫_0^∞ cos(2τz/t) (τ / sinh τ) exp(−r² τ coth τ / (2t)) dτ,
    evaluated by the trapezoid rule, which converges geometrically for this even analytic integrand.
    """
    provenance = "closed-form"

    def __init__(self, t: float = 1.0, node_step: float = 0.04, cutoff: float = 40.0, chunk: int = 4096):
        if t <= 0:
            raise ValueError("time must be positive")
        self.t = float(t)
        tau = np.arange(1, int(round(cutoff / node_step)) + 1) * node_step
        self._tau = tau
        self._weight = np.full(tau.shape, node_step)
        self._ratio = tau / np.sinh(tau)
        self._coth = tau / np.tanh(tau)
        self._step = node_step
        self._chunk = chunk
        self._last = None

    def _split(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != 3:
            raise ValueError("Heisenberg points have three coordinates")
        return (pts[:, 0] ** 2 + pts[:, 1] ** 2), pts[:, 2]

    def _integrals(self, r2, z):
        """ρ, ∂ρ/∂(r²) and ∂ρ/∂z; the last result is memoised since callers often reuse a sample."""
        key = hashlib.blake2b(r2.tobytes() + z.tobytes(), digest_size=16).digest()
        if self._last is not None and self._last[0] == key:
            return self._last[1]
        result = self._evaluate(r2, z)
        self._last = (key, result)
        return result

    def _evaluate(self, r2, z):
        t = self.t
        scale = 1.0 / (math.pi ** 2 * t ** 2)
        rho = np.empty(r2.shape)
        d_r2 = np.empty(r2.shape)
        d_z = np.empty(r2.shape)
        for lo in range(0, r2.size, self._chunk):
            sl = slice(lo, lo + self._chunk)
            phase = 2.0 * np.outer(z[sl], self._tau) / t
            damp = np.exp(-np.outer(r2[sl], self._coth) / (2 * t)) * (self._ratio * self._weight)
            cos_part = np.cos(phase) * damp
            # the τ = 0 node carries half weight and integrand value exp(−r²/2t)
            origin = 0.5 * self._step * np.exp(-r2[sl] / (2 * t))
            rho[sl] = scale * (cos_part.sum(axis=1) + origin)
            d_r2[sl] = -scale / (2 * t) * (cos_part @ self._coth + origin)
            d_z[sl] = -scale * (2.0 / t) * ((np.sin(phase) * damp) @ self._tau)
        return rho, d_r2, d_z

    def density(self, points) -> np.ndarray:
        r2, z = self._split(points)
        return self._integrals(r2, z)[0]

    def log_gradient_norm(self, points) -> np.ndarray:
        r2, z = self._split(points)
        rho, d_r2, d_z = self._integrals(r2, z)
        grad_sq = 4 * r2 * d_r2 ** 2 + 0.25 * r2 * d_z ** 2
        return np.sqrt(grad_sq) / rho

    def z_marginal_cdf(self, z) -> np.ndarray:
        """CDF of the vertical coordinate at time t: the law of t·S with density sech(πs)."""
        return 2.0 / math.pi * np.arctan(np.exp(math.pi * np.asarray(z, dtype=float) / self.t))


class GaussianHeatKernel(HeatKernelProvider):
    """Euclidean kernel on ℝ^n (abelian structures)."""
    provenance = "closed-form"

    def __init__(self, n: int, t: float = 1.0):
        self.n, self.t = int(n), float(t)

    def density(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.exp(-np.sum(pts ** 2, axis=1) / (2 * self.t)) / (2 * math.pi * self.t) ** (self.n / 2)

    def log_gradient_norm(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.norm(pts, axis=1) / self.t


class KDEHeatKernel(HeatKernelProvider):
    """Gaussian kernel-density estimate from simulated endpoints, with its analytic gradient."""
    provenance = "kernel-density-estimate"

    def __init__(self, srs: SubRiemannianStructure, samples: np.ndarray, t: float = 1.0, bandwidth=None):
        self.srs = srs
        self.t = float(t)
        self._kde = stats.gaussian_kde(np.asarray(samples, dtype=float).T, bw_method=bandwidth)
        self._inv_cov = np.linalg.inv(self._kde.covariance)

    def density(self, points) -> np.ndarray:
        return self._kde(np.atleast_2d(np.asarray(points, dtype=float)).T)

    def coordinate_log_gradient(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        data = self._kde.dataset.T
        out = np.empty(pts.shape)
        for idx, y in enumerate(pts):
            diff = y - data
            weights = np.exp(-0.5 * np.einsum("pi,ij,pj->p", diff, self._inv_cov, diff))
            out[idx] = -(weights @ diff) @ self._inv_cov / weights.sum()
        return out

    def log_gradient_norm(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        grad = self.coordinate_log_gradient(pts)
        srs = self.srs
        basis = np.asarray(srs.basis, dtype=float)
        comps = []
        for a in range(srs.n):
            w = np.broadcast_to(basis[:, a], pts.shape)
            once = bracket(srs.algebra, pts, w)
            field_a = w + 0.5 * once + bracket(srs.algebra, pts, once) / 12.0
            comps.append(np.einsum("pi,pi->p", grad, field_a))
        return np.linalg.norm(np.stack(comps, axis=1), axis=1)


def provider_for(srs: SubRiemannianStructure, t: float = 1.0) -> HeatKernelProvider:
    """Closed-form provider for the shipped Carnot structures."""
    alg = srs.algebra
    if alg is None:
        raise PreconditionError("heat kernels are provided for Lie structures only")
    if not alg.constants:
        return GaussianHeatKernel(alg.dim, t)
    if alg.dim == 3 and srs.n == 2 and _is_standard_heisenberg(srs):
        return HeisenbergHeatKernel(t)
    raise PreconditionError("no closed-form heat kernel for this structure; use KDEHeatKernel")


def _is_standard_heisenberg(srs: SubRiemannianStructure) -> bool:
    c = srs.working_structure()
    expected = np.zeros((3, 3, 3))
    expected[0, 1, 2], expected[1, 0, 2] = 1.0, -1.0
    return np.allclose(np.asarray(c, dtype=float), expected) and np.allclose(
        np.asarray(srs.basis, dtype=float), np.eye(3))


# Constants ---------------------------------------------------------------------------

def theta(srs: SubRiemannianStructure, provider: HeatKernelProvider, points) -> np.ndarray:
    """ϑ(y) = n + |π(y)| · |∇^H log ρ(y)|."""
    radius = np.linalg.norm(projection(srs, points), axis=1)
    return srs.n + radius * provider.log_gradient_norm(points)


def conjugate_exponent(p: float) -> float:
    if p <= 1:
        raise ValueError("p must exceed 1")
    return 1.0 if math.isinf(p) else p / (p - 1)


@dataclass
class MomentEstimate:
    """E[X^q]^{1/q} with delta-method stderr, bootstrap interval and a tail-stability verdict."""
    value: float
    stderr: float
    moment: float
    moment_stderr: float
    bootstrap_interval: tuple[float, float]
    top_share: float
    certified: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "moment": self.moment,
                "moment_stderr": self.moment_stderr, "bootstrap_interval": list(self.bootstrap_interval),
                "top_percent_share": self.top_share, "certified": self.certified}


def root_moment(samples: np.ndarray, q: float, seed: int = 0, resamples: int = 200) -> MomentEstimate:
    powered = np.asarray(samples, dtype=float) ** q
    est = EstimateWithError.from_samples(powered)
    value = est.value ** (1 / q)
    stderr = est.stderr * est.value ** (1 / q - 1) / q
    rng = np.random.Generator(np.random.Philox(key=seed))
    boot = [powered[rng.integers(0, powered.size, powered.size)].mean() for _ in range(resamples)]
    interval = tuple(float(x) for x in np.quantile(boot, [0.025, 0.975]))
    top = np.sort(powered)[-max(1, powered.size // 100):]
    share = float(top.sum() / powered.sum()) if powered.sum() > 0 else 0.0
    return MomentEstimate(float(value), float(stderr), float(est.value), float(est.stderr), interval, share,
                          share <= TAIL_SHARE_LIMIT)


def _matching_time(provider: HeatKernelProvider, batch: DiffusionBatch) -> None:
    if not math.isclose(provider.t, batch.t_final, rel_tol=1e-12):
        raise ValueError(f"provider is for t = {provider.t} but the batch ends at t = {batch.t_final}")


def estimate_Cp(provider: HeatKernelProvider, p: float, batch: DiffusionBatch) -> MomentEstimate:
    """C_{t,p} = E[ϑ_t(X_t)^q]^{1/q}; equal to C_p for every t by dilation invariance."""
    _matching_time(provider, batch)
    q = conjugate_exponent(p)
    return root_moment(theta(batch.srs, provider, batch.path_end), q, seed=batch.rng.seed)


@dataclass
class C2Bound:
    value: float
    stderr: float
    covariance: float
    covariance_stderr: float
    radicand: float
    mean_square_projection: float
    mean_square_projection_stderr: float
    consistent: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "covariance": self.covariance,
                "covariance_stderr": self.covariance_stderr, "radicand": self.radicand,
                "mean_square_projection": self.mean_square_projection,
                "mean_square_projection_stderr": self.mean_square_projection_stderr,
                "consistent": self.consistent}


def c2_upper_bound(provider: HeatKernelProvider, strat, batch: DiffusionBatch) -> C2Bound:
    """n + √(nQ − 2 Cov[|π|², log ρ]) with the covariance taken over X_1 samples."""
    _matching_time(provider, batch)
    if not math.isclose(batch.t_final, 1.0):
        raise ValueError("the covariance bound is stated at t = 1")
    srs = batch.srs
    n, big_q = srs.n, homogeneous_dimension(strat)
    r = np.sum(projection(srs, batch.path_end) ** 2, axis=1)
    log_rho = np.log(provider.density(batch.path_end))
    count = r.size
    product = (r - r.mean()) * (log_rho - log_rho.mean())
    cov = float(product.sum() / (count - 1))
    cov_err = float(product.std(ddof=1) / math.sqrt(count))
    radicand = n * big_q - 2 * cov
    mean_r = EstimateWithError.from_samples(r)
    consistent = radicand + 6 * cov_err >= 0 and abs(mean_r.value - n) <= 3 * mean_r.stderr
    root = math.sqrt(max(radicand, 0.0))
    stderr = cov_err / root if root > 0 else math.inf
    return C2Bound(n + root, stderr, cov, cov_err, radicand, mean_r.value, mean_r.stderr, consistent)


def c_nq(n: int, q: float) -> float:
    """The printed constant (2^{(q+n+1)/2} π^{(n−1)/2} / √n · Γ((n+q)/2)/Γ(n/2))^{1/q}."""
    if q < 2:
        raise ValueError("q must be at least 2")
    log_value = ((q + n + 1) / 2 * math.log(2) + (n - 1) / 2 * math.log(math.pi) - 0.5 * math.log(n)
                 + gammaln((n + q) / 2) - gammaln(n / 2))
    return math.exp(log_value / q)


def printed_projection_moment(n: int, q: float) -> float:
    return c_nq(n, q) ** q


def gaussian_projection_moment(n: int, q: float) -> float:
    """E|W_1|^q for a standard Brownian motion in ℝ^n."""
    return math.exp(q / 2 * math.log(2) + gammaln((n + q) / 2) - gammaln(n / 2))


@dataclass
class MomentDiagnostics:
    n: int
    q: float
    monte_carlo: EstimateWithError
    gaussian_value: float
    printed_value: float
    log_gradient_energy: EstimateWithError | None
    homogeneous_dimension: int | None

    @property
    def matches_gaussian(self) -> bool:
        return abs(self.monte_carlo.value - self.gaussian_value) <= 3 * self.monte_carlo.stderr

    @property
    def matches_printed(self) -> bool:
        return abs(self.monte_carlo.value - self.printed_value) <= 3 * self.monte_carlo.stderr

    def to_dict(self) -> dict:
        out = {"n": self.n, "q": self.q, "monte_carlo": self.monte_carlo.value,
               "monte_carlo_stderr": self.monte_carlo.stderr, "gaussian_moment": self.gaussian_value,
               "printed_moment": self.printed_value, "matches_gaussian": self.matches_gaussian,
               "matches_printed": self.matches_printed}
        if self.log_gradient_energy is not None:
            out.update({"log_gradient_energy": self.log_gradient_energy.value,
                        "log_gradient_energy_stderr": self.log_gradient_energy.stderr,
                        "homogeneous_dimension": self.homogeneous_dimension})
        return out


def moment_diagnostics(n: int, q: float, batch: DiffusionBatch, provider: HeatKernelProvider | None = None,
                       strat=None) -> MomentDiagnostics:
    """E|π(X_1)|^q against both closed forms, and E|∇^H log ρ|²(X_1) against Q."""
    if not math.isclose(batch.t_final, 1.0):
        raise ValueError("moment identities are stated at t = 1")
    radius = np.linalg.norm(projection(batch.srs, batch.path_end), axis=1)
    mc = EstimateWithError.from_samples(radius ** q)
    energy = big_q = None
    if provider is not None:
        _matching_time(provider, batch)
        energy = EstimateWithError.from_samples(provider.log_gradient_norm(batch.path_end) ** 2)
        big_q = homogeneous_dimension(strat or batch.srs.algebra.stratification)
    return MomentDiagnostics(n, q, mc, gaussian_projection_moment(n, q), printed_projection_moment(n, q),
                             energy, big_q)


def part_b_bound_check(srs: SubRiemannianStructure, f: TestFunction, p: float, batch: DiffusionBatch, x=None,
                       strat=None) -> BoundCheck:
    """|∇^H P_t f| ≤ (n + c_{n,q}√Q)(P_t|∇^H f|^p)^{1/p} with 1/p + 1/q = 1/2."""
    if not 2 < p < math.inf:
        raise ValueError("p must lie in (2, ∞)")
    q = 2 * p / (p - 2)
    n = srs.n
    big_q = homogeneous_dimension(strat or srs.algebra.stratification)
    constant = n + c_nq(n, q) * math.sqrt(big_q)
    x = np.zeros(srs.dim) if x is None else np.asarray(x, dtype=float)
    representation = default_representation(srs)
    lhs, lhs_err = _norm_with_error(horizontal_gradient_samples(srs, f, x, batch, representation))
    moment = EstimateWithError.from_samples(horizontal_gradient_norm(srs, f, batch.endpoints_from(x)) ** p)
    rhs = moment.value ** (1 / p)
    rhs_err = moment.stderr * (moment.value ** (1 / p - 1) / p if moment.value > 0 else 0.0)
    passed = _verdict(lhs, lhs_err, constant * rhs, constant * rhs_err)
    return BoundCheck("part_b", lhs, lhs_err, rhs, rhs_err, constant, passed,
                      {**batch.settings(), "p": p, "q": q, "function": str(f), "representation": representation})


@dataclass
class BoundConstants:
    p: float
    q: float
    estimate: MomentEstimate
    lower: float
    upper: C2Bound | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"p": self.p, "q": self.q, "C_p": self.estimate.to_dict(), "n_lower_bound": self.lower,
               "at_least_n": self.estimate.value + 3 * self.estimate.stderr >= self.lower}
        if self.upper is not None:
            out["C2_upper_bound"] = self.upper.to_dict()
        out.update(self.extra)
        return out
