"""Horizontal Brownian motion on nilpotent groups and Monte Carlo gradient estimators.

Paths start at the identity; the path from a base point x is x · Y_t, which is
exact because the group law is exact. The same increments therefore serve every
base point and both endpoints of the finite-difference oracle.

Vectors v passed to the gradient estimators are components in the orthonormal
working frame (horizontal directions first); dP_t f(v) is the derivative of
P_t f along the left-invariant field with those components.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import sympy
from scipy.linalg import expm

from .curvature import conditions_report, psi_restricted_to_h, ricci, script_a
from .frames import to_float_array
from .geometry import (PreconditionError, SubRiemannianStructure, adjoint_connection, canonical_connection,
                       flat_connection)
from .lie_core import bch_product, bracket

PATH_BLOCK = 4096
DEFAULT_PATHS = 200_000
DEFAULT_STEP = 2.0 ** -8


class RepresentationInapplicableError(PreconditionError):
    """The hypotheses of a gradient representation fail for this structure."""


# Random numbers ---------------------------------------------------------------------

@dataclass(frozen=True)
class RNGSpec:
    """Counter-based stream: path i of seed s draws from Philox block i // PATH_BLOCK.

    Every time step consumes a full block of normals, so a path's increments depend
    only on (seed, stream_id, path index), never on how many paths are requested.
    ``stream_id`` occupies the top counter word, giving each id a disjoint counter range.
    """
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0 <= self.stream_id < 2 ** 64:
            raise ValueError("stream_id must be a 64-bit unsigned integer")

    def block_generator(self, block: int) -> np.random.Generator:
        counter = np.array([0, 0, 0, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self.seed + (block << 64)))


def path_increments(rng: RNGSpec, path: int, n_steps: int, h: float, rank: int) -> np.ndarray:
    """Increments of a single path, identical to the ones used inside batches."""
    block, offset = divmod(path, PATH_BLOCK)
    gen = rng.block_generator(block)
    out = np.empty((n_steps, rank))
    for k in range(n_steps):
        out[k] = gen.standard_normal((PATH_BLOCK, rank))[offset]
    return out * math.sqrt(h)


# Test functions ---------------------------------------------------------------------

SAFE_FUNCTIONS = {"sin": sympy.sin, "cos": sympy.cos, "exp": sympy.exp, "atan": sympy.atan}


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Closed-form function of exponential coordinates together with its coordinate gradient."""
    __test__ = False
    expression: sympy.Expr
    variables: tuple[str, ...]

    @classmethod
    def from_expression(cls, text: str, variables: Sequence[str]) -> "TestFunction":
        symbols = {name: sympy.Symbol(name) for name in variables}
        try:
            expr = sympy.parse_expr(text, local_dict={**symbols, **SAFE_FUNCTIONS},
                                    global_dict={"__builtins__": {}, "Integer": sympy.Integer,
                                                 "Float": sympy.Float, "Rational": sympy.Rational,
                                                 "Symbol": sympy.Symbol})
        except NameError:
            allowed = ", ".join(sorted(SAFE_FUNCTIONS))
            raise ValueError(f"{text!r} uses a function outside the expression grammar ({allowed})") from None
        except Exception as exc:
            raise ValueError(f"cannot parse expression {text!r}: {exc}") from None
        if not isinstance(expr, sympy.Expr):
            raise ValueError(f"{text!r} is not a scalar expression")
        unknown = expr.free_symbols - set(symbols.values())
        if unknown:
            raise ValueError(f"unknown symbols in {text!r}: {sorted(map(str, unknown))}")
        allowed = (sympy.Add, sympy.Mul, sympy.Pow, sympy.Symbol, sympy.Number, sympy.NumberSymbol,
                   sympy.sin, sympy.cos, sympy.exp, sympy.atan)
        for node in sympy.preorder_traversal(expr):
            if not isinstance(node, allowed):
                raise ValueError(f"{type(node).__name__} is outside the expression grammar")
        return cls(expr, tuple(variables))

    def __str__(self) -> str:
        return str(self.expression)

    @property
    def _compiled(self):
        cache = self.__dict__.get("_cache")
        if cache is None:
            syms = [sympy.Symbol(v) for v in self.variables]
            value = sympy.lambdify(syms, self.expression, "numpy")
            grads = [sympy.lambdify(syms, sympy.diff(self.expression, s), "numpy") for s in syms]
            cache = (value, grads)
            object.__setattr__(self, "_cache", cache)
        return cache

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = self._compiled[0](*pts.T)
        return np.broadcast_to(np.asarray(out, dtype=float), pts.shape[:1]).copy()

    def coordinate_gradient(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cols = [np.broadcast_to(np.asarray(g(*pts.T), dtype=float), pts.shape[:1]) for g in self._compiled[1]]
        return np.stack(cols, axis=-1)

    @property
    def is_constant(self) -> bool:
        return not self.expression.free_symbols


def shipped_suite(variables: Sequence[str]) -> list[TestFunction]:
    """Five bounded smooth test functions in the first three coordinates."""
    a, b, c = variables[0], variables[1], variables[-1]
    texts = [f"sin({a})", f"cos({a})*sin({b})", f"atan({c})", f"sin({a} + {c})",
             f"cos({c})*exp(-({a}**2 + {b}**2)/2)"]
    return [TestFunction.from_expression(t, variables) for t in texts]


# Group helpers ----------------------------------------------------------------------

def _lie_structure(srs: SubRiemannianStructure):
    if not srs.is_lie:
        raise PreconditionError("simulation needs a Lie algebra structure")
    step = srs.algebra.step
    if step is None or step > 4:
        raise PreconditionError(f"simulation needs a nilpotent algebra of step <= 4, got {step}")
    return srs.algebra


def working_basis(srs: SubRiemannianStructure) -> np.ndarray:
    """Columns are the working frame vectors in declared coordinates."""
    return np.asarray(srs.basis, dtype=float)


def left_translate_vector(srs: SubRiemannianStructure, points: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """d/ds|₀ of points · exp(s·w) in coordinates, for w in declared components."""
    alg = srs.algebra
    once = bracket(alg, points, vectors)
    return vectors + 0.5 * once + bracket(alg, points, once) / 12.0


def frame_differential(srs: SubRiemannianStructure, f: TestFunction, points) -> np.ndarray:
    """Working-frame components (F_a f)(X) for each point, shape (N, dim)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grad = f.coordinate_gradient(pts)
    basis = working_basis(srs)
    out = np.empty((pts.shape[0], srs.dim))
    for a in range(srs.dim):
        out[:, a] = np.einsum("pi,pi->p", grad, left_translate_vector(srs, pts, np.broadcast_to(basis[:, a], pts.shape)))
    return out


def horizontal_gradient_norm(srs: SubRiemannianStructure, f: TestFunction, points) -> np.ndarray:
    return np.linalg.norm(frame_differential(srs, f, points)[:, : srs.n], axis=1)


def projection(srs: SubRiemannianStructure, points) -> np.ndarray:
    """π: first-layer coordinates in the orthonormal horizontal frame."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts @ np.asarray(srs.basis_inverse, dtype=float)[: srs.n].T


def _ad_working(srs: SubRiemannianStructure) -> np.ndarray:
    """ad_work[i] is the matrix of ad(F_i) on working components."""
    c = to_float_array(srs.working_structure())
    return np.transpose(c, (0, 2, 1))


# Simulation -------------------------------------------------------------------------

@dataclass
class EstimateWithError:
    value: np.ndarray | float
    stderr: np.ndarray | float
    n_paths: int
    settings: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: np.ndarray, settings: dict | None = None) -> "EstimateWithError":
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        value = samples.mean(axis=0)
        spread = samples.std(axis=0, ddof=1) if n > 1 else np.zeros_like(value)
        stderr = spread / math.sqrt(n)
        if np.ndim(value) == 0:
            value, stderr = float(value), float(stderr)
        return cls(value, stderr, n, dict(settings or {}))

    def to_dict(self) -> dict:
        return {"value": np.asarray(self.value).tolist(), "stderr": np.asarray(self.stderr).tolist(),
                "n_paths": self.n_paths, "settings": self.settings}


def agree(a: EstimateWithError, b: EstimateWithError, sigmas: float = 3.0) -> bool:
    diff = np.abs(np.asarray(a.value) - np.asarray(b.value))
    bar = sigmas * np.sqrt(np.asarray(a.stderr) ** 2 + np.asarray(b.stderr) ** 2)
    return bool(np.all(diff <= bar + 1e-13))


@dataclass
class DiffusionBatch:
    """Simulated paths started at the identity, with optional representation state.

    ``increments_sum`` is W_t in horizontal working components; ``path_end`` is Y_t.
    ``transport`` holds the adjoint transport matrices P and ``q_hat`` the damped
    Ricci flow Q̂; ``poly_integral`` holds the matrix -Σ ad(ΔW_k) Q_{s_k}ᵀ.
    """
    srs: SubRiemannianStructure
    x0: np.ndarray
    t_final: float
    step: float
    n_steps: int
    n_paths: int
    rng: RNGSpec
    path_end: np.ndarray
    increments_sum: np.ndarray
    transport: np.ndarray | None = None
    q_hat: np.ndarray | None = None
    poly_integral: np.ndarray | None = None
    poly_q: np.ndarray | None = None

    @property
    def endpoints(self) -> np.ndarray:
        return self.endpoints_from(self.x0)

    def endpoints_from(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return bch_product(self.srs.algebra, np.broadcast_to(x, self.path_end.shape), self.path_end)

    def settings(self) -> dict:
        return {"t": self.t_final, "h": self.step, "n_steps": self.n_steps, "n_paths": self.n_paths,
                "seed": self.rng.seed, "x0": self.x0.tolist()}

    def summary(self) -> dict:
        return {"settings": self.settings(),
                "mean_endpoint": self.path_end.mean(axis=0).tolist(),
                "mean_square_projection": float(np.mean(np.sum(self.increments_sum ** 2, axis=1)))}


def _step_count(t: float, h: float) -> int:
    if h <= 0:
        raise ValueError("step must be positive")
    if t < 0:
        raise ValueError("time must be nonnegative")
    n = int(round(t / h))
    if abs(n * h - t) > 4 * math.ulp(max(t, h)):
        raise ValueError(f"step {h} does not divide t = {t}")
    return n


def _adjoint_data(srs: SubRiemannianStructure):
    if srs.vertical != "left":
        raise RepresentationInapplicableError("adjoint transport is implemented for left-invariant frames")
    report = conditions_report(srs)
    failed = [name for name, ok in report.per_check.items() if not ok]
    if failed:
        raise RepresentationInapplicableError(f"conditions fail: {failed}")
    frame = srs.constant_frame()
    conn = canonical_connection(frame)
    hat = to_float_array(adjoint_connection(conn).gamma)
    generators = np.transpose(hat[: srs.n], (0, 2, 1))
    return generators, to_float_array(ricci(conn))


def polygrowth_generator(srs: SubRiemannianStructure) -> np.ndarray:
    """The zero-order operator of the flat left connection, on working covector components."""
    return to_float_array(script_a(flat_connection(srs.constant_frame())))


def simulate_paths(srs: SubRiemannianStructure, x0, t: float, h: float, n_paths: int, rng: RNGSpec,
                   transport: bool = False, polygrowth: bool = False) -> DiffusionBatch:
    """Geometric Euler scheme Y_{k+1} = Y_k · exp(Σ_i ΔW^i F_i) with exact BCH products."""
    alg = _lie_structure(srs)
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    n_steps = _step_count(t, h)
    dim, rank = srs.dim, srs.n
    x0 = np.asarray(x0 if x0 is not None else np.zeros(dim), dtype=float)
    if x0.shape != (dim,):
        raise ValueError(f"x0 must have {dim} components")
    horizontal = working_basis(srs)[:, :rank]
    root_h = math.sqrt(h)
    if transport:
        generators, ric = _adjoint_data(srs)
        # skew generators make the Cayley step orthogonal, so P^{-T} = P
        orthogonal = np.array_equal(generators, -np.transpose(generators, (0, 2, 1)))
        eye = np.eye(dim)
    if polygrowth:
        generator = polygrowth_generator(srs)
        q_steps = [expm(-0.5 * k * h * generator) for k in range(n_steps + 1)]
        ad_work = _ad_working(srs)[:rank]
    ends = np.empty((n_paths, dim))
    sums = np.empty((n_paths, rank))
    p_all = np.empty((n_paths, dim, dim)) if transport else None
    q_all = np.empty((n_paths, dim, dim)) if transport else None
    m_all = np.empty((n_paths, dim, dim)) if polygrowth else None
    for block in range(-(-n_paths // PATH_BLOCK)):
        lo = block * PATH_BLOCK
        hi = min(lo + PATH_BLOCK, n_paths)
        size = hi - lo
        gen = rng.block_generator(block)
        y = np.zeros((size, dim))
        w = np.zeros((size, rank))
        if transport:
            p = np.broadcast_to(eye, (size, dim, dim)).copy()
            q = p.copy()
            r_prev = np.broadcast_to(ric, (size, dim, dim))
        if polygrowth:
            m = np.zeros((size, dim, dim))
        for k in range(n_steps):
            dw = gen.standard_normal((PATH_BLOCK, rank))[:size] * root_h
            if polygrowth:
                m -= np.einsum("pi,ijk->pjk", dw, ad_work) @ q_steps[k].T
            y = bch_product(alg, y, dw @ horizontal.T)
            w += dw
            if transport:
                s = 0.5 * np.einsum("pi,ijk->pjk", dw, generators)
                p = np.linalg.solve(eye + s, (eye - s) @ p)
                p_t = np.swapaxes(p, 1, 2)
                r_next = p_t @ ric @ (p if orthogonal else np.linalg.inv(p_t))
                mid = 0.5 * (r_prev + r_next)
                q = q @ (eye - 0.5 * h * mid + 0.125 * h * h * (mid @ mid))
                r_prev = r_next
        ends[lo:hi], sums[lo:hi] = y, w
        if transport:
            p_all[lo:hi], q_all[lo:hi] = p, q
        if polygrowth:
            m_all[lo:hi] = m
    return DiffusionBatch(srs, x0, float(t), float(h), n_steps, n_paths, rng, ends, sums,
                          p_all, q_all, m_all, q_steps[-1] if polygrowth else None)


# Estimators -------------------------------------------------------------------------

def _settings(batch: DiffusionBatch, **extra) -> dict:
    return {**batch.settings(), **extra}


def estimate_Ptf(f: Callable, batch: DiffusionBatch, x=None) -> EstimateWithError:
    pts = batch.endpoints if x is None else batch.endpoints_from(x)
    return EstimateWithError.from_samples(np.asarray(f(pts), dtype=float), _settings(batch, estimator="P_t f"))


def _check_vector(srs: SubRiemannianStructure, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (srs.dim,):
        raise ValueError(f"direction must have {srs.dim} working components")
    return v


def _directional_samples(srs, f, endpoints, directions) -> np.ndarray:
    """(F_u f)(X) with a per-path working direction u."""
    return np.einsum("pa,pa->p", frame_differential(srs, f, endpoints), directions)


def carnot_samples(srs: SubRiemannianStructure, f: TestFunction, x, v, batch: DiffusionBatch) -> np.ndarray:
    v = _check_vector(srs, v)
    if np.abs(psi_restricted_to_h(srs).astype(float)).max() > 1e-12:
        raise RepresentationInapplicableError("ψ does not vanish on the first layer")
    ad_work = _ad_working(srs)[: srs.n]
    ad_w = np.einsum("pi,ijk->pjk", batch.increments_sum, ad_work)
    directions = v - ad_w @ v
    return _directional_samples(srs, f, batch.endpoints_from(x), directions)


def gradient_rep_carnot(f: TestFunction, x, t_or_v, v=None, batch: DiffusionBatch | None = None):
    """E[ df(X_t)(v − ad(W_t) v) ] for structures with ψ|𝔥 = 0."""
    v, batch = _unpack(t_or_v, v, batch)
    samples = carnot_samples(batch.srs, f, x, v, batch)
    return EstimateWithError.from_samples(samples, _settings(batch, estimator="carnot"))


def polygrowth_samples(srs: SubRiemannianStructure, f: TestFunction, x, v, batch: DiffusionBatch) -> np.ndarray:
    v = _check_vector(srs, v)
    if batch.poly_integral is None:
        raise ValueError("batch was simulated without polygrowth state")
    directions = batch.poly_q.T @ v + batch.poly_integral @ v
    return _directional_samples(srs, f, batch.endpoints_from(x), directions)


def gradient_rep_polygrowth(f: TestFunction, x, t_or_v, v=None, batch: DiffusionBatch | None = None):
    """E[ df(X_t)(Q_tᵀ v − ∫ ad(dW_s) Q_sᵀ v) ] with Q_t = exp(−t𝒜/2) for the flat connection."""
    v, batch = _unpack(t_or_v, v, batch)
    samples = polygrowth_samples(batch.srs, f, x, v, batch)
    return EstimateWithError.from_samples(samples, _settings(batch, estimator="polygrowth"))


def adjoint_action_samples(srs: SubRiemannianStructure, f: TestFunction, x, v, batch: DiffusionBatch) -> np.ndarray:
    """Per-path (F_u f)(x·Y_t) with u = Ad(Y_t^{-1}) v = e^{-ad Y_t} v, an exact path-wise identity."""
    v = _check_vector(srs, v)
    ad_work = _ad_working(srs)
    y_work = batch.path_end @ np.asarray(srs.basis_inverse, dtype=float).T
    ad_y = np.einsum("pi,ijk->pjk", y_work, ad_work)
    term = np.broadcast_to(v, (batch.n_paths, srs.dim))
    total = term.copy()
    for order in range(1, srs.algebra.step + 1):
        term = -np.einsum("pjk,pk->pj", ad_y, term) / order
        total = total + term
    return _directional_samples(srs, f, batch.endpoints_from(x), total)


def gradient_rep_adjoint_action(f: TestFunction, x, t_or_v, v=None, batch: DiffusionBatch | None = None):
    """E[ df(x·Y_t)(Ad(Y_t^{-1}) v) ], valid on every nilpotent group; reference for the other representations."""
    v, batch = _unpack(t_or_v, v, batch)
    samples = adjoint_action_samples(batch.srs, f, x, v, batch)
    return EstimateWithError.from_samples(samples, _settings(batch, estimator="adjoint_action"))


def adjoint_covector_samples(srs: SubRiemannianStructure, f: TestFunction, x, batch: DiffusionBatch) -> np.ndarray:
    """Per-path covectors Q̂_t P_tᵀ df(X_t) at x, in working components."""
    if batch.transport is None:
        raise ValueError("batch was simulated without transport state")
    alpha = frame_differential(srs, f, batch.endpoints_from(x))
    pulled = np.einsum("pka,pk->pa", batch.transport, alpha)
    return np.einsum("pab,pb->pa", batch.q_hat, pulled)


def gradient_rep_adjoint(srs: SubRiemannianStructure, f: TestFunction, x, t_or_v, v=None,
                         batch: DiffusionBatch | None = None):
    """E[ Q̂_t //̂_t^{-1} df(X_t) ](v) with transport along the adjoint canonical connection."""
    v, batch = _unpack(t_or_v, v, batch)
    v = _check_vector(srs, v)
    samples = adjoint_covector_samples(srs, f, x, batch) @ v
    return EstimateWithError.from_samples(samples, _settings(batch, estimator="adjoint"))


def finite_difference_gradient(f: TestFunction, x, t_or_v, v=None, batch: DiffusionBatch | None = None,
                               eps: float = 1e-4) -> EstimateWithError:
    """Central difference of P_t f at x·exp(±εv) with common random numbers."""
    v, batch = _unpack(t_or_v, v, batch)
    if eps <= 0:
        raise ValueError("eps must be positive")
    srs = batch.srs
    v = _check_vector(srs, v)
    alg = srs.algebra
    x = np.asarray(x, dtype=float)
    shift = working_basis(srs) @ v * eps
    plus = f(batch.endpoints_from(bch_product(alg, x, shift)))
    minus = f(batch.endpoints_from(bch_product(alg, x, -shift)))
    return EstimateWithError.from_samples((plus - minus) / (2 * eps), _settings(batch, estimator="finite_difference",
                                                                               eps=eps))


def _unpack(t_or_v, v, batch):
    """Accept (v, batch=...) or (t, v, batch) with t matching the batch."""
    if batch is None:
        raise ValueError("a simulated batch is required")
    if v is None:
        return t_or_v, batch
    if not math.isclose(float(t_or_v), batch.t_final, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError(f"batch was simulated to t = {batch.t_final}, not {t_or_v}")
    return v, batch


# Bound checks -----------------------------------------------------------------------

def _norm_with_error(samples: np.ndarray) -> tuple[float, float]:
    """|E[u]| and its delta-method standard error from per-path vectors u."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    cov = np.atleast_2d(np.cov(samples, rowvar=False)) / n
    if norm > 0:
        unit = mean / norm
        err = float(math.sqrt(max(unit @ cov @ unit, 0.0)))
    else:
        err = float(math.sqrt(max(np.diag(cov).max(), 0.0)))
    return norm, err


def horizontal_gradient_samples(srs, f, x, batch, representation: str) -> np.ndarray:
    """Per-path estimates of the horizontal components of dP_t f(x)."""
    cols = []
    for a in range(srs.n):
        v = np.zeros(srs.dim)
        v[a] = 1.0
        if representation == "carnot":
            cols.append(carnot_samples(srs, f, x, v, batch))
        elif representation == "polygrowth":
            cols.append(polygrowth_samples(srs, f, x, v, batch))
        elif representation == "adjoint_action":
            cols.append(adjoint_action_samples(srs, f, x, v, batch))
        elif representation == "adjoint":
            cols.append(adjoint_covector_samples(srs, f, x, batch)[:, a])
        else:
            raise ValueError(f"unknown representation {representation!r}")
    return np.stack(cols, axis=1)


def default_representation(srs: SubRiemannianStructure) -> str:
    return "carnot" if np.abs(psi_restricted_to_h(srs).astype(float)).max() <= 1e-12 else "polygrowth"


@dataclass
class BoundCheck:
    name: str
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    constant: float
    passed: bool
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "lhs_stderr": self.lhs_stderr, "rhs": self.rhs,
                "rhs_stderr": self.rhs_stderr, "constant": self.constant, "pass": self.passed,
                "settings": self.settings}


def _verdict(lhs, lhs_err, rhs, rhs_err, sigmas=3.0) -> bool:
    return lhs <= rhs + sigmas * math.hypot(lhs_err, rhs_err) + 1e-12


def gradient_bound_check(srs: SubRiemannianStructure, f: TestFunction, x, t: float, p: float, C_p: float,
                         batch: DiffusionBatch, representation: str | None = None) -> BoundCheck:
    """|∇^H P_t f|(x) ≤ C_p (P_t |∇^H f|^p (x))^{1/p}, both sides with error bars."""
    if not math.isclose(t, batch.t_final, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError(f"batch was simulated to t = {batch.t_final}, not {t}")
    if p <= 1:
        raise ValueError("p must exceed 1")
    representation = representation or default_representation(srs)
    lhs, lhs_err = _norm_with_error(horizontal_gradient_samples(srs, f, x, batch, representation))
    grad = horizontal_gradient_norm(srs, f, batch.endpoints_from(x))
    if math.isinf(p):
        rhs, rhs_err = float(grad.max()), 0.0
    else:
        moment = EstimateWithError.from_samples(grad ** p)
        rhs = moment.value ** (1 / p)
        rhs_err = moment.stderr * (moment.value ** (1 / p - 1) / p if moment.value > 0 else 0.0)
    passed = _verdict(lhs, lhs_err, C_p * rhs, C_p * rhs_err)
    return BoundCheck("gradient", lhs, lhs_err, rhs, rhs_err, C_p, passed,
                      _settings(batch, p=p, representation=representation, function=str(f)))


def variance_bound_check(srs: SubRiemannianStructure, f: TestFunction, x, t: float, C2: float,
                         batch: DiffusionBatch) -> BoundCheck:
    """P_t f² − (P_t f)² ≤ t C₂² P_t |∇^H f|²."""
    if not math.isclose(t, batch.t_final, rel_tol=1e-12, abs_tol=1e-15):
        raise ValueError(f"batch was simulated to t = {batch.t_final}, not {t}")
    pts = batch.endpoints_from(x)
    values = f(pts)
    n = values.shape[0]
    var = float(values.var(ddof=1))
    centred = values - values.mean()
    var_err = float(math.sqrt(max(np.mean(centred ** 4) - var ** 2, 0.0) / n))
    energy = EstimateWithError.from_samples(horizontal_gradient_norm(srs, f, pts) ** 2)
    factor = t * C2 ** 2
    passed = _verdict(var, var_err, factor * energy.value, factor * energy.stderr)
    return BoundCheck("variance", var, var_err, energy.value, energy.stderr, factor, passed,
                      _settings(batch, C2=C2, function=str(f)))


def sup_differential_norm(srs: SubRiemannianStructure, f: TestFunction, radius: float = 6.0,
                          points: int = 41) -> float:
    """‖df‖∞ in the metric g*: inf when the differential grows along a ray, else a grid maximum."""
    dim = srs.dim
    axes = [np.linspace(-radius, radius, points)] * dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    norms = np.linalg.norm(frame_differential(srs, f, grid), axis=1)
    far = np.linalg.norm(frame_differential(srs, f, 4 * grid), axis=1)
    if far.max() > 2 * norms.max() + 1.0:
        return math.inf
    return float(norms.max())


def semigroup_gradient_check(srs: SubRiemannianStructure, f: TestFunction, points, batch: DiffusionBatch,
                             K: float | None = None) -> dict:
    """max over base points of |dP_t f|_{g*} against e^{Kt} ‖df‖∞, via the adjoint representation."""
    if K is None:
        K = conditions_report(srs).K
    bound = math.exp(K * batch.t_final) * sup_differential_norm(srs, f)
    rows = []
    for x in points:
        norm, err = _norm_with_error(adjoint_covector_samples(srs, f, x, batch))
        rows.append({"x": list(map(float, x)), "norm": norm, "stderr": err, "pass": norm <= bound + 3 * err})
    return {"function": str(f), "K": K, "t": batch.t_final, "bound": bound,
            "max_norm": max(r["norm"] for r in rows), "points": rows, "pass": all(r["pass"] for r in rows)}
