"""Exact sparse polynomials, polynomial vector fields and one-forms in exponential coordinates."""
from __future__ import annotations

import random
from fractions import Fraction
from numbers import Number, Rational
from typing import Mapping, Sequence

import numpy as np
import sympy

from .lie_core import LieAlgebra, bch_product


def _coerce(c):
    if isinstance(c, Rational):
        return Fraction(c)
    return c


class Poly:
    """Sparse polynomial with Fraction (or float) coefficients.

    Terms are stored as ``{exponent tuple: coefficient}`` with zero coefficients dropped,
    so equality is structural.
    """

    __slots__ = ("variables", "terms")
    __hash__ = None

    def __init__(self, variables: Sequence[str], terms: Mapping[tuple[int, ...], object] | None = None):
        self.variables = tuple(variables)
        clean = {}
        if terms:
            n = len(self.variables)
            for exps, c in terms.items():
                if len(exps) != n:
                    raise ValueError("exponent length does not match the variables")
                if c != 0:
                    clean[tuple(exps)] = _coerce(c)
        self.terms = clean

    # construction ------------------------------------------------------------
    @classmethod
    def const(cls, variables, c) -> "Poly":
        return cls(variables, {(0,) * len(variables): c})

    @classmethod
    def var(cls, variables, i: int) -> "Poly":
        exps = [0] * len(variables)
        exps[i] = 1
        return cls(variables, {tuple(exps): 1})

    @classmethod
    def from_expr(cls, expr, variables: Sequence[str]) -> "Poly":
        """Parse a polynomial expression string (or sympy expression) over the given variables."""
        syms = sympy.symbols(list(variables))
        if isinstance(expr, str):
            expr = sympy.sympify(expr, locals=dict(zip(variables, syms)))
        poly = sympy.Poly(sympy.expand(expr), *syms)
        terms = {}
        for exps, c in poly.terms():
            if not c.is_Rational:
                c = float(c)
            else:
                c = Fraction(int(c.p), int(c.q))
            terms[tuple(int(e) for e in exps)] = c
        return cls(variables, terms)

    def to_sympy(self):
        syms = sympy.symbols(list(self.variables))
        out = sympy.Integer(0)
        for exps, c in self.terms.items():
            coeff = sympy.Rational(c.numerator, c.denominator) if isinstance(c, Fraction) else sympy.Float(c)
            out += coeff * sympy.Mul(*[s ** e for s, e in zip(syms, exps)])
        return out

    # arithmetic --------------------------------------------------------------
    def _lift(self, other) -> "Poly":
        if isinstance(other, Poly):
            if other.variables != self.variables:
                raise ValueError(f"variable mismatch: {self.variables} vs {other.variables}")
            return other
        if isinstance(other, Number):
            return Poly.const(self.variables, other)
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0) + c
        return Poly(self.variables, terms)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.variables, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Number):
            if other == 0:
                return Poly(self.variables)
            other = _coerce(other)
            return Poly(self.variables, {e: c * other for e, c in self.terms.items()})
        other = self._lift(other)
        if other is NotImplemented:
            return other
        terms: dict[tuple[int, ...], object] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0) + c1 * c2
        return Poly(self.variables, terms)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Number):
            return self * (Fraction(1) / _coerce(other) if isinstance(other, Rational) else 1.0 / other)
        return NotImplemented

    def __pow__(self, k: int):
        out = Poly.const(self.variables, 1)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if isinstance(other, Number):
            return self.terms == ({(0,) * len(self.variables): other} if other != 0 else {})
        if not isinstance(other, Poly):
            return NotImplemented
        return self.variables == other.variables and self.terms == other.terms

    # calculus ------------------------------------------------------------------
    def diff(self, i: int) -> "Poly":
        terms = {}
        for e, c in self.terms.items():
            if e[i]:
                e2 = list(e)
                e2[i] -= 1
                terms[tuple(e2)] = c * e[i]
        return Poly(self.variables, terms)

    def scale_variables(self, scales: Sequence) -> "Poly":
        """The polynomial x ↦ p(s_1 x_1, ..., s_d x_d)."""
        terms = {}
        for e, c in self.terms.items():
            factor = 1
            for s, k in zip(scales, e):
                factor = factor * s ** k
            terms[e] = c * factor
        return Poly(self.variables, terms)

    # inspection ---------------------------------------------------------------
    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(not any(e) for e in self.terms)

    def constant_value(self):
        return self.terms.get((0,) * len(self.variables), 0)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=-1)

    def max_abs_coefficient(self) -> float:
        return max((abs(float(c)) for c in self.terms.values()), default=0.0)

    def __call__(self, point: Sequence):
        out = 0
        for e, c in self.terms.items():
            term = c
            for x, k in zip(point, e):
                if k:
                    term = term * x ** k
            out = out + term
        return out

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Float evaluation at an array of points with shape (..., nvars)."""
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1])
        for e, c in self.terms.items():
            term = np.full(points.shape[:-1], float(c))
            for i, k in enumerate(e):
                if k:
                    term = term * points[..., i] ** k
            out = out + term
        return out

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for e in sorted(self.terms, key=lambda e: (sum(e), tuple(-k for k in e))):
            mono = "*".join(f"{v}^{k}" if k > 1 else v for v, k in zip(self.variables, e) if k)
            parts.append(f"{self.terms[e]} * {mono}" if mono else f"{self.terms[e]}")
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"Poly({self})"


def random_poly(variables: Sequence[str], max_degree: int, rng: random.Random,
                n_terms: int = 4, coeff_range: int = 5) -> Poly:
    """Random polynomial with small integer coefficients (the exact-identity test surface)."""
    nv = len(variables)
    terms = {}
    for _ in range(n_terms):
        deg = rng.randint(0, max_degree)
        exps = [0] * nv
        for _ in range(deg):
            exps[rng.randrange(nv)] += 1
        c = rng.randint(-coeff_range, coeff_range)
        terms[tuple(exps)] = terms.get(tuple(exps), 0) + c
    return Poly(variables, terms)


class PolyVectorField:
    """Σ X^α ∂/∂x^α with polynomial coefficients."""

    __slots__ = ("components",)
    __hash__ = None

    def __init__(self, components: Sequence[Poly]):
        self.components = tuple(components)
        names = {c.variables for c in self.components}
        if len(names) != 1 or len(self.components) != len(next(iter(names))):
            raise ValueError("vector field components must share variables and match their count")

    @property
    def variables(self):
        return self.components[0].variables

    def apply(self, f: Poly) -> Poly:
        if f.variables != self.variables:
            raise ValueError("variable mismatch")
        out = Poly(self.variables)
        for i, comp in enumerate(self.components):
            if comp.terms:
                out = out + comp * f.diff(i)
        return out

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField([a - b for a, b in zip(self.components, other.components)])

    def __mul__(self, scalar) -> "PolyVectorField":
        return PolyVectorField([c * scalar for c in self.components])

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, PolyVectorField) and self.components == other.components

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return np.stack([c.evaluate(points) for c in self.components], axis=-1)

    def __repr__(self) -> str:
        return "PolyVectorField(" + ", ".join(str(c) for c in self.components) + ")"


def apply_field(X: PolyVectorField, f: Poly) -> Poly:
    return X.apply(f)


def field_bracket(X: PolyVectorField, Y: PolyVectorField) -> PolyVectorField:
    """The commutator XY − YX as a vector field."""
    return PolyVectorField([X.apply(b) - Y.apply(a) for a, b in zip(X.components, Y.components)])


class PolyOneForm:
    """Σ α_β dx^β with polynomial coefficients."""

    __slots__ = ("components",)
    __hash__ = None

    def __init__(self, components: Sequence[Poly]):
        self.components = tuple(components)

    @property
    def variables(self):
        return self.components[0].variables

    @classmethod
    def differential(cls, f: Poly) -> "PolyOneForm":
        return cls([f.diff(i) for i in range(len(f.variables))])

    def pair(self, X: PolyVectorField) -> Poly:
        out = Poly(self.variables)
        for a, b in zip(self.components, X.components):
            out = out + a * b
        return out

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def max_abs_coefficient(self) -> float:
        return max(c.max_abs_coefficient() for c in self.components)

    def __eq__(self, other):
        return isinstance(other, PolyOneForm) and self.components == other.components

    def __repr__(self) -> str:
        return "PolyOneForm(" + ", ".join(str(c) for c in self.components) + ")"


def _invariant_fields(alg: LieAlgebra, side: str) -> list[PolyVectorField]:
    names = tuple(alg.basis_names)
    if "_t" in names:
        raise ValueError("basis name '_t' is reserved")
    ext = names + ("_t",)
    d = alg.dim
    x = [Poly.var(ext, i) for i in range(d)]
    t = Poly.var(ext, d)
    fields = []
    for i in range(d):
        te = [t if k == i else Poly(ext) for k in range(d)]
        z = bch_product(alg, x, te) if side == "left" else bch_product(alg, te, x)
        comps = []
        for zb in z:
            # coefficient of t^1, i.e. the derivative at t = 0
            terms = {e[:-1]: c for e, c in zb.terms.items() if e[-1] == 1}
            comps.append(Poly(names, terms))
        fields.append(PolyVectorField(comps))
    return fields


def left_invariant_fields(alg: LieAlgebra) -> list[PolyVectorField]:
    """A_i(x) = d/dt|0 of x·exp(t e_i), as polynomial vector fields."""
    return _invariant_fields(alg, "left")


def right_invariant_fields(alg: LieAlgebra) -> list[PolyVectorField]:
    """R_i(x) = d/dt|0 of exp(t e_i)·x."""
    return _invariant_fields(alg, "right")


def poly_matrix_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a unipotent polynomial matrix I + N (N nilpotent) by the finite Neumann series."""
    d = m.shape[0]
    names = next(p.variables for p in m.flat if isinstance(p, Poly))
    eye = np.empty((d, d), dtype=object)
    for i in range(d):
        for j in range(d):
            eye[i, j] = Poly.const(names, int(i == j))
    nil = m - eye
    inv = eye.copy()
    power = eye.copy()
    for _ in range(d):
        power = -(power.dot(nil))
        inv = inv + power
    if not all(p.is_zero() for p in (m.dot(inv) - eye).flat):
        raise ValueError("frame matrix is not unipotent; polynomial inverse unavailable")
    return inv


def sub_laplacian_poly(srs, f: Poly) -> Poly:
    """Δ_H f for the horizontal orthonormal frame of a left-invariant structure."""
    return srs.poly_frame().laplacian(f, horizontal_only=True)


def full_laplacian_poly(srs, f: Poly) -> Poly:
    """Δ_g f over the full orthonormal frame of the taming metric."""
    return srs.poly_frame().laplacian(f, horizontal_only=False)


def _dilation_scales(alg: LieAlgebra, s):
    if alg.stratification is None:
        raise ValueError("dilations need a declared stratification")
    return [s ** w for w in alg.stratification.weights()]


def dilation_scaling_residual(srs, f: Poly, s=Fraction(3, 2)) -> Poly:
    """Δ_H(f ∘ δ_s) − s² (Δ_H f) ∘ δ_s."""
    scales = _dilation_scales(srs.algebra, s)
    lhs = sub_laplacian_poly(srs, f.scale_variables(scales))
    return lhs - sub_laplacian_poly(srs, f).scale_variables(scales) * (s * s)


def homogeneity_residuals(alg: LieAlgebra, f: Poly, s=Fraction(3, 2)) -> list[Poly]:
    """X_i(f ∘ δ_s) − s^{w_i} (X_i f) ∘ δ_s for each left-invariant basis field X_i of layer w_i."""
    scales = _dilation_scales(alg, s)
    weights = alg.stratification.weights()
    scaled = f.scale_variables(scales)
    return [field.apply(scaled) - field.apply(f).scale_variables(scales) * s ** w
            for field, w in zip(left_invariant_fields(alg), weights)]
