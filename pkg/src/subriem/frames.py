"""Orthonormal working frames and the scalar types living on them.

A frame holds structure functions c[i, j, k] ([F_i, F_j] = Σ_k c[i, j, k] F_k) and knows how
to differentiate its scalars along frame vectors.  Three kinds are provided:

* ``ConstantFrame``: left-invariant frame of a Lie algebra; scalars are numbers, derivatives vanish.
* ``PolyFrame``: polynomial vector fields in exponential coordinates; scalars are ``Poly``.
* ``JetFrame``: a structured frame evaluated at a base point u; scalars are ``Jet``
  (value plus first u-derivatives), enough for one frame derivative.

Horizontal vectors always come first: indices ``0..rank-1`` span H.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Number
from typing import Callable, Sequence

import numpy as np

from .polycalc import Poly, PolyOneForm, PolyVectorField, field_bracket, poly_matrix_inverse


class Jet:
    """A real value together with its gradient in the base parameters.

    ``grad`` is None once the jet has been differentiated; differentiating again raises.
    """

    __slots__ = ("value", "grad")
    __hash__ = None

    def __init__(self, value, grad=None):
        self.value = float(value)
        self.grad = None if grad is None else np.asarray(grad, dtype=float)

    @staticmethod
    def _parts(other):
        if isinstance(other, Jet):
            return other.value, other.grad, True
        return float(other), None, False

    def __add__(self, other):
        if not isinstance(other, (Jet, Number)):
            return NotImplemented
        v, g, is_jet = self._parts(other)
        if is_jet:
            grad = None if self.grad is None or g is None else self.grad + g
        else:
            grad = self.grad
        return Jet(self.value + v, grad)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.value, None if self.grad is None else -self.grad)

    def __sub__(self, other):
        if not isinstance(other, (Jet, Number)):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, (Jet, Number)):
            return NotImplemented
        v, g, is_jet = self._parts(other)
        if is_jet:
            grad = None if self.grad is None or g is None else self.grad * v + g * self.value
        else:
            grad = None if self.grad is None else self.grad * v
        return Jet(self.value * v, grad)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        if isinstance(other, Number):
            return self * (1.0 / float(other))
        return NotImplemented

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def reciprocal(self):
        return Jet(1.0 / self.value, None if self.grad is None else -self.grad / self.value ** 2)

    def exp(self):
        e = math.exp(self.value)
        return Jet(e, None if self.grad is None else e * self.grad)

    def __float__(self):
        return self.value

    def __repr__(self):
        return f"Jet({self.value!r}, {self.grad!r})"


def zeros(shape) -> np.ndarray:
    arr = np.empty(shape, dtype=object)
    arr.fill(0)
    return arr


def magnitude(s) -> float:
    """Size of a scalar: |value| for numbers and jets, largest |coefficient| for polynomials."""
    if isinstance(s, Poly):
        return s.max_abs_coefficient()
    if isinstance(s, Jet):
        return abs(s.value)
    return abs(float(s))


def max_magnitude(arr) -> float:
    return max((magnitude(s) for s in np.asarray(arr, dtype=object).flat), default=0.0)


def to_float(s, point=None) -> float:
    """Numeric value of a scalar; polynomials are evaluated at ``point``."""
    if isinstance(s, Poly):
        if point is None:
            if not s.is_constant():
                raise ValueError("non-constant polynomial needs an evaluation point")
            return float(s.constant_value())
        return float(s(list(point)))
    if isinstance(s, Jet):
        return s.value
    return float(s)


def to_float_array(arr, point=None) -> np.ndarray:
    arr = np.asarray(arr, dtype=object)
    return np.array([to_float(s, point) for s in arr.flat], dtype=float).reshape(arr.shape)


class Frame:
    """Common interface of working frames."""

    constant = False
    left_invariant = False

    def __init__(self, structure: np.ndarray, rank: int, names: Sequence[str]):
        self.structure = structure
        self.dim = structure.shape[0]
        self.rank = rank
        self.names = tuple(names)
        if len(self.names) != self.dim:
            raise ValueError("one name per frame vector required")
        if not 0 <= rank <= self.dim:
            raise ValueError("rank out of range")

    def d(self, i: int, s):
        raise NotImplementedError

    def d_array(self, i: int, arr: np.ndarray) -> np.ndarray:
        out = np.empty(arr.shape, dtype=object)
        flat_in = arr.reshape(-1)
        flat_out = out.reshape(-1)
        for k, s in enumerate(flat_in):
            flat_out[k] = self.d(i, s)
        return out

    def horizontal_mask(self) -> np.ndarray:
        return np.arange(self.dim) < self.rank


class ConstantFrame(Frame):
    """Left-invariant orthonormal frame with constant structure constants."""

    constant = True
    left_invariant = True

    def d(self, i, s):
        if isinstance(s, (Poly, Jet)):
            raise TypeError("constant frames only differentiate numbers")
        return 0


class PolyFrame(Frame):
    """Frame of polynomial vector fields; structure functions read off through the coframe."""

    def __init__(self, fields: Sequence[PolyVectorField], rank: int, names: Sequence[str],
                 left_invariant: bool = False):
        self.fields = tuple(fields)
        self.variables = self.fields[0].variables
        d = len(self.fields)
        matrix = np.empty((d, d), dtype=object)  # matrix[beta, j] = F_j^beta
        for j, X in enumerate(self.fields):
            for beta, comp in enumerate(X.components):
                matrix[beta, j] = comp
        self.matrix = matrix
        self.coframe = poly_matrix_inverse(matrix)  # coframe[j, beta]
        structure = np.empty((d, d, d), dtype=object)
        for i in range(d):
            for j in range(d):
                if j < i:
                    structure[i, j] = -structure[j, i]
                    continue
                comps = field_bracket(self.fields[i], self.fields[j]).components
                for k in range(d):
                    acc = Poly(self.variables)
                    for beta in range(d):
                        if comps[beta].terms and self.coframe[k, beta].terms:
                            acc = acc + self.coframe[k, beta] * comps[beta]
                    structure[i, j, k] = acc
        super().__init__(structure, rank, names)
        self.left_invariant = left_invariant
        self.constant = all(p.is_constant() for p in structure.flat)

    def d(self, i, s):
        if isinstance(s, Poly):
            return self.fields[i].apply(s)
        if isinstance(s, Jet):
            raise TypeError("polynomial frames do not differentiate jets")
        return 0

    def zero(self) -> Poly:
        return Poly(self.variables)

    def differential(self, f: Poly) -> np.ndarray:
        """Frame components (F_j f) of df."""
        out = np.empty(self.dim, dtype=object)
        for j, X in enumerate(self.fields):
            out[j] = X.apply(f)
        return out

    def to_one_form(self, comps: Sequence) -> PolyOneForm:
        """Coordinate one-form from frame components α_j = α(F_j)."""
        out = []
        for beta in range(self.dim):
            acc = self.zero()
            for j in range(self.dim):
                a = comps[j]
                if isinstance(a, Number):
                    a = Poly.const(self.variables, a)
                acc = acc + a * self.coframe[j, beta]
            out.append(acc)
        return PolyOneForm(out)

    def divergence(self, a: int) -> Poly:
        """div F_a for the volume of the metric making the frame orthonormal."""
        acc = self.zero()
        for k in range(self.dim):
            acc = acc - self.structure[a, k, k]
        return acc

    def laplacian(self, f: Poly, horizontal_only: bool = True) -> Poly:
        """Σ_a (F_a F_a f + div(F_a) F_a f) over the horizontal (or full) frame."""
        acc = self.zero()
        for a in range(self.rank if horizontal_only else self.dim):
            fa = self.fields[a].apply(f)
            acc = acc + self.fields[a].apply(fa) + self.divergence(a) * fa
        return acc


class JetFrame(Frame):
    """A structured frame frozen at one base point; derivatives act through the anchor."""

    def __init__(self, structure: np.ndarray, anchor: np.ndarray, rank: int, names: Sequence[str], base_point):
        super().__init__(structure, rank, names)
        self.anchor = np.asarray(anchor, dtype=float)  # anchor[i, alpha] = F_i(u^alpha)
        self.base_point = tuple(float(x) for x in np.atleast_1d(base_point))

    def d(self, i, s):
        if isinstance(s, Jet):
            if s.grad is None:
                raise ValueError("second derivative requested but only first derivatives are available")
            return Jet(float(self.anchor[i] @ s.grad), None)
        if isinstance(s, Poly):
            raise TypeError("jet frames do not differentiate polynomials")
        return 0


# Structured frames ------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """A warping function f of one base coordinate together with f' and f''."""

    name: str
    f: Callable[[float], float]
    df: Callable[[float], float]
    d2f: Callable[[float], float]
    description: str = ""

    def jets(self, c: float) -> tuple[Jet, Jet]:
        return Jet(self.f(c), [self.df(c)]), Jet(self.df(c), [self.d2f(c)])


def _arctan_profile() -> Profile:
    return Profile(
        "neg_c_arctan",
        lambda c: -c * math.atan(c),
        lambda c: -math.atan(c) - c / (1 + c * c),
        lambda c: -1 / (1 + c * c) - (1 - c * c) / (1 + c * c) ** 2,
        "f(c) = -c*arctan(c): f', f'' bounded, f -> -inf",
    )


PROFILES: dict[str, Profile] = {
    "zero": Profile("zero", lambda c: 0.0, lambda c: 0.0, lambda c: 0.0, "f = 0"),
    "neg_c_arctan": _arctan_profile(),
    "neg_log_cosh": Profile(
        "neg_log_cosh",
        lambda c: -math.log(math.cosh(c)),
        lambda c: -math.tanh(c),
        lambda c: -1 / math.cosh(c) ** 2,
        "f(c) = -log(cosh(c)): f', f'' bounded, f -> -inf",
    ),
}


class StructuredFrame:
    """A frame whose structure functions depend on base parameters u."""

    base_dim = 1

    def __init__(self, names: Sequence[str], rank: int, default_grid: Sequence[float]):
        self.names = tuple(names)
        self.dim = len(self.names)
        self.rank = rank
        self.default_grid = tuple(default_grid)

    def frame_at(self, u) -> JetFrame:
        raise NotImplementedError

    def structure(self, u) -> np.ndarray:
        return to_float_array(self.frame_at(u).structure)

    def structure_derivative(self, u) -> np.ndarray:
        frame = self.frame_at(u)
        out = np.zeros((self.base_dim,) + frame.structure.shape)
        for idx, s in np.ndenumerate(frame.structure):
            if isinstance(s, Jet):
                out[(slice(None),) + idx] = s.grad
        return out

    def anchor(self, u) -> np.ndarray:
        return self.frame_at(u).anchor

    def consistency_residuals(self, u) -> dict[str, float]:
        """Pointwise antisymmetry, anchor compatibility and the frame Jacobi identity."""
        frame = self.frame_at(u)
        c = frame.structure
        anti = max_magnitude(c + np.einsum("jik->ijk", c))
        # [F_i,F_j] u = F_i(a_j) - F_j(a_i) = 0 for constant anchors
        anchor_res = max_magnitude(np.einsum("ijk,ka->ija", c, frame.anchor.astype(object)))
        jac = zeros((self.dim,) * 4)
        for i in range(self.dim):
            for j in range(self.dim):
                for k in range(self.dim):
                    for l in range(self.dim):
                        jac[i, j, k, l] = (frame.d(i, c[j, k, l]) + frame.d(j, c[k, i, l]) + frame.d(k, c[i, j, l]))
        jac = jac + (np.einsum("jkm,iml->ijkl", c, c) + np.einsum("kim,jml->ijkl", c, c)
                     + np.einsum("ijm,kml->ijkl", c, c))
        return {"antisymmetry": anti, "anchor": anchor_res, "jacobi": max_magnitude(jac)}


def _epsilon(i, j, k) -> int:
    return (i - j) * (j - k) * (k - i) // 2


class WarpedSu2PairFrame(StructuredFrame):
    """The su(2)⊕su(2)⊕ℝ frame with three horizontal fields warped by e^{f(c)}.

    With A^s_i = (A_i, A_i) and A^a_i = (A_i, −A_i) in su(2)⊕su(2) and c the ℝ coordinate,
    the working frame is (Z1, Z2, Z3, ∂c | A3^s, A2^a, A3^a) with
    Z1 = e^f A1^s, Z2 = e^f A2^s, Z3 = e^f A1^a; the first four span H.
    """

    # underlying basis B_k and the power of e^f multiplying it
    _basis = (("s", 0), ("s", 1), ("a", 0), ("c", None), ("s", 2), ("a", 1), ("a", 2))
    _weights = (1, 1, 1, 0, 0, 0, 0)

    def __init__(self, profile: Profile, grid: Sequence[float] = tuple(np.linspace(-10, 10, 41))):
        super().__init__(("Z1", "Z2", "Z3", "dc", "A3s", "A2a", "A3a"), 4, grid)
        self.profile = profile
        self._underlying = self._su2_pair_constants()

    def _su2_pair_constants(self) -> np.ndarray:
        index = {key: n for n, key in enumerate(self._basis)}
        b = np.zeros((7, 7, 7))
        for (ki, i), p in index.items():
            for (kj, j), q in index.items():
                if ki == "c" or kj == "c":
                    continue
                for k in range(3):
                    eps = _epsilon(i, j, k)
                    if eps:
                        kind = "s" if ki == kj else "a"
                        b[p, q, index[(kind, k)]] = eps
        return b

    def frame_at(self, u) -> JetFrame:
        c = float(np.atleast_1d(u)[0])
        f, fprime = self.profile.jets(c)
        w = self._weights
        n = self.dim
        structure = zeros((n, n, n))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    b = self._underlying[i, j, k]
                    if b:
                        structure[i, j, k] = (f * (w[i] + w[j] - w[k])).exp() * b
            # [∂c, e^{w f} B] = w f' e^{w f} B
        dc = 3
        for j in range(n):
            if w[j]:
                structure[dc, j, j] = structure[dc, j, j] + fprime * w[j]
                structure[j, dc, j] = structure[j, dc, j] - fprime * w[j]
        anchor = np.zeros((n, 1))
        anchor[dc, 0] = 1.0
        return JetFrame(structure, anchor, self.rank, self.names, (c,))


def counterexample_frame(profile: str | Profile = "neg_c_arctan") -> WarpedSu2PairFrame:
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise KeyError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        profile = PROFILES[profile]
    return WarpedSu2PairFrame(profile)
