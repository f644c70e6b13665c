"""Lie algebras given by structure constants, stratifications and the BCH group law.

Indices are 0-based in the Python API.  Spec files and diagnostic reports use
1-based indices, matching the usual mathematical notation.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy

MAX_BCH_STEP = 4


class UnsupportedStepError(ValueError):
    """Raised when a group law is requested for an algebra of step > 4 or a non-nilpotent one."""


@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple[int, ...]
    residual: float

    def __str__(self) -> str:
        idx = ",".join(str(i) for i in self.indices)
        return f"{self.kind} violation at ({idx}), residual {self.residual:.3g}"


def _is_exact(value) -> bool:
    return isinstance(value, Rational)


def _exactify(value):
    if isinstance(value, bool):
        raise TypeError("boolean structure constant")
    if isinstance(value, Rational):
        return Fraction(value)
    return float(value)


def _rank(rows: list[list], exact: bool) -> int:
    if not rows:
        return 0
    if exact:
        return sympy.Matrix([[sympy.Rational(x.numerator, x.denominator) for x in r] for r in rows]).rank()
    return int(np.linalg.matrix_rank(np.array(rows, dtype=float), tol=1e-10))


def _row_basis(rows: list[list], exact: bool) -> list[list]:
    """Independent subset of the rows spanning the same space."""
    basis: list[list] = []
    for r in rows:
        if _rank(basis + [r], exact) > len(basis):
            basis.append(r)
    return basis


@dataclass(frozen=True)
class Stratification:
    """Ordered layers of basis indices; layer j (1-based) has dilation weight j."""

    layers: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(int(i) for i in layer) for layer in self.layers))

    @property
    def step(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def weights(self) -> tuple[int, ...]:
        """Dilation weight of each basis index."""
        w = [0] * self.dim
        for j, layer in enumerate(self.layers, start=1):
            for i in layer:
                w[i] = j
        return tuple(w)

    def is_partition(self, dim: int) -> bool:
        flat = [i for layer in self.layers for i in layer]
        return sorted(flat) == list(range(dim)) and all(self.layers)


class LieAlgebra:
    """A finite-dimensional Lie algebra stored as sparse structure constants.

    ``constants[(i, j, k)] = c`` means the coefficient of e_k in [e_i, e_j].  Entries are
    stored exactly as given: no antisymmetric completion happens here, so that
    ``validate_algebra`` can report inconsistent input.  Use ``from_brackets`` to
    complete the antisymmetric partners automatically.
    """

    def __init__(self, dim: int, constants: Mapping[tuple[int, int, int], object],
                 basis_names: Sequence[str] | None = None,
                 stratification: Stratification | None = None):
        if dim <= 0:
            raise ValueError("dimension must be positive")
        cleaned = {}
        for (i, j, k), value in constants.items():
            for idx in (i, j, k):
                if not 0 <= idx < dim:
                    raise ValueError(f"structure constant index {idx} out of range for dim {dim}")
            value = _exactify(value)
            if value != 0:
                cleaned[(int(i), int(j), int(k))] = value
        self.dim = dim
        self.constants: dict[tuple[int, int, int], object] = cleaned
        self.basis_names = tuple(basis_names) if basis_names is not None else tuple(f"e{i + 1}" for i in range(dim))
        if len(self.basis_names) != dim:
            raise ValueError("basis_names length must equal dim")
        self.stratification = stratification
        self.exact = all(_is_exact(v) for v in cleaned.values())
        self._step: int | None | bool = False

    @classmethod
    def from_brackets(cls, dim: int, brackets: Iterable[tuple[int, int, int, object]], **kwargs) -> "LieAlgebra":
        """Build from [e_i, e_j] = value * e_k entries, filling in [e_j, e_i] where absent."""
        given = {}
        for i, j, k, value in brackets:
            given[(i, j, k)] = given.get((i, j, k), 0) + _exactify(value)
        full = dict(given)
        for (i, j, k), value in given.items():
            if (j, i, k) not in given:
                full[(j, i, k)] = -value
        return cls(dim, full, **kwargs)

    def __repr__(self) -> str:
        return f"LieAlgebra(dim={self.dim}, basis={self.basis_names}, nonzero={len(self.constants)})"

    def structure_array(self) -> np.ndarray:
        """Dense c[i, j, k]; object dtype holding Fractions when exact, float otherwise."""
        if self.exact:
            arr = np.empty((self.dim,) * 3, dtype=object)
            arr.fill(Fraction(0))
        else:
            arr = np.zeros((self.dim,) * 3)
        for key, value in self.constants.items():
            arr[key] = value
        return arr

    def float_structure(self) -> np.ndarray:
        arr = np.zeros((self.dim,) * 3)
        for key, value in self.constants.items():
            arr[key] = float(value)
        return arr

    def lower_central_series(self) -> list[int]:
        """Dimensions of g, [g,g], [g,[g,g]], ... until they stabilise."""
        exact = self.exact
        zero = Fraction(0) if exact else 0.0
        current = [[Fraction(int(a == b)) if exact else float(a == b) for b in range(self.dim)] for a in range(self.dim)]
        dims = [self.dim]
        while True:
            rows = []
            for i in range(self.dim):
                ei = [zero] * self.dim
                ei[i] = Fraction(1) if exact else 1.0
                for w in current:
                    rows.append(list(bracket(self, ei, w)))
            current = _row_basis(rows, exact)
            if len(current) == dims[-1]:
                return dims
            dims.append(len(current))
            if not current:
                return dims

    @property
    def step(self) -> int | None:
        """Nilpotency step (number of nonzero terms of the lower central series), None if not nilpotent."""
        if self._step is False:
            dims = self.lower_central_series()
            self._step = len(dims) - 1 if dims[-1] == 0 else None
        return self._step


def validate_algebra(alg: LieAlgebra, tol: float = 0.0) -> list[Violation]:
    """Every antisymmetry and Jacobi violation, with 1-based indices."""
    c = alg.structure_array()
    report: list[Violation] = []
    n = alg.dim
    for i in range(n):
        for j in range(i, n):
            for k in range(n):
                r = c[i, j, k] + c[j, i, k]
                if abs(r) > tol:
                    report.append(Violation("antisymmetry", (i + 1, j + 1, k + 1), float(abs(r))))
    # Jacobi: [e_i,[e_j,e_l]] + [e_j,[e_l,e_i]] + [e_l,[e_i,e_j]]
    jac = (np.einsum("jlp,ipm->ijlm", c, c) + np.einsum("lip,jpm->ijlm", c, c)
           + np.einsum("ijp,lpm->ijlm", c, c))
    for i in range(n):
        for j in range(i + 1, n):
            for l in range(j + 1, n):
                for m in range(n):
                    r = jac[i, j, l, m]
                    if abs(r) > tol:
                        report.append(Violation("jacobi", (i + 1, j + 1, l + 1, m + 1), float(abs(r))))
    return report


def _as_vector(v):
    if isinstance(v, np.ndarray) and v.dtype != object:
        return v.astype(float, copy=False)
    arr = np.empty(len(v), dtype=object)
    arr[:] = list(v)
    return arr


def bracket(alg: LieAlgebra, v, w):
    """[v, w] for algebra vectors.

    Float arrays may carry leading batch axes (the basis index is the last axis).
    Other sequences are treated as 1-d vectors of arbitrary scalars (Fractions, polynomials).
    """
    v = _as_vector(v)
    w = _as_vector(w)
    if v.shape[-1] != alg.dim or w.shape[-1] != alg.dim:
        raise ValueError(f"expected vectors of length {alg.dim}")
    if v.dtype == object or w.dtype == object:
        out = np.empty(alg.dim, dtype=object)
        out.fill(0)
        for (i, j, k), c in alg.constants.items():
            out[k] = out[k] + c * v[i] * w[j]
        return out
    out = np.zeros(np.broadcast_shapes(v.shape, w.shape))
    for (i, j, k), c in alg.constants.items():
        out[..., k] += float(c) * (v[..., i] * w[..., j])
    return out


def bch_product(alg: LieAlgebra, x, y):
    """Group product in exponential coordinates of the first kind.

    Exact for nilpotent algebras of step at most 4; terms vanishing by nilpotency are skipped.
    """
    step = alg.step
    if step is None or step > MAX_BCH_STEP:
        raise UnsupportedStepError(f"BCH product needs a nilpotent algebra of step <= {MAX_BCH_STEP}, got step {step}")
    x = _as_vector(x)
    y = _as_vector(y)
    z = x + y
    if step >= 2:
        xy = bracket(alg, x, y)
        z = z + xy * Fraction(1, 2) if z.dtype == object else z + 0.5 * xy
        if step >= 3:
            x_xy = bracket(alg, x, xy)
            y_yx = -bracket(alg, y, xy)
            third = x_xy + y_yx
            z = z + third * Fraction(1, 12) if z.dtype == object else z + third / 12.0
            if step >= 4:
                fourth = bracket(alg, y, x_xy)
                z = z - fourth * Fraction(1, 24) if z.dtype == object else z - fourth / 24.0
    return z


def group_inverse(x):
    return -_as_vector(x)


def ad_matrix(alg: LieAlgebra, v) -> np.ndarray:
    """Matrix M with M @ w = [v, w] in the declared basis."""
    v = _as_vector(v)
    exact = alg.exact and v.dtype == object
    m = np.empty((alg.dim, alg.dim), dtype=object) if exact else np.zeros((alg.dim, alg.dim))
    if exact:
        m.fill(Fraction(0))
    for (i, j, k), c in alg.constants.items():
        m[k, j] = m[k, j] + c * v[i]
    return m


def verify_stratification(alg: LieAlgebra, strat: Stratification, tol: float = 0.0) -> list[Violation]:
    """Grading and generation checks; an empty list means the stratification is valid."""
    report: list[Violation] = []
    if not strat.is_partition(alg.dim):
        return [Violation("partition", tuple(i + 1 for layer in strat.layers for i in layer), 1.0)]
    weight = strat.weights()
    k = strat.step
    for (i, j, m), c in alg.constants.items():
        target = weight[i] + weight[j]
        if weight[m] != target and abs(c) > tol:
            report.append(Violation("grading", (i + 1, j + 1, m + 1), float(abs(c))))
    for j in range(1, k):
        nxt = strat.layers[j]
        rows = []
        for a in strat.layers[0]:
            for b in strat.layers[j - 1]:
                rows.append([alg.constants.get((a, b, m), Fraction(0) if alg.exact else 0.0) for m in nxt])
        deficit = len(nxt) - _rank(rows, alg.exact)
        if deficit > 0:
            report.append(Violation("generation", tuple(m + 1 for m in nxt), float(deficit)))
    return report


def homogeneous_dimension(strat: Stratification) -> int:
    return sum(j * len(layer) for j, layer in enumerate(strat.layers, start=1))


def dilation(strat: Stratification, s, x):
    """δ_s: scale each coordinate by s to the power of its layer weight."""
    if not s > 0:
        raise ValueError("dilation factor must be positive")
    x = _as_vector(x)
    scale = [s ** w for w in strat.weights()]
    if x.dtype == object:
        out = np.empty(len(x), dtype=object)
        out[:] = [xi * si for xi, si in zip(x, scale)]
        return out
    return x * np.array(scale, dtype=float)


# Built-in algebras ----------------------------------------------------------

def abelian(n: int) -> LieAlgebra:
    return LieAlgebra(n, {}, basis_names=[f"x{i + 1}" for i in range(n)] if n > 3 else "xyz"[:n],
                      stratification=Stratification((tuple(range(n)),)))


def heisenberg() -> LieAlgebra:
    return LieAlgebra.from_brackets(3, [(0, 1, 2, 1)], basis_names=("x", "y", "z"),
                                    stratification=Stratification(((0, 1), (2,))))


def heisenberg5() -> LieAlgebra:
    """Five-dimensional Heisenberg algebra: [e1,e2] = [e3,e4] = e5."""
    return LieAlgebra.from_brackets(5, [(0, 1, 4, 1), (2, 3, 4, 1)],
                                    basis_names=("x1", "y1", "x2", "y2", "z"),
                                    stratification=Stratification(((0, 1, 2, 3), (4,))))


def engel() -> LieAlgebra:
    return LieAlgebra.from_brackets(4, [(0, 1, 2, 1), (0, 2, 3, 1)], basis_names=("x1", "x2", "x3", "x4"),
                                    stratification=Stratification(((0, 1), (2,), (3,))))


def su2() -> LieAlgebra:
    """[A1,A2] = A3, [A2,A3] = A1, [A3,A1] = A2."""
    return LieAlgebra.from_brackets(3, [(0, 1, 2, 1), (1, 2, 0, 1), (2, 0, 1, 1)], basis_names=("A1", "A2", "A3"))


BUILTIN_ALGEBRAS = {
    "abelian2": lambda: abelian(2),
    "heisenberg": heisenberg,
    "heisenberg5": heisenberg5,
    "engel": engel,
}
