"""Sub-Riemannian structures, taming metrics and the connections built on them.

Connections are stored as frame coefficients gamma[i, j, k] with
∇_{F_i} F_j = Σ_k gamma[i, j, k] F_k in the orthonormal working frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Sequence

import numpy as np

from .frames import ConstantFrame, Frame, PolyFrame, StructuredFrame, magnitude, max_magnitude, zeros
from .lie_core import LieAlgebra, bracket
from .polycalc import left_invariant_fields, right_invariant_fields


class PreconditionError(ValueError):
    """An operation's hypothesis fails; the message names the offending components."""


def _exact_sqrt(x):
    if isinstance(x, Fraction) and x >= 0:
        rn, rd = math.isqrt(x.numerator), math.isqrt(x.denominator)
        if rn * rn == x.numerator and rd * rd == x.denominator:
            return Fraction(rn, rd)
    return math.sqrt(float(x))


def _as_matrix(m, size: int, exact: bool):
    if m is None:
        m = [[int(i == j) for j in range(size)] for i in range(size)]
    rows = [list(r) for r in m]
    if len(rows) != size or any(len(r) != size for r in rows):
        raise ValueError(f"expected a {size}x{size} Gram matrix")
    conv = (lambda x: Fraction(x)) if exact and all(isinstance(x, Rational) for r in rows for x in r) else float
    return np.array([[conv(x) for x in r] for r in rows], dtype=object if conv is not float else float)


def _check_spd(g) -> None:
    gf = np.asarray(g, dtype=float)
    if not np.allclose(gf, gf.T, atol=0):
        raise ValueError("Gram matrix is not symmetric")
    if np.linalg.eigvalsh(gf).min() <= 0:
        raise ValueError("Gram matrix is not positive definite")


class SubRiemannianStructure:
    """Horizontal subspace, its Gram matrix and a taming Gram matrix.

    Build with ``from_algebra`` (left-invariant structure on a nilpotent group) or
    ``from_structured`` (a structured frame that is orthonormal by declaration).
    """

    def __init__(self):
        raise TypeError("use SubRiemannianStructure.from_algebra or .from_structured")

    @classmethod
    def from_algebra(cls, alg: LieAlgebra, horizontal: Sequence[int] | None = None, gram_h=None,
                     gram_full=None, vertical: str = "left") -> "SubRiemannianStructure":
        self = object.__new__(cls)
        self.algebra = alg
        self.structured = None
        if horizontal is None:
            if alg.stratification is None:
                raise ValueError("no horizontal indices given and the algebra has no stratification")
            horizontal = alg.stratification.layers[0]
        self.horizontal = tuple(int(i) for i in horizontal)
        if len(set(self.horizontal)) != len(self.horizontal) or not all(0 <= i < alg.dim for i in self.horizontal):
            raise ValueError("horizontal indices must be distinct and in range")
        if vertical not in ("left", "right"):
            raise ValueError("vertical must be 'left' or 'right'")
        self.vertical = vertical
        n, dim = len(self.horizontal), alg.dim
        gh = _as_matrix(gram_h, n, True)
        if gram_full is None:
            gf = np.empty((dim, dim), dtype=gh.dtype)
            gf.fill(0 if gh.dtype == object else 0.0)
            for i in range(dim):
                gf[i, i] = Fraction(1) if gh.dtype == object else 1.0
            for a, i in enumerate(self.horizontal):
                for b, j in enumerate(self.horizontal):
                    gf[i, j] = gh[a, b]
        else:
            gf = _as_matrix(gram_full, dim, True)
        _check_spd(gh)
        _check_spd(gf)
        for a, i in enumerate(self.horizontal):
            for b, j in enumerate(self.horizontal):
                if gf[i, j] != gh[a, b]:
                    raise ValueError("gram_full does not tame gram_h (restriction to H differs)")
        self.gram_h, self.gram_full = gh, gf
        self.dim, self.n = dim, n
        self.basis = self._orthonormal_basis()
        self.exact = self.basis.dtype == object and alg.exact
        self.basis_inverse = self._invert(self.basis)
        if vertical == "right":
            self._check_vertical_ideal()
        self._poly_frame = None
        self._constant_frame = None
        return self

    @classmethod
    def from_structured(cls, frame: StructuredFrame) -> "SubRiemannianStructure":
        self = object.__new__(cls)
        self.algebra = None
        self.structured = frame
        self.horizontal = tuple(range(frame.rank))
        self.vertical = "frame"
        self.dim, self.n = frame.dim, frame.rank
        eye = np.eye(frame.dim)
        self.gram_h, self.gram_full = eye[: frame.rank, : frame.rank], eye
        self.basis = self.basis_inverse = eye
        self.exact = False
        self._poly_frame = self._constant_frame = None
        return self

    # frames --------------------------------------------------------------------
    @property
    def is_lie(self) -> bool:
        return self.algebra is not None

    @property
    def names(self) -> tuple[str, ...]:
        if self.structured is not None:
            return self.structured.names
        out = []
        for a in range(self.dim):
            col = [self.basis[i, a] for i in range(self.dim)]
            nz = [i for i, x in enumerate(col) if x != 0]
            out.append(self.algebra.basis_names[nz[0]] if len(nz) == 1 and col[nz[0]] == 1 else f"F{a + 1}")
        return tuple(out)

    def _orthonormal_basis(self) -> np.ndarray:
        dim, g = self.dim, self.gram_full
        order = list(self.horizontal) + [i for i in range(dim) if i not in self.horizontal]
        exact = g.dtype == object
        one = Fraction(1) if exact else 1.0
        vectors = []
        for i in order:
            v = [one * int(k == i) for k in range(dim)]
            for u in vectors:
                proj = sum(v[a] * g[a, b] * u[b] for a in range(dim) for b in range(dim))
                v = [va - proj * ua for va, ua in zip(v, u)]
            norm = _exact_sqrt(sum(v[a] * g[a, b] * v[b] for a in range(dim) for b in range(dim)))
            if not isinstance(norm, Fraction):
                exact = False
            vectors.append([va / norm for va in v])
        arr = np.array(vectors, dtype=object).T
        if not exact or any(not isinstance(x, Fraction) for x in arr.flat):
            return arr.astype(float)
        return arr

    @staticmethod
    def _invert(b: np.ndarray) -> np.ndarray:
        if b.dtype == object:
            import sympy
            inv = sympy.Matrix([[sympy.Rational(x.numerator, x.denominator) for x in row] for row in b]).inv()
            return np.array([[Fraction(int(x.p), int(x.q)) for x in row] for row in inv.tolist()], dtype=object)
        return np.linalg.inv(b)

    def _check_vertical_ideal(self) -> None:
        alg = self.algebra
        for a in range(self.n, self.dim):
            v = list(self.basis[:, a])
            for i in range(alg.dim):
                e = [int(k == i) for k in range(alg.dim)]
                w = self.basis_inverse.dot(bracket(alg, e, v))
                if any(magnitude(w[k]) > 0 for k in range(self.n)):
                    raise ValueError("right-invariant vertical fields need V to be an ideal")

    def working_structure(self) -> np.ndarray:
        """Structure constants of the orthonormal working basis (Lie structures only)."""
        c = self.algebra.structure_array() if self.exact else self.algebra.float_structure()
        b, binv = self.basis, self.basis_inverse
        return np.einsum("ia,jb,ijl,kl->abk", b, b, c, binv)

    def constant_frame(self) -> ConstantFrame:
        if self.algebra is None or self.vertical != "left":
            raise PreconditionError("a constant frame needs a left-invariant Lie structure")
        if self._constant_frame is None:
            self._constant_frame = ConstantFrame(self.working_structure(), self.n, self.names)
        return self._constant_frame

    def poly_frame(self) -> PolyFrame:
        if self.algebra is None:
            raise PreconditionError("polynomial frames need a Lie algebra structure")
        if self._poly_frame is None:
            left = left_invariant_fields(self.algebra)
            right = right_invariant_fields(self.algebra) if self.vertical == "right" else left
            fields = []
            for a in range(self.dim):
                src = left if a < self.n else right
                acc = None
                for i in range(self.dim):
                    coef = self.basis[i, a]
                    if coef != 0:
                        term = src[i] * coef
                        acc = term if acc is None else acc + term
                fields.append(acc)
            self._poly_frame = PolyFrame(fields, self.n, self.names, left_invariant=self.vertical == "left")
        return self._poly_frame

    def frame_at(self, u=None) -> Frame:
        """Working frame at a base point (structured) or the group frame (Lie)."""
        if self.structured is not None:
            if u is None:
                raise ValueError("structured frames need a base point")
            return self.structured.frame_at(u)
        if self.vertical == "left":
            return self.constant_frame()
        return self.poly_frame()

    def sample_points(self, grid=None) -> list:
        if self.structured is not None:
            return list(grid if grid is not None else self.structured.default_grid)
        if self.vertical == "left":
            return [None]
        if grid is not None:
            return list(grid)
        rng = np.random.default_rng(0)
        return [tuple(p) for p in rng.uniform(-2, 2, size=(16, self.dim))]

    # musical maps ----------------------------------------------------------------
    def _horizontal_inverse_gram(self):
        g = self.gram_h
        if g.dtype == object:
            return self._invert(g)
        return np.linalg.inv(g)

    def sharp_H(self, alpha: Sequence) -> np.ndarray:
        """The horizontal vector v with alpha(w) = <v, w> for every horizontal w (declared basis)."""
        if len(alpha) != self.dim:
            raise ValueError(f"covector must have length {self.dim}")
        ginv = self._horizontal_inverse_gram()
        a_h = [alpha[i] for i in self.horizontal]
        coeffs = ginv.dot(np.array(a_h, dtype=ginv.dtype))
        out = np.zeros(self.dim, dtype=ginv.dtype)
        for a, i in enumerate(self.horizontal):
            out[i] = coeffs[a]
        return out

    def cometric(self, alpha: Sequence, beta: Sequence):
        v = self.sharp_H(alpha)
        return sum(v[i] * beta[i] for i in range(self.dim))

    def to_working_covector(self, alpha) -> np.ndarray:
        return np.asarray(self.basis).T.dot(np.asarray(alpha))

    def to_working_vector(self, v) -> np.ndarray:
        return np.asarray(self.basis_inverse).dot(np.asarray(v))


# Connections --------------------------------------------------------------------

@dataclass(frozen=True)
class FrameConnection:
    frame: Frame
    gamma: np.ndarray
    name: str = "connection"

    @property
    def dim(self) -> int:
        return self.frame.dim

    @property
    def rank(self) -> int:
        return self.frame.rank


def _half(arr):
    return arr * Fraction(1, 2)


def torsion(conn: FrameConnection) -> np.ndarray:
    """T[i, j, k]: component k of T(F_i, F_j) = ∇_i F_j − ∇_j F_i − [F_i, F_j]."""
    g, c = conn.gamma, conn.frame.structure
    return g - np.einsum("jik->ijk", g) - c


def flat_connection(frame: Frame) -> FrameConnection:
    """The connection making every left-invariant field parallel."""
    if not frame.left_invariant:
        raise PreconditionError("flat connection needs a left-invariant frame")
    return FrameConnection(frame, zeros((frame.dim,) * 3), "flat")


def levi_civita(frame: Frame) -> FrameConnection:
    """Koszul formula in an orthonormal frame."""
    c = frame.structure
    gamma = _half(c - np.einsum("jki->ijk", c) + np.einsum("kij->ijk", c))
    return FrameConnection(frame, gamma, "levi-civita")


def adjoint_connection(conn: FrameConnection) -> FrameConnection:
    """∇̂_A B = ∇_B A + [A, B]."""
    gamma = np.einsum("jik->ijk", conn.gamma) + conn.frame.structure
    name = conn.name[:-8] if conn.name.endswith("-adjoint") else conn.name + "-adjoint"
    return FrameConnection(conn.frame, gamma, name)


def _block_masks(frame: Frame):
    h = frame.horizontal_mask()
    return h, ~h


def curvature_cocurvature(frame: Frame) -> tuple[np.ndarray, np.ndarray]:
    """(𝓡, 𝓡̄): vertical part of horizontal brackets, horizontal part of vertical brackets."""
    h, v = _block_masks(frame)
    c = frame.structure
    curv, cocurv = zeros(c.shape), zeros(c.shape)
    mask_r = h[:, None, None] & h[None, :, None] & v[None, None, :]
    mask_rb = v[:, None, None] & v[None, :, None] & h[None, None, :]
    curv[mask_r] = c[mask_r]
    cocurv[mask_rb] = c[mask_rb]
    return curv, cocurv


def torsion_form(frame: Frame) -> np.ndarray:
    """ζ = cyclic sum of <(𝓡 + 𝓡̄)(·,·), ·>, a three-form in frame components."""
    curv, cocurv = curvature_cocurvature(frame)
    s = curv + cocurv
    return s + np.einsum("jki->ijk", s) + np.einsum("kij->ijk", s)


def ii_tensor(frame: Frame) -> np.ndarray:
    """II[a, b, k] = <II(F_a, F_b), F_k>.

    Built from the Lie derivatives of g along vertical fields on H and along horizontal
    fields on V: (L_Z g)(A, B) = −c[Z, A, B] − c[Z, B, A] in an orthonormal frame.
    """
    h, v = _block_masks(frame)
    c = frame.structure
    sym = _half(np.einsum("kab->abk", c) + np.einsum("kba->abk", c))
    out = zeros(c.shape)
    mask = (h[:, None, None] & h[None, :, None] & v[None, None, :]) | (v[:, None, None] & v[None, :, None] & h[None, None, :])
    out[mask] = sym[mask]
    return out


def _nonzero_entries(arr, tol: float) -> list[tuple[tuple[int, ...], float]]:
    return [(tuple(i + 1 for i in idx), magnitude(s)) for idx, s in np.ndenumerate(arr) if magnitude(s) > tol]


def canonical_connection(frame: Frame, tol: float = 0.0) -> FrameConnection:
    """∇ = ∇^g − ½ ♯ι ζ, the compatible connection with maximal Ricci lower bound."""
    bad = _nonzero_entries(ii_tensor(frame), tol)
    if bad:
        listing = ", ".join(f"II{idx}={val:.3g}" for idx, val in bad[:8])
        raise PreconditionError(f"II tensor does not vanish: {listing}")
    gamma = levi_civita(frame).gamma - _half(torsion_form(frame))
    return FrameConnection(frame, gamma, "canonical")


def bott_connection(frame: Frame) -> FrameConnection:
    """Projected Levi-Civita on H×H→H and V×V→V, brackets on V×H→H and H×V→V."""
    h, v = _block_masks(frame)
    lc = levi_civita(frame).gamma
    c = frame.structure
    gamma = zeros(c.shape)
    same = (h[:, None, None] & h[None, :, None] & h[None, None, :]) | (v[:, None, None] & v[None, :, None] & v[None, None, :])
    gamma[same] = lc[same]
    cross = (v[:, None, None] & h[None, :, None] & h[None, None, :]) | (h[:, None, None] & v[None, :, None] & v[None, None, :])
    gamma[cross] = c[cross]
    return FrameConnection(frame, gamma, "bott")


def projected_connection(frame: Frame) -> FrameConnection:
    """pr_H ∇^g pr_H + pr_V ∇^g pr_V, a connection compatible with both g_H and g."""
    h, v = _block_masks(frame)
    lc = levi_civita(frame).gamma
    gamma = zeros(lc.shape)
    keep = (h[None, :, None] & h[None, None, :]) | (v[None, :, None] & v[None, None, :])
    keep = np.broadcast_to(keep, lc.shape)
    gamma[keep] = lc[keep]
    return FrameConnection(frame, gamma, "projected")


def perturbed_connection(conn: FrameConnection, lam=None, beta=None, tol: float = 1e-14) -> FrameConnection:
    """∇'_{Z1} Z2 = ∇_{Z1} Z2 + λ(Z2) Z1 + ♯^H ι_{Z1∧Z2} β.

    ``lam[j, k, i]`` is component k of λ(F_j) F_i; ``beta[i, j, k]`` = β(F_i, F_j, F_k).
    λ must vanish on H and take g-antisymmetric values; β must be alternating and vanish
    whenever one argument is vertical.
    """
    frame = conn.frame
    n, dim = frame.rank, frame.dim
    lam = np.zeros((dim,) * 3) if lam is None else np.asarray(lam)
    beta = np.zeros((dim,) * 3) if beta is None else np.asarray(beta)
    errors = []
    for (j, k, i), val in np.ndenumerate(lam):
        if j < n and magnitude(val) > tol:
            errors.append(f"lambda({frame.names[j]}) must vanish on H: entry ({j + 1},{k + 1},{i + 1})")
        if magnitude(val + lam[j, i, k]) > tol and (j, i, k) >= (j, k, i):
            errors.append(f"lambda({frame.names[j]}) not antisymmetric at ({k + 1},{i + 1})")
    for (i, j, k), val in np.ndenumerate(beta):
        if magnitude(val) > tol and max(i, j, k) >= n:
            errors.append(f"beta has a vertical argument at ({i + 1},{j + 1},{k + 1})")
        for perm in ((j, i, k), (i, k, j), (k, j, i)):
            if magnitude(val + beta[perm]) > tol:
                errors.append(f"beta not alternating at ({i + 1},{j + 1},{k + 1})")
                break
    if errors:
        raise PreconditionError("; ".join(errors))
    gamma = conn.gamma + np.einsum("jki->ijk", lam)
    gamma = gamma + np.where(np.arange(dim)[None, None, :] < n, beta, 0)
    return FrameConnection(frame, gamma, conn.name + "-perturbed")


@dataclass
class CompatibilityReport:
    h_preservation: float
    horizontal_metric: float
    full_metric: float
    tolerance: float
    offending: list = field(default_factory=list)

    @property
    def compatible(self) -> bool:
        """Preserves H and g_H, i.e. ∇g_H^* = 0."""
        return self.h_preservation <= self.tolerance and self.horizontal_metric <= self.tolerance

    @property
    def metric(self) -> bool:
        """Compatible with the taming metric g."""
        return self.full_metric <= self.tolerance

    def to_dict(self) -> dict:
        return {"h_preservation": self.h_preservation, "horizontal_metric": self.horizontal_metric,
                "full_metric": self.full_metric, "tolerance": self.tolerance,
                "compatible": self.compatible, "metric": self.metric}


def check_compatible(conn: FrameConnection, tol: float = 0.0) -> CompatibilityReport:
    n = conn.rank
    g = conn.gamma
    out_of_h = g[:, :n, n:]
    sym = g + np.einsum("ikj->ijk", g)
    offending = _nonzero_entries(out_of_h, tol)
    return CompatibilityReport(max_magnitude(out_of_h), max_magnitude(sym[:, :n, :n]), max_magnitude(sym), tol,
                               [("vertical part of horizontal derivative", idx, val) for idx, val in offending])


def trace_torsion(conn: FrameConnection) -> np.ndarray:
    """The one-form v ↦ tr T(v, ·) in frame components."""
    t = torsion(conn)
    return np.einsum("vkk->v", t)
