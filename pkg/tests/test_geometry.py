import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from subriem.curvature import ricci
from subriem.frames import to_float_array
from subriem.geometry import (FrameConnection, PreconditionError, SubRiemannianStructure, canonical_connection,
                              check_compatible, ii_tensor, perturbed_connection, torsion)
from subriem.lie_core import heisenberg, heisenberg5


def min_horizontal_ricci(conn):
    ric = to_float_array(ricci(conn))
    n = conn.rank
    return float(np.linalg.eigvalsh(0.5 * (ric + ric.T)[:n, :n]).min())


def alternating(n, dim, values):
    beta = np.zeros((dim,) * 3)
    for (i, j, k), v in zip(itertools.combinations(range(n), 3), values):
        for perm, sign in (((i, j, k), 1), ((j, k, i), 1), ((k, i, j), 1),
                           ((j, i, k), -1), ((i, k, j), -1), ((k, j, i), -1)):
            beta[perm] = sign * v
    return beta


def vertical_skew(n, dim, values):
    lam = np.zeros((dim,) * 3)
    values = iter(values)
    for j in range(n, dim):
        for k, i in itertools.combinations(range(dim), 2):
            v = next(values)
            lam[j, k, i], lam[j, i, k] = v, -v
    return lam


def test_weighted_metric_gives_orthonormal_working_frame():
    srs = SubRiemannianStructure.from_algebra(heisenberg(), gram_h=[[4, 0], [0, 1]])
    assert srs.exact
    basis = srs.basis
    gram = np.array([[Fraction(4), 0, 0], [0, 1, 0], [0, 0, 1]], dtype=object)
    assert (basis.T.dot(gram).dot(basis) == np.eye(3, dtype=int)).all()


def test_gram_must_be_positive_definite():
    with pytest.raises(ValueError):
        SubRiemannianStructure.from_algebra(heisenberg(), gram_h=[[1, 2], [2, 1]])


def test_canonical_connection_on_heisenberg(heis):
    conn = canonical_connection(heis.constant_frame())
    report = check_compatible(conn)
    assert report.compatible and report.metric
    t = torsion(conn)
    # only the curvature of H survives in the torsion: T(X, Y) = −Z
    assert t[0, 1, 2] == -1 and t[1, 0, 2] == 1
    assert all(x == 0 for x in ii_tensor(heis.constant_frame()).flat)


def test_canonical_connection_needs_vanishing_second_fundamental_form(engel_left):
    with pytest.raises(PreconditionError, match="II"):
        canonical_connection(engel_left.constant_frame())


def test_right_invariant_complement_admits_the_canonical_connection(engel_right):
    conn = canonical_connection(engel_right.poly_frame())
    assert check_compatible(conn).compatible


@pytest.mark.parametrize("fixture", ["heis", "heis5", "engel_right"])
def test_ricci_kills_the_annihilator_of_h(fixture, request):
    srs = request.getfixturevalue(fixture)
    frame = srs.constant_frame() if srs.vertical == "left" else srs.poly_frame()
    ric = ricci(canonical_connection(frame))
    assert all(x == 0 for x in ric[:, srs.n:].flat)


def test_perturbation_rejects_horizontal_lambda_and_vertical_beta(heis):
    conn = canonical_connection(heis.constant_frame())
    lam = np.zeros((3, 3, 3))
    lam[0, 0, 1], lam[0, 1, 0] = 1, -1
    with pytest.raises(PreconditionError, match="vanish on H"):
        perturbed_connection(conn, lam=lam)
    with pytest.raises(PreconditionError, match="vertical argument"):
        perturbed_connection(conn, beta=alternating(3, 3, [1.0]))


def test_perturbations_stay_compatible(heis5):
    conn = canonical_connection(heis5.constant_frame())
    rng = np.random.default_rng(3)
    lam = vertical_skew(4, 5, rng.normal(size=10))
    beta = alternating(4, 5, rng.normal(size=4))
    assert check_compatible(perturbed_connection(conn, lam, beta), 1e-12).compatible


finite = st.floats(-2, 2, allow_nan=False)


@given(st.lists(finite, min_size=3, max_size=3))
def test_heisenberg_ricci_is_unchanged_by_vertical_lambda(values):
    srs = SubRiemannianStructure.from_algebra(heisenberg())
    conn = canonical_connection(srs.constant_frame())
    perturbed = perturbed_connection(conn, vertical_skew(2, 3, values))
    assert min_horizontal_ricci(perturbed) == pytest.approx(min_horizontal_ricci(conn), abs=1e-12)


@given(st.lists(finite, min_size=10, max_size=10),
       st.lists(st.floats(0.1, 2), min_size=4, max_size=4), st.lists(st.booleans(), min_size=4, max_size=4))
def test_canonical_connection_maximises_the_ricci_lower_bound(lam_values, beta_sizes, signs):
    srs = SubRiemannianStructure.from_algebra(heisenberg5())
    conn = canonical_connection(srs.constant_frame())
    base = min_horizontal_ricci(conn)
    lam = vertical_skew(4, 5, lam_values)
    assert min_horizontal_ricci(perturbed_connection(conn, lam)) <= base + 1e-12
    beta = alternating(4, 5, [s if positive else -s for s, positive in zip(beta_sizes, signs)])
    assert min_horizontal_ricci(perturbed_connection(conn, lam, beta)) < base - 1e-9


def test_vertical_beta_would_break_maximality(heis):
    # bypass validation: a 3-form with a vertical slot raises the bound, which is why it is rejected
    conn = canonical_connection(heis.constant_frame())
    base = min_horizontal_ricci(conn)
    beta = alternating(3, 3, [0.5])
    gamma = conn.gamma + np.where(np.arange(3)[None, None, :] < 2, beta, 0)
    assert min_horizontal_ricci(FrameConnection(conn.frame, gamma, "unchecked")) > base
