import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ltpe.linop import (ShiftedSolver, SpectralOperator, apply, apply_shifted, solve_shifted,
                        thomas_solve)
from ltpe.model import builtin_allen_cahn


def allen_cahn_operator(K):
    return SpectralOperator.tridiagonal(K - 1, -2.0 * K * K, float(K * K))


def test_apply_scalar():
    assert np.array_equal(apply(SpectralOperator.scalar(-1.875), np.array([2.0])), [-3.75])


def test_apply_allen_cahn_first_column():
    out = apply(allen_cahn_operator(4), np.array([1.0, 0.0, 0.0]))
    assert np.array_equal(out, 16.0 * np.array([-2.0, 1.0, 0.0]))


def test_apply_batched_matches_dense():
    op = allen_cahn_operator(9)
    x = np.random.default_rng(0).normal(size=(5, 4, 8))
    assert np.allclose(apply(op, x), x @ op.to_dense().T, rtol=1e-14, atol=1e-12)


def test_apply_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        apply(allen_cahn_operator(4), np.zeros(4))


@pytest.mark.parametrize("K", [2, 3, 4, 8, 16])
def test_tridiagonal_spectrum_matches_dense_eigensolve(K):
    op = allen_cahn_operator(K)
    mags = np.sort(-np.linalg.eigvalsh(op.to_dense()))
    assert np.allclose(op.eig_mags, mags, rtol=0, atol=1e-10 * K * K)


def test_dense_and_tridiagonal_agree():
    tri = allen_cahn_operator(6)
    dense = SpectralOperator.dense(tri.to_dense())
    assert np.allclose(tri.eig_mags, dense.eig_mags, atol=1e-10)
    b = np.random.default_rng(1).normal(size=(3, 5))
    for theta in (0.25, 1.0):
        a = solve_shifted(ShiftedSolver(tri, theta, 2.0**-6), b)
        c = solve_shifted(ShiftedSolver(dense, theta, 2.0**-6), b)
        assert np.allclose(a, c, rtol=0, atol=1e-12)


def test_operator_validation():
    with pytest.raises(ValueError):
        SpectralOperator.scalar(0.5)
    with pytest.raises(ValueError):
        SpectralOperator.dense([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        SpectralOperator.diagonal([-1.0, 2.0])


def test_solve_explicit_is_identity():
    b = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(solve_shifted(ShiftedSolver(allen_cahn_operator(4), 0.0, 0.1), b), b)


def test_solve_scalar_example():
    s = ShiftedSolver(SpectralOperator.scalar(-2.0), 1.0, 0.25)
    assert solve_shifted(s, np.array([3.0]))[0] == pytest.approx(3.0 / 1.5, rel=1e-15)


def test_solve_allen_cahn_against_dense_lu():
    op = builtin_allen_cahn(4).linear
    s = ShiftedSolver(op, 1.0, 2.0**-6)
    b = np.random.default_rng(2).normal(size=3)
    y = solve_shifted(s, b)
    matrix = np.eye(3) - 2.0**-6 * op.to_dense()
    assert np.max(np.abs(matrix @ y - b)) <= 1e-12
    oracle = scipy.linalg.lu_solve(scipy.linalg.lu_factor(matrix), b)
    assert np.max(np.abs(y - oracle)) <= 1e-10


def test_thomas_solve_general_tridiagonal():
    rng = np.random.default_rng(3)
    n = 7
    lower, upper = rng.normal(size=n), rng.normal(size=n)
    diag = 5.0 + rng.random(n)
    matrix = np.diag(diag) + np.diag(upper[:-1], 1) + np.diag(lower[1:], -1)
    rhs = rng.normal(size=n)
    assert np.allclose(thomas_solve(lower, diag, upper, rhs), np.linalg.solve(matrix, rhs),
                       atol=1e-12)


def test_condition_number():
    s = ShiftedSolver(allen_cahn_operator(4), 1.0, 0.1)
    mags = s.operator.eig_mags
    assert s.condition_number == pytest.approx((1 + 0.1 * mags[-1]) / (1 + 0.1 * mags[0]))


OPERATORS = [SpectralOperator.scalar(-3.0), SpectralOperator.diagonal([-1.0, -4.0, -0.5]),
             allen_cahn_operator(8),
             SpectralOperator.dense([[-3.0, 1.0, 0.0], [1.0, -2.0, 0.5], [0.0, 0.5, -1.0]])]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(range(len(OPERATORS))), st.floats(0.0, 1.0), st.floats(1e-4, 1.0),
       arrays(np.float64, 7, elements=st.floats(-100, 100)))
def test_solve_inverts_apply(idx, theta, h, raw):
    op = OPERATORS[idx]
    s = ShiftedSolver(op, theta, h)
    y = raw[: op.dim]
    back = solve_shifted(s, apply_shifted(s, y))
    assert np.allclose(back, y, rtol=1e-10, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(range(len(OPERATORS))), st.floats(0.01, 1.0), st.floats(1e-4, 1.0),
       arrays(np.float64, 7, elements=st.floats(-100, 100)))
def test_implicit_solve_is_damping(idx, theta, h, raw):
    # (I - theta h A)^-1 has spectrum in (0, 1], so it never expands the norm
    op = OPERATORS[idx]
    b = raw[: op.dim]
    y = solve_shifted(ShiftedSolver(op, theta, h), b)
    assert np.linalg.norm(y) <= np.linalg.norm(b) * (1 + 1e-12)
