import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from novalley import linalg
from novalley.errors import ContractViolation, UnsupportedSizeError, ValidationError


def leibniz_det(a):
    n = a.shape[0]
    total = 0.0
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        total += (-1) ** inv * np.prod([a[i, perm[i]] for i in range(n)])
    return total


def pinv_eig(a):
    """Pseudoinverse from the eigendecomposition of A^T A."""
    w, q = np.linalg.eigh(a.T @ a)
    keep = w > 1e-12 * w.max()
    return q[:, keep] @ np.diag(1.0 / w[keep]) @ q[:, keep].T @ a.T


def test_identity_system(backend):
    sol = linalg.solve_least_squares(np.eye(3), np.eye(3), backend=backend)
    np.testing.assert_allclose(sol.solution, np.eye(3), atol=1e-15)
    assert sol.residual_norm == pytest.approx(0.0, abs=1e-15)
    assert sol.effective_rank == 3


def test_tall_exact_system(backend):
    a = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    b = np.array([[1.0], [4.0], [0.0]])
    sol = linalg.solve_least_squares(a, b, backend=backend)
    np.testing.assert_allclose(sol.solution, [[1.0], [2.0]], atol=1e-15)
    assert sol.residual_norm <= 1e-15


def test_min_norm_rank_one(backend):
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    b = np.array([[2.0], [2.0]])
    sol = linalg.solve_least_squares(a, b, backend=backend)
    np.testing.assert_allclose(sol.solution, pinv_eig(a) @ b, atol=1e-14)
    np.testing.assert_allclose(sol.solution, [[1.0], [1.0]], atol=1e-14)
    assert sol.effective_rank == 1


def test_one_dimensional_rhs(backend):
    a = np.array([[2.0, 0.0], [0.0, 4.0]])
    sol = linalg.solve_least_squares(a, np.array([2.0, 2.0]), backend=backend)
    assert sol.solution.shape == (2,)
    np.testing.assert_allclose(sol.solution, [1.0, 0.5])


@pytest.mark.parametrize("shape", [(8, 5), (5, 8), (6, 6), (12, 3)])
def test_matches_lapack_min_norm(backend, rng, shape):
    a = rng.standard_normal(shape)
    b = rng.standard_normal((shape[0], 3))
    sol = linalg.solve_least_squares(a, b, backend=backend)
    ref = np.linalg.lstsq(a, b, rcond=None)[0]
    np.testing.assert_allclose(sol.solution, ref, atol=1e-11)
    assert sol.effective_rank == min(shape)


def test_rank_deficient_wide_matches_pinv(backend, rng):
    a = rng.standard_normal((6, 3)) @ rng.standard_normal((3, 9))
    b = rng.standard_normal((6, 2))
    sol = linalg.solve_least_squares(a, b, backend=backend)
    assert sol.effective_rank == 3
    np.testing.assert_allclose(sol.solution, np.linalg.pinv(a) @ b, atol=1e-9)


def test_full_row_rank_residual_bound(backend, rng):
    a = rng.standard_normal((20, 30))
    b = rng.standard_normal((20, 4))
    tol = linalg.default_rank_tol(a.shape)
    sol = linalg.solve_least_squares(a, b, backend=backend)
    assert sol.residual_norm <= tol * np.linalg.norm(b)


def test_residual_minimal_against_perturbations(backend, rng):
    a = rng.standard_normal((15, 6))
    b = rng.standard_normal((15, 2))
    sol = linalg.solve_least_squares(a, b, backend=backend)
    base = np.linalg.norm(a @ sol.solution - b)
    for _ in range(100):
        delta = 1e-3 * rng.standard_normal(sol.solution.shape)
        assert base <= np.linalg.norm(a @ (sol.solution + delta) - b)


def test_ls_errors():
    with pytest.raises(ContractViolation):
        linalg.solve_least_squares(np.eye(3), np.ones((2, 1)))
    with pytest.raises(ValidationError):
        linalg.solve_least_squares(np.array([[np.nan]]), np.ones((1, 1)))
    with pytest.raises(ValidationError):
        linalg.solve_least_squares(np.eye(2), np.ones((2, 1)), rank_tol=0.0)


def test_rank_examples(backend):
    assert linalg.numerical_rank(np.eye(4), 1e-10, backend=backend) == 4
    assert linalg.numerical_rank(np.zeros((3, 3)), backend=backend) == 0
    assert linalg.numerical_rank(np.array([[1.0, 2.0], [2.0, 4.0]]), backend=backend) == 1
    with pytest.raises(ValidationError):
        linalg.numerical_rank(np.zeros((0, 3)))


def test_rank_row_permutation_invariant(backend, rng):
    for r in range(1, 6):
        a = rng.standard_normal((7, r)) @ rng.standard_normal((r, 6))
        p = rng.permutation(7)
        assert linalg.numerical_rank(a, backend=backend) == r
        assert linalg.numerical_rank(a[p], backend=backend) == r


def test_det_examples(backend, rng):
    assert linalg.determinant(np.eye(2), backend=backend) == 1.0
    assert linalg.determinant(np.diag([2.0, 3.0]), backend=backend) == pytest.approx(6.0, rel=1e-15)
    assert linalg.determinant(np.zeros((0, 0)), backend=backend) == 1.0
    for _ in range(20):
        a = rng.uniform(-1, 1, (4, 4))
        ref = leibniz_det(a)
        assert linalg.determinant(a, backend=backend) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_det_singular(backend):
    assert linalg.determinant(np.array([[1.0, 2.0], [2.0, 4.0]]), backend=backend) == 0.0


def test_det_multiplicative(backend, rng):
    for _ in range(20):
        a, b = rng.standard_normal((2, 5, 5))
        lhs = linalg.determinant(a @ b, backend=backend)
        rhs = linalg.determinant(a, backend=backend) * linalg.determinant(b, backend=backend)
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_det_guards():
    with pytest.raises(ContractViolation):
        linalg.determinant(np.ones((2, 3)))
    with pytest.raises(UnsupportedSizeError):
        linalg.determinant(np.eye(65))
    with pytest.raises(ContractViolation):
        linalg.determinant(np.ones(3))


def test_backends_agree(rng):
    from novalley import _backend

    if "cython" not in _backend.available():
        pytest.skip("compiled kernels not built")
    a = rng.standard_normal((30, 20))
    b = rng.standard_normal((30, 5))
    s1 = linalg.solve_least_squares(a, b, backend="python")
    s2 = linalg.solve_least_squares(a, b, backend="cython")
    np.testing.assert_allclose(s1.solution, s2.solution, rtol=1e-12, atol=1e-13)
    assert linalg.determinant(a[:20], backend="python") == pytest.approx(
        linalg.determinant(a[:20], backend="cython"), rel=1e-12)


def test_symmetry_check():
    assert linalg.is_symmetric(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not linalg.is_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-10, 10, allow_nan=False, width=64)))
def test_rank_bounds_and_solution_consistency(a):
    r = linalg.numerical_rank(a)
    assert 0 <= r <= min(a.shape)
    b = a @ np.ones((a.shape[1], 1))
    sol = linalg.solve_least_squares(a, b)
    assert sol.effective_rank <= min(a.shape)
    # b lies in the range of a, so the residual is at roundoff level
    assert sol.residual_norm <= 1e-8 * max(1.0, np.linalg.norm(b)) * max(1.0, np.abs(a).max())
