"""Dense least squares, numerical rank and determinants.

Everything here goes through column-pivoted Householder QR or partially
pivoted LU from the kernel backend (compiled when available).
"""
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ContractViolation, UnsupportedSizeError, ValidationError

MAX_DET_SIZE = 64


def default_rank_tol(shape):
    return 1e-9 * max(shape)


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class LsSolution:
    solution: np.ndarray
    residual_norm: float
    effective_rank: int


def _pivot_rank(diag, tol):
    mags = np.abs(diag)
    top = mags.max(initial=0.0)
    if top == 0.0:
        return 0
    return int(np.count_nonzero(mags > tol * top))


def numerical_rank(a, tol=None, backend=None):
    """Number of pivots of the column-pivoted QR above ``tol`` times the largest."""
    a = as_matrix(a)
    if a.size == 0:
        raise ValidationError("numerical_rank of an empty matrix")
    tol = default_rank_tol(a.shape) if tol is None else tol
    if tol <= 0:
        raise ValidationError("tol must be positive")
    packed, _, _ = _backend.get(backend).householder_qr(a, True)
    return _pivot_rank(np.diag(packed), tol)


def solve_least_squares(a, b, rank_tol=None, backend=None):
    """Minimum-norm least-squares solution of ``A X = B``.

    Rank is decided from the pivoted QR diagonal; a rank-deficient system is
    handled with a complete orthogonal decomposition so the returned solution
    is the minimum-norm one for the truncated problem.
    """
    a = as_matrix(a, "A")
    b_in = np.asarray(b, dtype=np.float64)
    vector_rhs = b_in.ndim == 1
    b = as_matrix(b_in, "B")
    if a.shape[0] != b.shape[0]:
        raise ContractViolation(f"A has {a.shape[0]} rows but B has {b.shape[0]}")
    rank_tol = default_rank_tol(a.shape) if rank_tol is None else rank_tol
    if rank_tol <= 0:
        raise ValidationError("rank_tol must be positive")
    n, m = a.shape
    k = _backend.get(backend)
    if a.size == 0:
        x = np.zeros((m, b.shape[1]))
        return LsSolution(x[:, 0] if vector_rhs else x, float(np.linalg.norm(b)), 0)

    packed, tau, perm = k.householder_qr(a, True)
    r = _pivot_rank(np.diag(packed), rank_tol)
    xp = np.zeros((m, b.shape[1]))
    if r > 0:
        c = k.apply_qt(packed, tau, b)[:r]
        r1 = np.triu(packed[:r, :])
        if r == m:
            xp = k.solve_upper(r1[:, :r], c)
        else:
            # R1^T = Z [T; 0]  =>  min-norm x' = Z [T^-T c; 0]
            packed2, tau2, _ = k.householder_qr(r1.T, False)
            t = np.triu(packed2[:r, :r])
            xp[:r] = k.solve_upper_transposed(t, c)
            xp = k.apply_q(packed2, tau2, xp)
    x = np.empty_like(xp)
    x[perm] = xp
    residual = float(np.linalg.norm(a @ x - b))
    return LsSolution(x[:, 0] if vector_rhs else x, residual, r)


def determinant(a, backend=None):
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ContractViolation(f"determinant needs a square matrix, got {a.shape}")
    if n > MAX_DET_SIZE:
        raise UnsupportedSizeError(f"determinant limited to n <= {MAX_DET_SIZE}, got {n}")
    if n == 0:
        return 1.0
    return float(_backend.get(backend).lu_det(a))


def is_symmetric(a, rtol=1e-12):
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        return False
    scale = max(float(np.abs(a).max(initial=0.0)), 1.0)
    return bool(np.all(np.abs(a - a.T) <= rtol * scale))
