"""Pure numpy versions of the dense kernels in ``_kernels.pyx``.

Both modules expose the same functions with the same conventions:

* Householder reflectors are stored LAPACK style: ``v[0] = 1`` is implicit,
  ``v[1:]`` sits below the diagonal of the packed factor, ``H = I - tau v v^T``.
* All inputs are copied; nothing is modified in place.
"""
import math

import numpy as np

NAME = "python"


def householder_qr(a, pivot=True):
    """Factor ``A P = Q R``. Returns ``(packed, tau, perm)``."""
    a = np.array(a, dtype=np.float64, copy=True)
    n, m = a.shape
    k = min(n, m)
    tau = np.zeros(k)
    perm = np.arange(m)
    for j in range(k):
        if pivot:
            # Exact recomputation instead of norm downdating: same cost as the update.
            norms = np.einsum("ij,ij->j", a[j:, j:], a[j:, j:])
            p = j + int(np.argmax(norms))
            if p != j:
                a[:, [j, p]] = a[:, [p, j]]
                perm[[j, p]] = perm[[p, j]]
        x0 = a[j, j]
        tail = a[j + 1:, j]
        sigma = float(tail @ tail)
        if sigma == 0.0:
            continue
        alpha = math.sqrt(x0 * x0 + sigma)
        beta = -math.copysign(alpha, x0)
        tau[j] = (beta - x0) / beta
        tail /= x0 - beta
        a[j, j] = beta
        if j + 1 < m:
            v = np.concatenate(([1.0], tail))
            block = a[j:, j + 1:]
            w = v @ block
            block -= tau[j] * np.outer(v, w)
    return a, tau, perm


def _reflector(packed, j):
    return np.concatenate(([1.0], packed[j + 1:, j]))


def apply_qt(packed, tau, b, k=None):
    """Return ``Q^T B`` using the first ``k`` reflectors."""
    b = np.array(b, dtype=np.float64, copy=True)
    k = len(tau) if k is None else k
    for j in range(k):
        if tau[j] == 0.0:
            continue
        v = _reflector(packed, j)
        w = v @ b[j:]
        b[j:] -= tau[j] * np.outer(v, w)
    return b


def apply_q(packed, tau, b, k=None):
    """Return ``Q B`` using the first ``k`` reflectors."""
    b = np.array(b, dtype=np.float64, copy=True)
    k = len(tau) if k is None else k
    for j in reversed(range(k)):
        if tau[j] == 0.0:
            continue
        v = _reflector(packed, j)
        w = v @ b[j:]
        b[j:] -= tau[j] * np.outer(v, w)
    return b


def solve_upper(r, b):
    """Solve ``R X = B`` for upper-triangular square ``R``."""
    b = np.array(b, dtype=np.float64, copy=True)
    n = r.shape[0]
    for i in reversed(range(n)):
        if i + 1 < n:
            b[i] -= r[i, i + 1:n] @ b[i + 1:]
        b[i] /= r[i, i]
    return b


def solve_upper_transposed(r, b):
    """Solve ``R^T X = B`` for upper-triangular square ``R``."""
    b = np.array(b, dtype=np.float64, copy=True)
    n = r.shape[0]
    for i in range(n):
        if i:
            b[i] -= r[:i, i] @ b[:i]
        b[i] /= r[i, i]
    return b


def lu_det(a):
    """Determinant by LU with partial pivoting."""
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    det = 1.0
    for j in range(n):
        p = j + int(np.argmax(np.abs(a[j:, j])))
        if a[p, j] == 0.0:
            return 0.0
        if p != j:
            a[[j, p]] = a[[p, j]]
            det = -det
        det *= a[j, j]
        if j + 1 < n:
            factors = a[j + 1:, j] / a[j, j]
            a[j + 1:, j + 1:] -= np.outer(factors, a[j, j + 1:])
    return float(det)
