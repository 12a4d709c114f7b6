# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense kernels. Same contract as ``novalley._fallback``."""
import numpy as np

from libc.math cimport sqrt, copysign, fabs

NAME = "cython"


cdef void _reflect(double[:, ::1] a, Py_ssize_t j, double t, double[:, ::1] b,
                   Py_ssize_t c0, double[::1] w) nogil:
    # b[j:, c0:] -= t * v (v^T b[j:, c0:]),  v = [1, a[j+1:, j]]
    cdef Py_ssize_t n = b.shape[0], m = b.shape[1], i, c
    cdef double vi
    for c in range(c0, m):
        w[c] = b[j, c]
    for i in range(j + 1, n):
        vi = a[i, j]
        if vi != 0.0:
            for c in range(c0, m):
                w[c] += vi * b[i, c]
    for c in range(c0, m):
        w[c] *= t
        b[j, c] -= w[c]
    for i in range(j + 1, n):
        vi = a[i, j]
        if vi != 0.0:
            for c in range(c0, m):
                b[i, c] -= vi * w[c]


def householder_qr(a, bint pivot=True):
    cdef double[:, ::1] A = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = A.shape[0], m = A.shape[1]
    cdef Py_ssize_t k = min(n, m)
    tau_arr = np.zeros(k)
    perm_arr = np.arange(m, dtype=np.intp)
    cdef double[::1] tau = tau_arr
    cdef Py_ssize_t[::1] perm = perm_arr
    cdef double[::1] norms = np.zeros(m)
    cdef double[::1] w = np.zeros(m)
    cdef Py_ssize_t i, j, c, p
    cdef double best, x0, sigma, alpha, beta, scale, tmp
    with nogil:
        for j in range(k):
            if pivot:
                for c in range(j, m):
                    norms[c] = 0.0
                for i in range(j, n):
                    for c in range(j, m):
                        norms[c] += A[i, c] * A[i, c]
                p = j
                best = norms[j]
                for c in range(j + 1, m):
                    if norms[c] > best:
                        best = norms[c]
                        p = c
                if p != j:
                    for i in range(n):
                        tmp = A[i, j]
                        A[i, j] = A[i, p]
                        A[i, p] = tmp
                    c = perm[j]
                    perm[j] = perm[p]
                    perm[p] = c
            x0 = A[j, j]
            sigma = 0.0
            for i in range(j + 1, n):
                sigma += A[i, j] * A[i, j]
            if sigma == 0.0:
                continue
            alpha = sqrt(x0 * x0 + sigma)
            beta = -copysign(alpha, x0)
            tau[j] = (beta - x0) / beta
            scale = 1.0 / (x0 - beta)
            for i in range(j + 1, n):
                A[i, j] *= scale
            A[j, j] = beta
            if j + 1 < m:
                _reflect(A, j, tau[j], A, j + 1, w)
    return np.asarray(A), tau_arr, perm_arr


def apply_qt(packed, tau, b, k=None):
    cdef double[:, ::1] P = np.ascontiguousarray(packed, dtype=np.float64)
    cdef double[::1] T = np.ascontiguousarray(tau, dtype=np.float64)
    cdef double[:, ::1] B = np.array(b, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t kk = T.shape[0] if k is None else k
    cdef double[::1] w = np.zeros(B.shape[1])
    cdef Py_ssize_t j
    with nogil:
        for j in range(kk):
            if T[j] != 0.0:
                _reflect(P, j, T[j], B, 0, w)
    return np.asarray(B)


def apply_q(packed, tau, b, k=None):
    cdef double[:, ::1] P = np.ascontiguousarray(packed, dtype=np.float64)
    cdef double[::1] T = np.ascontiguousarray(tau, dtype=np.float64)
    cdef double[:, ::1] B = np.array(b, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t kk = T.shape[0] if k is None else k
    cdef double[::1] w = np.zeros(B.shape[1])
    cdef Py_ssize_t j
    with nogil:
        for j in range(kk - 1, -1, -1):
            if T[j] != 0.0:
                _reflect(P, j, T[j], B, 0, w)
    return np.asarray(B)


def solve_upper(r, b):
    cdef double[:, ::1] R = np.ascontiguousarray(r, dtype=np.float64)
    cdef double[:, ::1] B = np.array(b, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = R.shape[0], m = B.shape[1], i, k, c
    cdef double rik, d
    with nogil:
        for i in range(n - 1, -1, -1):
            for k in range(i + 1, n):
                rik = R[i, k]
                for c in range(m):
                    B[i, c] -= rik * B[k, c]
            d = R[i, i]
            for c in range(m):
                B[i, c] /= d
    return np.asarray(B)


def solve_upper_transposed(r, b):
    cdef double[:, ::1] R = np.ascontiguousarray(r, dtype=np.float64)
    cdef double[:, ::1] B = np.array(b, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = R.shape[0], m = B.shape[1], i, k, c
    cdef double rki, d
    with nogil:
        for i in range(n):
            for k in range(i):
                rki = R[k, i]
                for c in range(m):
                    B[i, c] -= rki * B[k, c]
            d = R[i, i]
            for c in range(m):
                B[i, c] /= d
    return np.asarray(B)


def lu_det(a):
    cdef double[:, ::1] A = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = A.shape[0], i, j, c, p
    cdef double det = 1.0, best, f, tmp
    with nogil:
        for j in range(n):
            p = j
            best = fabs(A[j, j])
            for i in range(j + 1, n):
                if fabs(A[i, j]) > best:
                    best = fabs(A[i, j])
                    p = i
            if A[p, j] == 0.0:
                det = 0.0
                break
            if p != j:
                for c in range(n):
                    tmp = A[j, c]
                    A[j, c] = A[p, c]
                    A[p, c] = tmp
                det = -det
            det *= A[j, j]
            for i in range(j + 1, n):
                f = A[i, j] / A[j, j]
                if f != 0.0:
                    for c in range(j + 1, n):
                        A[i, c] -= f * A[j, c]
    return det
