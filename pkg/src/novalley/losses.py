"""Losses on the network output ``G`` (N x m) and related checks.

Labels are 0-based class indices.  Cross-entropy and hinge average over
samples; the square loss is ``0.5 * ||G - Y||_F^2`` without averaging.
All three are convex in ``G`` with infimum 0.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ValidationError

KINDS = ("cross_entropy", "square", "hinge")
INFIMUM = {"cross_entropy": 0.0, "square": 0.0, "hinge": 0.0}


@dataclass(frozen=True)
class LossKind:
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown loss {self.kind!r}")

    @property
    def infimum(self):
        return INFIMUM[self.kind]


def one_hot(y, m):
    y = np.asarray(y, dtype=np.int64)
    Y = np.zeros((len(y), m))
    Y[np.arange(len(y)), y] = 1.0
    return Y


def _check(G, y):
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2:
        raise ContractViolation(f"G must be 2-D, got shape {G.shape}")
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) != G.shape[0]:
        raise ContractViolation(f"{len(y)} labels for {G.shape[0]} rows")
    if len(y) and (y.min() < 0 or y.max() >= G.shape[1]):
        raise ValidationError("label out of range")
    return G, y


def _log_softmax(G):
    shifted = G - G.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(G, y):
    G, y = _check(G, y)
    if G.shape[1] < 2:
        raise ValidationError("cross-entropy needs m >= 2")
    return float(-_log_softmax(G)[np.arange(len(y)), y].mean())


def square_loss(G, Y):
    G = np.asarray(G, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if G.shape != Y.shape:
        raise ContractViolation(f"shape mismatch {G.shape} vs {Y.shape}")
    return float(0.5 * np.sum((G - Y) ** 2))


def _hinge_terms(G, y):
    rows = np.arange(len(y))
    margins = 1.0 - (G[rows, y][:, None] - G)
    margins[rows, y] = -np.inf
    worst = margins.argmax(axis=1)
    return np.maximum(margins[rows, worst], 0.0), worst


def hinge_loss(G, y):
    G, y = _check(G, y)
    if G.shape[1] < 2:
        raise ValidationError("hinge loss needs m >= 2")
    terms, _ = _hinge_terms(G, y)
    return float(terms.mean())


def loss(kind, G, y, Y=None):
    if kind == "cross_entropy":
        return cross_entropy(G, y)
    if kind == "square":
        return square_loss(G, one_hot(y, np.shape(G)[1]) if Y is None else Y)
    if kind == "hinge":
        return hinge_loss(G, y)
    raise ValidationError(f"unknown loss {kind!r}")


def value_and_grad(kind, G, y, Y=None, n_total=None):
    """Loss contribution of these rows and its gradient w.r.t. ``G``.

    ``n_total`` is the averaging denominator for cross-entropy and hinge (so a
    partial batch can be summed into a full-data value).  The hinge gradient
    is the subgradient that is 0 at exact kinks.
    """
    G, y = _check(G, y)
    n = len(y) if n_total is None else n_total
    rows = np.arange(len(y))
    if kind == "cross_entropy":
        logp = _log_softmax(G)
        value = -logp[rows, y].sum() / n
        dG = np.exp(logp)
        dG[rows, y] -= 1.0
        return float(value), dG / n
    if kind == "square":
        R = G - (one_hot(y, G.shape[1]) if Y is None else Y)
        return float(0.5 * np.sum(R * R)), R
    if kind == "hinge":
        terms, worst = _hinge_terms(G, y)
        active = terms > 0.0
        dG = np.zeros_like(G)
        dG[rows[active], worst[active]] += 1.0 / n
        dG[rows[active], y[active]] -= 1.0 / n
        return float(terms.sum() / n), dG
    raise ValidationError(f"unknown loss {kind!r}")


@dataclass(frozen=True)
class ErrorReport:
    misclassified: int
    total: int
    loss: float
    below_zero_error_threshold: bool

    @property
    def error_rate(self):
        return self.misclassified / self.total if self.total else 0.0

    def to_json(self):
        return {
            "misclassified": self.misclassified,
            "total": self.total,
            "loss": self.loss,
            "below_zero_error_threshold": self.below_zero_error_threshold,
        }


def misclassified(G, y):
    """Samples whose true class is not the strict argmax (ties count as errors)."""
    G, y = _check(G, y)
    rows = np.arange(len(y))
    others = G.copy()
    others[rows, y] = -np.inf
    return int(np.count_nonzero(G[rows, y] <= others.max(axis=1)))


def zero_error_threshold(N):
    return np.log(2.0) / N


def error_report(G, y, loss_kind="cross_entropy", Y=None):
    G, y = _check(G, y)
    ce = cross_entropy(G, y)
    value = ce if loss_kind == "cross_entropy" else loss(loss_kind, G, y, Y)
    return ErrorReport(misclassified(G, y), len(y), value, bool(ce < zero_error_threshold(len(y))))


def softmax(G):
    return np.exp(_log_softmax(np.asarray(G, dtype=np.float64)))


def hessian_V_column(psi, G, j):
    """Hessian of the mean cross-entropy w.r.t. column ``j`` of ``V`` (M x M).

    ``(1/N) sum_i p_ij (1 - p_ij) Psi_i Psi_i^T`` with ``p`` the softmax of ``G``.
    """
    P = psi.values if hasattr(psi, "values") else np.asarray(psi, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if not 0 <= j < G.shape[1]:
        raise ValidationError(f"class index {j} out of range")
    if P.shape[0] != G.shape[0]:
        raise ContractViolation("Psi and G have different row counts")
    p = softmax(G)[:, j]
    w = p * (1.0 - p) / P.shape[0]
    H = (P * w[:, None]).T @ P
    return 0.5 * (H + H.T)
