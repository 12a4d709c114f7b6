"""Fitting procedures: random features + least squares, SGD with Nesterov
momentum, and the straight escape segment in output-weight space."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import engine, losses
from .engine import layout
from .errors import ContractViolation, DivergenceError, RankDeficientError, ValidationError
from .linalg import default_rank_tol, numerical_rank, solve_least_squares

log = logging.getLogger(__name__)

TRUNC_SIGMAS = 2.0


class RankDeficiencyWarning(UserWarning):
    pass


# ---------------------------------------------------------------- init

def truncated_normal(rng, std, size):
    """N(0, std^2) restricted to [-2 std, 2 std] by rejection."""
    out = rng.standard_normal(size)
    bad = np.abs(out) > TRUNC_SIGMAS
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > TRUNC_SIGMAS
    return out * std


def init_truncated_gaussian(spec, seed=None):
    """Hidden weights ~ N(0, 2/fan_in) truncated at 2 sigma; biases and V zero."""
    rng = np.random.default_rng(seed)
    lay = layout(spec)
    params = lay.zeros()
    for key, (_, fan) in lay.slots.items():
        params.weights[key] = truncated_normal(rng, np.sqrt(2.0 / fan), fan)
    return params


# ---------------------------------------------------------------- rand fit

@dataclass
class RandFit:
    params: engine.ParamState
    report: losses.ErrorReport
    residual_norm: float
    effective_rank: int
    rank_deficient: bool

    def to_json(self):
        return {
            "report": self.report.to_json(),
            "residual_norm": self.residual_norm,
            "effective_rank": self.effective_rank,
            "rank_deficient": self.rank_deficient,
        }


def random_feature_fit(spec, dataset, seed=None, rank_tol=None, loss_kind="cross_entropy",
                       params=None, targets=None):
    """Keep random hidden weights fixed and solve ``Psi V = Y`` for ``V``.

    ``targets`` defaults to the one-hot matrix.  When ``Psi`` has rank below
    N a RankDeficiencyWarning is issued and the minimum-norm least-squares
    ``V`` is kept; the report then shows what that achieves.
    """
    if spec.m != dataset.m:
        raise ContractViolation(f"network has {spec.m} outputs, dataset {dataset.m} classes")
    params = init_truncated_gaussian(spec, seed) if params is None else params.copy()
    P = engine.psi(spec, params, dataset).values
    Y = dataset.Y if targets is None else np.asarray(targets, dtype=np.float64)
    sol = solve_least_squares(P, Y, rank_tol=rank_tol)
    params.V = sol.solution
    deficient = sol.effective_rank < dataset.N
    if deficient:
        msg = (f"Psi has rank {sol.effective_rank} < N = {dataset.N}; residual {sol.residual_norm:.3e}. "
               "This is a measure-zero event for generic data: jitter the inputs or reseed.")
        warnings.warn(msg, RankDeficiencyWarning, stacklevel=2)
        log.warning(msg)
    G = P @ params.V
    report = losses.error_report(G, dataset.y, loss_kind, dataset.Y if loss_kind == "square" else None)
    return RandFit(params, report, sol.residual_norm, sol.effective_rank, deficient)


# ---------------------------------------------------------------- SGD

@dataclass
class SgdConfig:
    epochs: int = 300
    batch_size: int = 64
    lr0: float = 0.01
    momentum: float = 0.9
    milestones: tuple = (0.5, 0.75)
    seed: Optional[int] = None
    freeze_hidden: bool = False
    stop_at_zero_error: bool = False
    workers: int = 1

    def __post_init__(self):
        self.milestones = tuple(float(f) for f in self.milestones)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr0 >= 0:
            raise ValidationError("lr0 must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")
        ms = self.milestones
        if any(not 0.0 < f < 1.0 for f in ms) or any(a >= b for a, b in zip(ms, ms[1:])):
            raise ValidationError(f"milestones must be strictly increasing in (0, 1), got {ms}")

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: v for k, v in (obj or {}).items() if k in cls.__dataclass_fields__})

    def lr_at(self, epoch):
        drops = sum(epoch >= int(round(f * self.epochs)) for f in self.milestones)
        return self.lr0 / 10.0 ** drops


def _evaluate(spec, theta, dataset, loss_kind):
    # overflow shows up as a non-finite loss, which the caller reports
    with np.errstate(over="ignore", invalid="ignore"):
        G = engine.predict(spec, theta, dataset.X)
        value = losses.loss(loss_kind, G, dataset.y, dataset.Y if loss_kind == "square" else None)
    return value, losses.misclassified(G, dataset.y)


def sgd_train(spec, dataset, params0=None, config=None, loss_kind="cross_entropy"):
    """Minibatch SGD with Nesterov momentum; returns ``(params, history)``.

    Update per batch: ``v <- mu v - lr grad(theta + mu v)``, ``theta <- theta + v``.
    ``history`` has one entry per epoch with the full-data loss and training
    error measured after the epoch (entry 0 is the starting point).
    """
    config = config or SgdConfig()
    if params0 is None:
        params0 = init_truncated_gaussian(spec, config.seed)
    lay = layout(spec)
    theta = lay.pack(params0).copy()
    vel = np.zeros_like(theta)
    mask = None
    if config.freeze_hidden:
        mask = np.zeros_like(theta)
        mask[lay.v_offset:] = 1.0
    rng = np.random.default_rng(config.seed)
    N = dataset.N
    Y = dataset.Y if loss_kind == "square" else None
    mu = config.momentum

    loss0, err0 = _evaluate(spec, theta, dataset, loss_kind)
    history = [{"epoch": 0, "lr": config.lr_at(0), "loss": loss0, "train_error": err0 / N,
                "misclassified": err0}]
    if not np.isfinite(loss0):
        raise DivergenceError("initial loss is not finite", history)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(N)
        for s in range(0, N, config.batch_size):
            idx = order[s:s + config.batch_size]
            _, g = engine.loss_and_grad(spec, theta + mu * vel, dataset.X[idx], dataset.y[idx],
                                        loss_kind, None if Y is None else Y[idx],
                                        workers=config.workers)
            if mask is not None:
                g *= mask
            vel = mu * vel - lr * g
            theta = theta + vel
        value, err = _evaluate(spec, theta, dataset, loss_kind)
        history.append({"epoch": epoch + 1, "lr": lr, "loss": value, "train_error": err / N,
                        "misclassified": err})
        if not np.isfinite(value) or not np.all(np.isfinite(theta)):
            raise DivergenceError(f"loss diverged at epoch {epoch + 1}", history)
        if config.stop_at_zero_error and err == 0:
            break
    return lay.unpack(theta), history


# ---------------------------------------------------------------- escape path

@dataclass
class PathReport:
    lambdas: list
    losses: list
    epsilon: float
    t_star: float
    start_loss: float
    end_loss: float
    bound_ok: list
    residual_norm: float = 0.0
    V_star: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def all_ok(self):
        return all(self.bound_ok)

    def to_json(self):
        return {
            "lambdas": list(self.lambdas),
            "losses": list(self.losses),
            "epsilon": self.epsilon,
            "t_star": self.t_star,
            "start_loss": self.start_loss,
            "end_loss": self.end_loss,
            "bound_ok": list(self.bound_ok),
            "residual_norm": self.residual_norm,
        }


def t_star(epsilon, m):
    """Logit scale at which one-hot targets give mean cross-entropy ``epsilon / 2``."""
    return float(np.log((m - 1) / np.expm1(epsilon / 2.0)))


def escape_path(spec, params, dataset, epsilon, n_samples=100, rank_tol=None):
    """Cross-entropy along ``V(lam) = lam V + (1 - lam) V*`` with hidden weights frozen.

    ``V*`` solves ``Psi V* = Y t*``, so ``Phi(V*) = epsilon / 2``; convexity in
    ``V`` bounds every point by the chord.
    """
    m = dataset.m
    if m < 2:
        raise ValidationError("need m >= 2 classes")
    if not epsilon > 0 or not np.isfinite(epsilon):
        raise ValidationError("epsilon must be a positive real")
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    P = engine.psi(spec, params, dataset).values
    tol = default_rank_tol(P.shape) if rank_tol is None else rank_tol
    rank = numerical_rank(P, tol)
    if rank < dataset.N:
        raise RankDeficientError(
            f"Psi has rank {rank} < N = {dataset.N} at these hidden weights; this is a "
            "measure-zero configuration, jitter the inputs or draw new weights")
    ts = t_star(epsilon, m)
    target = dataset.Y * ts
    sol = solve_least_squares(P, target, rank_tol=tol)
    V_star = sol.solution
    V = params.V
    lambdas = np.linspace(0.0, 1.0, n_samples + 1)
    values = [losses.cross_entropy(P @ (lam * V + (1.0 - lam) * V_star), dataset.y) for lam in lambdas]
    start = losses.cross_entropy(P @ V, dataset.y)
    half = epsilon / 2.0
    ok = [bool(v <= lam * start + (1.0 - lam) * half + 1e-9) for lam, v in zip(lambdas, values)]
    return PathReport(lambdas.tolist(), values, float(epsilon), ts, start, values[0], ok,
                      sol.residual_norm, V_star)
