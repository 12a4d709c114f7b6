"""Explicit parameters that make the leading N x N block of Psi non-singular.

The construction:

1. first-layer weights are random, resampled until every first-layer unit
   takes pairwise distinct pre-activations on the N samples;
2. every higher unit gets a unit weight vector selecting one input ``c(j)``
   (identical selection within a sharing group);
3. samples are ordered greedily so that, for the j-th leading skip unit,
   ``f_c(x_i) < f_c(x_j)`` whenever ``i > j``;
4. each weight vector is scaled by a positive factor and the biases of the
   leading skip units are set to ``beta - alpha * f_c(x_j)``, which puts
   ``sigma(beta)`` on the diagonal and pushes the lower triangle to 0.

Two activation regimes are supported: sigmoid skip units (one scale per
layer, closed form) and softplus skip units reached through a path free of
other skip units (one common scale, doubled until the determinant is close
to its limit).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import engine
from .engine import activation, activation_inverse, layout, weight_key
from .errors import AssumptionError, DegenerateDataError
from .linalg import determinant, numerical_rank
from .netgraph import check_assumptions

MAX_DET_N = 12
LEIBNIZ_EPS_MAX_N = 8


@dataclass
class CertificateConfig:
    beta: float = 0.0
    epsilon_override: Optional[float] = None
    alpha_cap: float = 1e300
    max_alpha_doublings: int = 60
    max_resample: int = 100
    alpha_scope: str = "layer"     # "layer": one scale per layer; "group": per weight slot

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: v for k, v in (obj or {}).items() if k in cls.__dataclass_fields__})


@dataclass
class CertificateReport:
    det_value: Optional[float]
    bound: float
    alphas: dict
    permutation: list
    passed: bool
    branch: Optional[str] = None
    epsilon: Optional[float] = None
    lower_max: Optional[float] = None
    lower_ok: Optional[bool] = None
    diag_max_dev: Optional[float] = None
    rank: Optional[int] = None
    n: int = 0
    doublings: Optional[int] = None
    message: str = ""

    def to_json(self):
        out = dict(self.__dict__)
        out["alphas"] = {str(k): v for k, v in self.alphas.items()}
        return out


@dataclass
class Construction:
    """Scaffold produced before the scales are fixed."""

    branch: str
    n: int
    lead: tuple                    # p_1..p_N, ordered by (layer, id)
    columns: tuple                 # their column indices in Psi
    directions: dict               # slot key -> unscaled weight vector
    selector: dict                 # higher-layer unit id -> selected input id c(j)
    paths: dict = field(default_factory=dict)
    forced: frozenset = frozenset()  # slots whose selection is fixed by a backward path


@dataclass
class AlphaAssignment:
    alphas: dict                   # hidden unit id -> scale
    params: object
    epsilon: float
    permutation: list
    doublings: Optional[int] = None


def _branch(spec, dataset, n):
    rep = check_assumptions(spec, dataset.X[:n], n_samples=n)
    if not rep.analytic_increasing_ok:
        raise AssumptionError("hidden activations must be real analytic and strictly increasing")
    if not rep.distinct_patches_ok:
        raise DegenerateDataError(f"input patches collide, e.g. {rep.violating_pairs[0]}")
    if not rep.skip_activation_ok:
        if rep.skip_branch == "softplus":
            missing = [p for p, path in rep.backward_paths.items() if path is None]
            raise AssumptionError(f"no qualifying backward path for skip units {missing}")
        raise AssumptionError("leading skip units must all be sigmoid, or all softplus")
    return rep.skip_branch, rep.backward_paths


def epsilon_for(spec, lead, config, n=None):
    """Off-diagonal target: the Leibniz-bound value, or a fixed fraction past N = 8."""
    if config.epsilon_override is not None:
        return float(config.epsilon_override)
    n = len(lead) if n is None else n
    prod = abs(float(np.prod([activation(spec.neuron(p).activation, config.beta) for p in lead])))
    if n <= LEIBNIZ_EPS_MAX_N:
        c_bound = 1.0  # sigmoid range
        return prod / (2.0 * math.factorial(n) * c_bound ** (n - 1))
    return 1e-6 * prod


def _unit_vector(fan, pos):
    vec = np.zeros(fan)
    vec[pos] = 1.0
    return vec


def build_certificate_params(spec, dataset, config=None, seed=None, n=None):
    """Random first layer with distinct pre-activations plus unit-vector selections above.

    Returns the unscaled ParamState (all scales 1, biases 0, V = 0) and the
    Construction scaffold.  Selections not pinned by a backward path are
    provisional: they prefer inputs on layers without leading skip units and
    may be revised by ``assign_alphas`` once lower layers are final.
    """
    config = config or CertificateConfig()
    if config.alpha_scope not in ("layer", "group"):
        raise AssumptionError(f"alpha_scope must be 'layer' or 'group', got {config.alpha_scope!r}")
    if not np.isfinite(config.beta):
        raise AssumptionError("beta must be finite")
    n = dataset.N if n is None else n
    if not 1 <= n <= dataset.N:
        raise AssumptionError(f"n = {n} must lie in [1, {dataset.N}]")
    branch, paths = _branch(spec, dataset, n)
    lead = tuple(sorted(spec.skip_set[:n], key=lambda p: (spec.neuron(p).layer, p)))
    columns = tuple(spec.skip_set.index(p) for p in lead)
    X = dataset.X[:n]
    rng = np.random.default_rng(seed)
    lay = layout(spec)

    first_slots = {}
    for j in spec.first_layer:
        first_slots.setdefault(weight_key(spec.by_id[j]), []).append(j)
    for _ in range(config.max_resample):
        directions = {k: rng.standard_normal(lay.slots[k][1]) for k in first_slots}
        if all(len(np.unique(X[:, np.asarray(spec.by_id[j].inputs) - 1] @ directions[key])) == n
               for key, units in first_slots.items() for j in units):
            break
    else:
        raise DegenerateDataError(
            f"first-layer pre-activations still collide after {config.max_resample} draws")

    required = {}
    if branch == "softplus":
        for p, path in paths.items():
            for a, b in zip(path, path[1:]):
                required[a] = b
    hot_layers = {spec.neuron(p).layer for p in lead}
    slot_members = {}
    for nrn in spec.hidden:
        if nrn.layer > 1:
            slot_members.setdefault(weight_key(nrn), []).append(nrn)

    selector = {}
    forced = set()
    for key, members in slot_members.items():
        fan = len(members[0].inputs)
        want = {m.inputs.index(required[m.id]) for m in members if m.id in required}
        if len(want) > 1:
            raise AssumptionError(f"backward paths need different selections inside group {key}")
        if want:
            pos = want.pop()
            forced.add(key)
        else:
            def score(q):
                layers = [spec.layer_of(m.inputs[q]) for m in members]
                return (sum(l in hot_layers for l in layers), -max(layers), q)
            pos = min(range(fan), key=score)
        directions[key] = _unit_vector(fan, pos)
        for m in members:
            selector[m.id] = m.inputs[pos]

    params = lay.zeros()
    for key, vec in directions.items():
        params.weights[key] = vec.copy()
    return params, Construction(branch, n, lead, columns, directions, selector, paths, frozenset(forced))


def _selected_row(spec, construction, F, X, p):
    nrn = spec.neuron(p)
    if nrn.layer == 1:
        return X[:, np.asarray(nrn.inputs) - 1] @ construction.directions[weight_key(nrn)]
    return F[:, construction.selector[p] - 1]


def _selected_values(spec, construction, theta, X):
    """``values[j, i] = f_{c(p_j)}(x_i)`` (pre-activation g for first-layer units)."""
    F = engine.hidden_values(spec, theta, X)
    return np.array([_selected_row(spec, construction, F, X, p) for p in construction.lead])


def _strict_argmax(row, used):
    """Index of the strict maximum over unused samples, or None on a tie."""
    free = np.flatnonzero(~used)
    vals = row[free]
    best = int(np.argmax(vals))
    if np.count_nonzero(vals == vals[best]) > 1:
        return None
    return int(free[best])


def ordering_permutation(values):
    """Greedy order: ``perm[j]`` is the unused sample with the largest ``values[j]``.

    ``values`` is N x N with ``values[j, i] = f_{c(p_j)}(x_i)``.  Only ties
    that leave the maximum ambiguous matter; they raise DegenerateDataError.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    used = np.zeros(values.shape[1], dtype=bool)
    perm = []
    for j in range(n):
        i = _strict_argmax(values[j], used)
        if i is None:
            raise DegenerateDataError(f"tied values for skip unit {j}; ordering is undefined")
        perm.append(i)
        used[i] = True
    return perm


def _scaled_theta(lay, construction, alphas_by_slot, biases):
    theta = np.zeros(lay.size)
    for key, vec in construction.directions.items():
        off, n = lay.slots[key]
        theta[off:off + n] = alphas_by_slot.get(key, 1.0) * vec
    theta[lay.bias_offset:lay.v_offset] = biases
    return theta


def _spread_score(col, used, lead, calm):
    """Rank a candidate input by its values on the still-unordered samples.

    A leading skip unit needs a strict maximum; every unit wants many distinct
    values (saturated inputs collapse to ties).  Unscaled inputs are preferred
    next: scaled ones spread their values exponentially, which downstream
    needs ever larger scales.  Last comes the relative size of the smallest
    gap that matters.
    """
    vals = np.sort(col[~used])[::-1]
    distinct = len(np.unique(vals))
    if len(vals) < 2:
        return (1, distinct, int(calm), 1.0)
    span = vals[0] - vals[-1]
    gap = vals[0] - vals[1] if lead else float(np.min(-np.diff(vals)))
    return (int(gap > 0) if lead else 1, distinct, int(calm), float(gap / span) if span > 0 else 0.0)


def _select(spec, construction, key, F, used, lead_ids, slot_alpha):
    members = [m for m in spec.hidden if weight_key(m) == key]
    fan = len(members[0].inputs)

    def calm(c):
        return c not in lead_ids and slot_alpha.get(weight_key(spec.by_id[c]), 1.0) == 1.0

    def score(q):
        parts = [_spread_score(F[:, m.inputs[q] - 1], used, m.id in lead_ids, calm(m.inputs[q]))
                 for m in members]
        return tuple(min(s[i] for s in parts) for i in range(4)) + (-q,)
    pos = max(range(fan), key=score)
    construction.directions[key] = _unit_vector(fan, pos)
    for m in members:
        construction.selector[m.id] = m.inputs[pos]


def assign_alphas(spec, dataset, construction, perm=None, config=None):
    """Scale factors, biases and the sample order.

    Sigmoid regime: one scale per layer, fixed bottom-up; the order is grown
    with it (only the strict maximum among unordered samples matters, so
    saturated values on already-ordered samples are harmless).  ``perm`` is
    ignored there.  Softplus regime: ``perm`` (computed if None) and one
    common scale for the leading skip units, doubled until the determinant is
    within half of its limit.  ``doublings`` is -1 if the cap was hit.
    """
    config = config or CertificateConfig()
    lay = layout(spec)
    X = dataset.X[:construction.n]
    lead = construction.lead
    n = construction.n
    beta = config.beta
    d = spec.d
    slot_alpha = {}
    biases = np.zeros(spec.H)
    eps = epsilon_for(spec, lead, config)

    if construction.branch == "bounded":
        used = np.zeros(n, dtype=bool)
        perm = []
        for layer in range(1, spec.depth + 1):
            theta = _scaled_theta(lay, construction, slot_alpha, biases)
            F = engine.hidden_values(spec, theta, X)
            here = [k for k, p in enumerate(lead) if spec.neuron(p).layer == layer]
            lead_ids = set(lead)
            done = set(construction.forced)
            rows = {}
            for k in here:
                key = weight_key(spec.neuron(lead[k]))
                if layer > 1 and key not in done:
                    _select(spec, construction, key, F, used, lead_ids, slot_alpha)
                    done.add(key)
                rows[k] = _selected_row(spec, construction, F, X, lead[k])
                i = _strict_argmax(rows[k], used)
                if i is None:
                    raise DegenerateDataError(
                        f"tied values for skip unit {lead[k]} (saturated activations)")
                perm.append(i)
                used[i] = True
            if layer > 1:
                for nrn in spec.hidden:
                    key = weight_key(nrn)
                    if nrn.layer == layer and key not in done:
                        _select(spec, construction, key, F, used, lead_ids, slot_alpha)
                        done.add(key)
            need = {}
            for k in here:
                top = rows[k][perm[k]]
                rest = rows[k][~np.isin(np.arange(n), perm[:k + 1])]
                key = weight_key(spec.neuron(lead[k]))
                need.setdefault(key, 1.0)
                if rest.size:
                    target = activation_inverse(spec.neuron(lead[k]).activation, eps) - beta
                    need[key] = max(need[key], target / float((rest - top).max()))
            layer_alpha = max(need.values(), default=1.0)
            for a in need.values():
                if not np.isfinite(a) or a > config.alpha_cap:
                    raise DegenerateDataError(f"layer {layer} needs scale {a:.3g} beyond alpha_cap")
            layer_keys = {weight_key(nrn) for nrn in spec.hidden if nrn.layer == layer}
            for key in layer_keys:
                slot_alpha[key] = layer_alpha if config.alpha_scope == "layer" else need.get(key, 1.0)
            # the closest sample sits exactly on eps; rounding in alpha * f + b can
            # push it over, so grow the scales slightly until the entries comply
            for attempt in range(60):
                for k in here:
                    biases[lead[k] - d - 1] = beta - slot_alpha[weight_key(spec.neuron(lead[k]))] * rows[k][perm[k]]
                if not here:
                    break
                F = engine.hidden_values(spec, _scaled_theta(lay, construction, slot_alpha, biases), X)
                over = set()
                for k in here:
                    below = np.setdiff1d(np.arange(n), perm[:k + 1])
                    if below.size and F[below, lead[k] - 1].max() > eps:
                        over.add(weight_key(spec.neuron(lead[k])))
                if not over:
                    break
                bump = 1.0 + 1e-9 * 4.0 ** attempt
                for key in (layer_keys if config.alpha_scope == "layer" else over):
                    slot_alpha[key] *= bump
            else:
                raise DegenerateDataError(f"layer {layer}: entries below the diagonal stay above eps")
        theta = _scaled_theta(lay, construction, slot_alpha, biases)
        doublings = None
    else:
        theta0 = _scaled_theta(lay, construction, {}, biases)
        values = _selected_values(spec, construction, theta0, X)
        if perm is None:
            perm = ordering_permutation(values)
        target = float(np.prod([activation(spec.neuron(p).activation, beta) for p in lead]))
        lead_slots = {weight_key(spec.neuron(p)) for p in lead}
        cols = np.asarray(construction.columns)
        alpha = 1.0
        doublings = -1
        for step in range(config.max_alpha_doublings + 1):
            slot_alpha = {k: alpha for k in lead_slots}
            for k, p in enumerate(lead):
                biases[p - d - 1] = beta - alpha * values[k, perm[k]]
            theta = _scaled_theta(lay, construction, slot_alpha, biases)
            block = engine.psi(spec, theta, X).values[np.asarray(perm)][:, cols]
            if abs(determinant(block) - target) <= 0.5 * abs(target):
                doublings = step
                break
            if alpha * 2.0 > config.alpha_cap:
                break
            alpha *= 2.0

    alphas = {nrn.id: slot_alpha.get(weight_key(nrn), 1.0) for nrn in spec.hidden}
    return AlphaAssignment(alphas, lay.unpack(theta), eps, list(perm), doublings)


def verify_full_rank(spec, dataset, params, config=None, perm=None, epsilon=None, branch=None,
                     n=None, columns=None):
    """Determinant (N <= 12) or numerical rank of the leading block of Psi.

    The block is ``Psi[perm][:, columns]``; both default to the identity, and
    reordering rows or columns only flips the sign of the determinant.
    """
    config = config or CertificateConfig()
    n = dataset.N if n is None else n
    X = dataset.X[:n]
    perm = list(range(n)) if perm is None else list(perm)
    columns = list(range(n)) if columns is None else list(columns)
    lead = [spec.skip_set[c] for c in columns]
    P = engine.psi(spec, params, X).values
    block = P[np.asarray(perm)][:, np.asarray(columns)]
    sig_beta = np.array([activation(spec.neuron(p).activation, config.beta) for p in lead])
    bound = 0.5 * abs(float(np.prod(sig_beta)))
    rank = numerical_rank(block)
    lower = block[np.tril_indices(n, -1)]
    lower_max = float(lower.max()) if lower.size else 0.0
    if n <= MAX_DET_N:
        det = determinant(block)
        passed = abs(det) >= bound * (1.0 - 1e-6)
    else:
        det = None
        passed = rank == n
    lower_ok = None
    if branch == "bounded" and epsilon is not None:
        lower_ok = lower_max <= epsilon + 1e-12
        passed = passed and lower_ok
    return CertificateReport(
        det_value=det,
        bound=bound,
        alphas={},
        permutation=perm,
        passed=bool(passed),
        branch=branch,
        epsilon=epsilon,
        lower_max=lower_max,
        lower_ok=lower_ok,
        diag_max_dev=float(np.max(np.abs(np.diag(block) - sig_beta))),
        rank=rank,
        n=n,
    )


def certify(spec, dataset, config=None, seed=None, n=None):
    """Full pipeline: build, order, scale, verify.  Returns the report and parameters."""
    config = config or CertificateConfig()
    _, construction = build_certificate_params(spec, dataset, config, seed, n)
    fit = assign_alphas(spec, dataset, construction, config=config)
    report = verify_full_rank(spec, dataset, fit.params, config, fit.permutation, fit.epsilon,
                              construction.branch, construction.n, construction.columns)
    report.alphas = fit.alphas
    report.doublings = fit.doublings
    if construction.branch == "softplus" and fit.doublings == -1:
        report.passed = False
        report.message = "doubling cap reached before the determinant settled"
    return report, fit.params
