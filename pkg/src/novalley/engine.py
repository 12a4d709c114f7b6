"""Forward evaluation, feature matrix and reverse-mode gradients.

Parameters live in a flat vector ``theta`` laid out as
``[weight slots..., biases (H), V (M*m, row-major)]``; a weight slot is one
sharing group or one unshared hidden unit.  Hidden units on the same layer
with the same activation and fan-in are evaluated together as one block, so
a fully connected layer is a single matrix product over the whole batch.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .errors import ContractViolation, ValidationError
from .netgraph import NetworkSpec

BINARY_MAGIC = b"VLLY"
BINARY_VERSION = 1
PARAMS_FORMAT = 1


# ---------------------------------------------------------------- activations

def _logistic(t):
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activation(kind, t):
    """Activation value; ``kind`` is an ActivationKind."""
    t = np.asarray(t, dtype=np.float64)
    name = kind.kind
    if name == "sigmoid":
        out = _logistic(t)
    elif name == "tanh":
        out = np.tanh(t)
    elif name == "softplus":
        g = kind.gamma
        out = np.maximum(t, 0.0) + np.log1p(np.exp(-g * np.abs(t))) / g
    elif name == "relu":
        out = np.maximum(t, 0.0)
    else:
        raise ValidationError(f"unknown activation {name!r}")
    return float(out) if out.ndim == 0 else out


def activation_deriv(kind, t):
    t = np.asarray(t, dtype=np.float64)
    name = kind.kind
    if name == "sigmoid":
        s = _logistic(t)
        out = s * (1.0 - s)
    elif name == "tanh":
        out = 1.0 - np.tanh(t) ** 2
    elif name == "softplus":
        out = _logistic(kind.gamma * t)
    elif name == "relu":
        out = (t > 0).astype(np.float64)
    else:
        raise ValidationError(f"unknown activation {name!r}")
    return float(out) if out.ndim == 0 else out


def activation_inverse(kind, y):
    """Inverse of sigmoid / softplus (used by the certificate construction)."""
    y = np.asarray(y, dtype=np.float64)
    if kind.kind == "sigmoid":
        out = np.log(y) - np.log1p(-y)
    elif kind.kind == "softplus":
        g = kind.gamma
        out = np.log(np.expm1(g * y)) / g
    elif kind.kind == "tanh":
        out = np.arctanh(y)
    else:
        raise ValidationError(f"no inverse for {kind.kind!r}")
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------------- params

def weight_key(neuron):
    return f"g:{neuron.sharing_group}" if neuron.sharing_group is not None else f"n{neuron.id}"


@dataclass
class ParamState:
    """Hidden weights per slot, per-unit biases (indexed by ``id - d - 1``) and ``V``."""

    weights: dict
    biases: np.ndarray
    V: np.ndarray

    def copy(self):
        return type(self)({k: v.copy() for k, v in self.weights.items()}, self.biases.copy(), self.V.copy())

    def to_json(self):
        return {
            "format": PARAMS_FORMAT,
            "weights": {k: v.tolist() for k, v in self.weights.items()},
            "biases": self.biases.tolist(),
            "V": self.V.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        if obj.get("format") != PARAMS_FORMAT:
            raise ValidationError(f"unsupported params format {obj.get('format')!r}")
        return cls(
            {k: np.asarray(v, dtype=np.float64) for k, v in obj["weights"].items()},
            np.asarray(obj["biases"], dtype=np.float64),
            np.asarray(obj["V"], dtype=np.float64).reshape(len(obj["V"]), -1),
        )

    def allclose(self, other, **kw):
        return (self.weights.keys() == other.weights.keys()
                and all(np.allclose(self.weights[k], other.weights[k], **kw) for k in self.weights)
                and np.allclose(self.biases, other.biases, **kw)
                and np.allclose(self.V, other.V, **kw))


class ParamGradient(ParamState):
    """Same layout as ParamState; shared slots hold the summed contribution."""


@dataclass(frozen=True)
class PsiMatrix:
    values: np.ndarray
    column_order: tuple


# --------------------------------------------------------------------- plan

@dataclass
class _Block:
    cols: object                 # slice or index array into F (hidden columns)
    act: object
    dense: bool
    in_cols: object              # dense: slice/array (fan,), else array (k, fan)
    widx: np.ndarray             # (k, fan) into theta
    bidx: np.ndarray             # (k,) into theta
    shared: bool
    first: bool


def _as_slice(idx):
    idx = np.asarray(idx)
    if idx.ndim == 1 and idx.size and np.all(np.diff(idx) == 1):
        return slice(int(idx[0]), int(idx[-1]) + 1)
    return idx


@dataclass
class Layout:
    spec: NetworkSpec
    slots: dict = field(default_factory=dict)      # key -> (offset, length)
    bias_offset: int = 0
    v_offset: int = 0
    size: int = 0
    blocks: list = field(default_factory=list)
    skip_cols: np.ndarray = None

    def pack(self, params: ParamState):
        theta = np.empty(self.size)
        spec = self.spec
        for key, (off, n) in self.slots.items():
            w = np.asarray(params.weights[key], dtype=np.float64).reshape(-1)
            if w.size != n:
                raise ContractViolation(f"slot {key} expects {n} weights, got {w.size}")
            theta[off:off + n] = w
        if params.biases.shape != (spec.H,):
            raise ContractViolation(f"biases must have shape ({spec.H},)")
        if params.V.shape != (spec.M, spec.m):
            raise ContractViolation(f"V must have shape ({spec.M}, {spec.m}), got {params.V.shape}")
        theta[self.bias_offset:self.v_offset] = params.biases
        theta[self.v_offset:] = params.V.reshape(-1)
        return theta

    def unpack(self, theta, cls=ParamState):
        theta = np.asarray(theta, dtype=np.float64)
        weights = {k: theta[off:off + n].copy() for k, (off, n) in self.slots.items()}
        return cls(weights, theta[self.bias_offset:self.v_offset].copy(),
                   theta[self.v_offset:].reshape(self.spec.M, self.spec.m).copy())

    def zeros(self):
        return self.unpack(np.zeros(self.size))

    def slot_fan_in(self):
        return {k: n for k, (_, n) in self.slots.items()}


def layout(spec: NetworkSpec) -> Layout:
    """Compiled evaluation plan, cached on the (immutable) spec."""
    cached = spec.__dict__.get("_engine_layout")
    if cached is not None:
        return cached
    d, H = spec.d, spec.H
    lay = Layout(spec)
    off = 0
    hidden = spec.hidden
    for n in hidden:
        key = weight_key(n)
        if key not in lay.slots:
            lay.slots[key] = (off, len(n.inputs))
            off += len(n.inputs)
    lay.bias_offset = off
    lay.v_offset = off + H
    lay.size = lay.v_offset + spec.M * spec.m

    buckets = {}
    for n in hidden:
        buckets.setdefault((n.layer, n.activation, len(n.inputs)), []).append(n)
    for (layer, act, fan) in sorted(buckets, key=lambda t: (t[0], str(t[1]), t[2])):
        members = buckets[(layer, act, fan)]
        ids = np.array([n.id for n in members])
        inputs = np.array([n.inputs for n in members], dtype=np.int64).reshape(len(members), fan) - 1
        dense = bool(np.all(inputs == inputs[0]))
        keys = [weight_key(n) for n in members]
        widx = np.array([np.arange(lay.slots[k][0], lay.slots[k][0] + fan) for k in keys],
                        dtype=np.int64).reshape(len(members), fan)
        lay.blocks.append(_Block(
            cols=_as_slice(ids - 1),
            act=act,
            dense=dense,
            in_cols=_as_slice(inputs[0]) if dense else inputs,
            widx=widx,
            bidx=lay.bias_offset + ids - d - 1,
            shared=len(set(keys)) < len(keys),
            first=layer == 1,
        ))
    lay.skip_cols = np.array(spec.skip_set, dtype=np.int64) - 1
    spec.__dict__["_engine_layout"] = lay
    return lay


# ------------------------------------------------------------------ forward

def _theta(spec, params):
    if isinstance(params, np.ndarray):
        return params
    return layout(spec).pack(params)


def _forward_batch(lay: Layout, theta, X):
    spec = lay.spec
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.d:
        raise ContractViolation(f"inputs must have shape (N, {spec.d}), got {X.shape}")
    F = np.empty((X.shape[0], spec.d + spec.H))
    F[:, :spec.d] = X
    pres = []
    for blk in lay.blocks:
        W = theta[blk.widx]
        b = theta[blk.bidx]
        if blk.dense:
            pre = F[:, blk.in_cols] @ W.T + b
        else:
            pre = np.einsum("bkf,kf->bk", F[:, blk.in_cols], W) + b
        F[:, blk.cols] = activation(blk.act, pre)
        pres.append(pre)
    return F, pres


def hidden_values(spec, params, X):
    """``(N, d+H)`` array of input and hidden unit values, column ``id - 1``."""
    lay = layout(spec)
    return _forward_batch(lay, _theta(spec, params), X)[0]


def forward(spec: NetworkSpec, params, x):
    """Values of all ``d+H+m`` units for one input vector (index ``id - 1``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.d,):
        raise ContractViolation(f"input must have length {spec.d}, got shape {x.shape}")
    lay = layout(spec)
    theta = _theta(spec, params)
    F, _ = _forward_batch(lay, theta, x[None, :])
    V = theta[lay.v_offset:].reshape(spec.M, spec.m)
    G = F[:, lay.skip_cols] @ V
    return np.concatenate([F[0], G[0]])


def _X(dataset):
    return dataset.X if hasattr(dataset, "X") else np.asarray(dataset, dtype=np.float64)


def psi(spec: NetworkSpec, params, dataset, chunk=None) -> PsiMatrix:
    lay = layout(spec)
    theta = _theta(spec, params)
    X = _X(dataset)
    if chunk is None or chunk >= len(X):
        F, _ = _forward_batch(lay, theta, X)
        values = F[:, lay.skip_cols]
    else:
        values = np.concatenate([_forward_batch(lay, theta, X[s:s + chunk])[0][:, lay.skip_cols]
                                 for s in range(0, len(X), chunk)])
    return PsiMatrix(values, tuple(spec.skip_set))


def output(psi_matrix, V):
    P = psi_matrix.values if isinstance(psi_matrix, PsiMatrix) else np.asarray(psi_matrix)
    V = np.asarray(V, dtype=np.float64)
    if P.shape[1] != V.shape[0]:
        raise ContractViolation(f"Psi has {P.shape[1]} columns but V has {V.shape[0]} rows")
    return P @ V


def predict(spec, params, X):
    lay = layout(spec)
    theta = _theta(spec, params)
    F, _ = _forward_batch(lay, theta, np.asarray(X, dtype=np.float64))
    return F[:, lay.skip_cols] @ theta[lay.v_offset:].reshape(spec.M, spec.m)


# ----------------------------------------------------------------- backward

def _loss_grad_chunk(lay, theta, X, y, Y, loss_kind, n_total):
    spec = lay.spec
    F, pres = _forward_batch(lay, theta, X)
    V = theta[lay.v_offset:].reshape(spec.M, spec.m)
    P = F[:, lay.skip_cols]
    G = P @ V
    loss, dG = losses.value_and_grad(loss_kind, G, y, Y, n_total=n_total)
    g = np.zeros_like(theta)
    g[lay.v_offset:] = (P.T @ dG).reshape(-1)
    dF = np.zeros_like(F)
    dF[:, lay.skip_cols] += dG @ V.T
    for blk, pre in zip(reversed(lay.blocks), reversed(pres)):
        dpre = dF[:, blk.cols] * activation_deriv(blk.act, pre)
        g[blk.bidx] += dpre.sum(axis=0)
        W = theta[blk.widx]
        if blk.dense:
            Fin = F[:, blk.in_cols]
            gW = dpre.T @ Fin
            if not blk.first:
                dF[:, blk.in_cols] += dpre @ W
        else:
            Fin = F[:, blk.in_cols]
            gW = np.einsum("bk,bkf->kf", dpre, Fin)
            if not blk.first:
                np.add.at(dF.T, blk.in_cols.reshape(-1),
                          (dpre[:, :, None] * W[None, :, :]).reshape(len(X), -1).T)
        if blk.shared:
            np.add.at(g, blk.widx.reshape(-1), gW.reshape(-1))
        else:
            g[blk.widx] += gW
    return loss, g


def loss_and_grad(spec, theta, X, y, loss_kind="cross_entropy", Y=None, n_total=None,
                  chunk=None, workers=1):
    """Loss and flat gradient over ``(X, y)``.

    With ``chunk`` the samples are split into contiguous ranges; partial
    results are summed in range order so the reduction is reproducible
    whatever ``workers`` is.  ``chunk=None`` evaluates in one pass.
    """
    lay = layout(spec)
    theta = _theta(spec, theta)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n_total = len(X) if n_total is None else n_total
    if chunk is None or chunk >= len(X):
        return _loss_grad_chunk(lay, theta, X, y, Y, loss_kind, n_total)
    starts = range(0, len(X), chunk)

    def run(s):
        return _loss_grad_chunk(lay, theta, X[s:s + chunk], y[s:s + chunk],
                                None if Y is None else Y[s:s + chunk], loss_kind, n_total)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    loss = 0.0
    grad = np.zeros_like(theta)
    for part_loss, part_grad in parts:
        loss += part_loss
        grad += part_grad
    return loss, grad


def gradient(spec: NetworkSpec, params: ParamState, dataset, loss_kind="cross_entropy", chunk=None):
    """Loss over the whole dataset and its gradient as a ParamGradient."""
    lay = layout(spec)
    Y = dataset.Y if loss_kind == "square" else None
    loss, g = loss_and_grad(spec, lay.pack(params), dataset.X, dataset.y, loss_kind, Y=Y, chunk=chunk)
    return loss, lay.unpack(g, ParamGradient)


def loss_value(spec, params, dataset, loss_kind="cross_entropy"):
    G = predict(spec, params, dataset.X)
    return losses.loss(loss_kind, G, dataset.y, dataset.Y if loss_kind == "square" else None)


# ------------------------------------------------------------ serialization

def save_params_json(params, path):
    with open(path, "w") as fh:
        json.dump(params.to_json(), fh)


def load_params_json(path):
    with open(path) as fh:
        return ParamState.from_json(json.load(fh))


def save_params_binary(spec, params, path):
    theta = layout(spec).pack(params)
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<I", BINARY_VERSION))
        fh.write(theta.astype("<f8").tobytes())


def load_params_binary(spec, path):
    lay = layout(spec)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != BINARY_MAGIC:
        raise ValidationError("not a parameter checkpoint (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != BINARY_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    body = raw[8:]
    if len(body) != 8 * lay.size:
        raise ValidationError(f"checkpoint holds {len(body) // 8} reals, network needs {lay.size}")
    return lay.unpack(np.frombuffer(body, dtype="<f8"))
