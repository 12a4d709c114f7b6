"""Network description: a DAG of neurons with skip connections to the output.

Ids follow the usual convention: ``1..d`` are inputs, ``d+1..d+H`` hidden
units, ``d+H+1..d+H+m`` outputs.  Output units read exactly the skip set,
each with its own (unshared) weight column of ``V``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleError, ValidationError

FORMAT_VERSION = 1
KINDS = ("sigmoid", "tanh", "softplus", "relu")
ANALYTIC_INCREASING = ("sigmoid", "tanh", "softplus")


@dataclass(frozen=True)
class ActivationKind:
    kind: str = "sigmoid"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown activation {self.kind!r}")
        if self.kind == "softplus" and not self.gamma > 0:
            raise ValidationError("softplus needs gamma > 0")

    def to_json(self):
        if self.kind == "softplus":
            return {"kind": self.kind, "gamma": self.gamma}
        return {"kind": self.kind}

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj["kind"], float(obj.get("gamma", 1.0)))


SIGMOID = ActivationKind("sigmoid")
TANH = ActivationKind("tanh")


def softplus(gamma=1.0):
    return ActivationKind("softplus", gamma)


@dataclass(frozen=True)
class NeuronSpec:
    id: int
    layer: int
    inputs: tuple
    activation: Optional[ActivationKind] = None
    sharing_group: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))


@dataclass(frozen=True)
class NetworkSpec:
    d: int
    H: int
    m: int
    neurons: tuple
    skip_set: tuple

    def __post_init__(self):
        object.__setattr__(self, "neurons", tuple(self.neurons))
        object.__setattr__(self, "skip_set", tuple(int(p) for p in self.skip_set))

    @property
    def M(self):
        return len(self.skip_set)

    @cached_property
    def by_id(self):
        return {n.id: n for n in self.neurons}

    def neuron(self, nid):
        try:
            return self.by_id[nid]
        except KeyError:
            raise ValidationError(f"unknown neuron id {nid}") from None

    def is_hidden(self, nid):
        return self.d < nid <= self.d + self.H

    @property
    def hidden(self):
        return [n for n in self.neurons if self.is_hidden(n.id)]

    @property
    def outputs(self):
        return [n for n in self.neurons if n.id > self.d + self.H]

    @cached_property
    def first_layer(self):
        return [n.id for n in self.neurons if self.is_hidden(n.id) and n.layer == 1]

    @property
    def depth(self):
        return max((n.layer for n in self.hidden), default=0)

    def layer_of(self, nid):
        return 0 if nid <= self.d else self.neuron(nid).layer

    @cached_property
    def groups(self):
        """Sharing group name -> member ids (hidden units only)."""
        out = {}
        for n in self.hidden:
            if n.sharing_group is not None:
                out.setdefault(n.sharing_group, []).append(n.id)
        return out

    def with_skip_set(self, skip_set):
        skip_set = tuple(sorted(int(p) for p in skip_set))
        top = self.depth + 1
        outs = [NeuronSpec(self.d + self.H + k + 1, top, skip_set) for k in range(self.m)]
        return NetworkSpec(self.d, self.H, self.m, tuple(self.hidden) + tuple(outs), skip_set)


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    code: str
    neuron: Optional[int]
    detail: str


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def codes(self):
        return {v.code for v in self.violations}

    def add(self, code, neuron, detail):
        self.violations.append(Violation(code, neuron, detail))

    def to_json(self):
        return {"ok": self.ok, "violations": [v.__dict__ for v in self.violations]}


def validate(spec: NetworkSpec) -> ValidationReport:
    """Structural checks; every problem becomes a report entry."""
    rep = ValidationReport()
    d, H, m = spec.d, spec.H, spec.m
    if d < 1 or H < 1 or m < 1:
        rep.add("sizes", None, f"need d, H, m >= 1 (got {d}, {H}, {m})")
    ids = [n.id for n in spec.neurons]
    if ids != list(range(d + 1, d + H + m + 1)):
        rep.add("id range", None, f"neuron ids must be {d + 1}..{d + H + m} in order")
    layers = {n.id: n.layer for n in spec.neurons}
    top_hidden = max((n.layer for n in spec.hidden), default=0)

    for n in spec.neurons:
        hidden = spec.is_hidden(n.id)
        if len(set(n.inputs)) != len(n.inputs):
            rep.add("duplicate input", n.id, "repeated input id")
        for k in n.inputs:
            if k >= n.id:
                rep.add("forward edge", n.id, f"input {k} is not below {n.id}")
            elif k < 1:
                rep.add("unknown input", n.id, f"input id {k}")
        if not hidden:
            continue
        if not n.inputs:
            rep.add("no inputs", n.id, "hidden unit without inputs")
        if n.activation is None:
            rep.add("activation", n.id, "hidden unit without activation")
        if n.layer < 1:
            rep.add("layer order", n.id, f"hidden layer index {n.layer} < 1")
            continue
        from_inputs = [k for k in n.inputs if k <= d]
        if n.layer == 1 and len(from_inputs) != len(n.inputs):
            rep.add("layer order", n.id, "first-layer unit reads hidden units")
        if n.layer > 1:
            if from_inputs:
                rep.add("layer order", n.id, "higher-layer unit reads raw inputs")
            for k in n.inputs:
                if d < k < n.id and layers.get(k, n.layer) >= n.layer:
                    rep.add("layer order", n.id, f"input {k} is not on a lower layer")

    for n in spec.outputs:
        if n.layer <= top_hidden:
            rep.add("output layer", n.id, "output units must sit above every hidden layer")
        if tuple(n.inputs) != tuple(spec.skip_set):
            rep.add("output inputs", n.id, "output unit must read exactly the skip set")

    for name, members in spec.groups.items():
        group_layers = {layers[i] for i in members}
        if len(group_layers) > 1:
            rep.add("group layer mismatch", members[0], f"group {name!r} spans layers {sorted(group_layers)}")
        arities = {len(spec.neuron(i).inputs) for i in members}
        if len(arities) > 1:
            rep.add("group arity mismatch", members[0], f"group {name!r} has fan-ins {sorted(arities)}")

    if len(set(spec.skip_set)) != len(spec.skip_set):
        rep.add("duplicate skip", None, "skip set repeats a unit")
    for p in spec.skip_set:
        if not spec.is_hidden(p):
            rep.add("skip not hidden", p, "skip set members must be hidden units")
    return rep


# ------------------------------------------------------------- assumptions

@dataclass
class AssumptionReport:
    analytic_increasing_ok: bool
    skip_activation_ok: bool
    skip_branch: Optional[str]
    distinct_patches_ok: bool
    violating_pairs: list
    backward_paths: dict

    @property
    def ok(self):
        return self.analytic_increasing_ok and self.skip_activation_ok and self.distinct_patches_ok

    def to_json(self):
        return {
            "ok": self.ok,
            "analytic_increasing_ok": self.analytic_increasing_ok,
            "skip_activation_ok": self.skip_activation_ok,
            "skip_branch": self.skip_branch,
            "distinct_patches_ok": self.distinct_patches_ok,
            "violating_pairs": [list(t) for t in self.violating_pairs],
            "backward_paths": {str(k): v for k, v in self.backward_paths.items()},
        }


def backward_path_exists(spec: NetworkSpec, p: int):
    """Path ``p -> ... -> first-layer unit`` avoiding skip units and their sharing groups.

    Returns the list of ids starting at ``p`` or ``None``.  Inputs are tried in
    stored order, so the answer is deterministic.
    """
    node = spec.neuron(p)
    if not spec.is_hidden(p):
        raise ValidationError(f"{p} is not a hidden unit")
    skips = set(spec.skip_set)
    tainted = {g for g, members in spec.groups.items() if skips.intersection(members)}

    def blocked(k):
        n = spec.by_id[k]
        return k in skips or (n.sharing_group is not None and n.sharing_group in tainted)

    dead = set()

    def walk(k):
        n = spec.by_id[k]
        if n.layer == 1:
            return [k]
        for c in n.inputs:
            if c <= spec.d or c in dead or blocked(c):
                continue
            rest = walk(c)
            if rest is not None:
                return [k] + rest
        dead.add(k)
        return None

    if node.layer == 1:
        return [p]
    return walk(p)


def patch_collisions(spec: NetworkSpec, X, limit=None):
    """(r, s, unit) triples with ``x_r|S == x_s|S`` for a first-layer support ``S``."""
    X = np.asarray(X, dtype=np.float64)
    by_support = {}
    for j in spec.first_layer:
        by_support.setdefault(spec.by_id[j].inputs, []).append(j)
    pairs = []
    for support, units in by_support.items():
        # +0.0 folds -0.0 into 0.0 so the byte-wise row comparison means value equality
        cols = X[:, [k - 1 for k in support]] + 0.0
        _, inverse, counts = np.unique(cols, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        for cls in np.flatnonzero(counts > 1):
            rows = np.flatnonzero(inverse == cls)
            for r, s in combinations(rows.tolist(), 2):
                for j in units:
                    pairs.append((r, s, j))
                    if limit is not None and len(pairs) >= limit:
                        return pairs
    pairs.sort()
    return pairs


def check_assumptions(spec: NetworkSpec, dataset, n_samples=None) -> AssumptionReport:
    X = dataset.X if hasattr(dataset, "X") else np.asarray(dataset)
    N = len(X) if n_samples is None else n_samples
    if N < 1:
        raise ValidationError("need at least one sample")
    if spec.M < N:
        raise InfeasibleError(f"condition M >= N fails: M = {spec.M}, N = {N}")

    analytic = all(n.activation is not None and n.activation.kind in ANALYTIC_INCREASING
                   for n in spec.hidden)
    lead = spec.skip_set[:N]
    kinds = {spec.neuron(p).activation.kind for p in lead if spec.neuron(p).activation}
    paths = {}
    branch = None
    if kinds == {"sigmoid"}:
        branch, skip_ok = "bounded", True
    elif kinds == {"softplus"}:
        branch = "softplus"
        for p in lead:
            paths[p] = backward_path_exists(spec, p)
        skip_ok = all(path is not None for path in paths.values())
    else:
        skip_ok = False

    pairs = patch_collisions(spec, X)
    return AssumptionReport(analytic, skip_ok, branch, not pairs, pairs, paths)


# -------------------------------------------------------------- augmenting

def augment_with_skips(spec: NetworkSpec, target_M: int, seed=None, layer_range=None,
                       keep_last_layer=False) -> NetworkSpec:
    """Connect a uniformly random set of hidden units to the output.

    Existing skip units are kept; ``layer_range=(lo, hi)`` (inclusive) restricts
    the pool, ``keep_last_layer`` forces the top hidden layer in.
    """
    if target_M > spec.H:
        raise InfeasibleError(f"target_M = {target_M} exceeds H = {spec.H}")
    keep = set(spec.skip_set)
    if keep_last_layer:
        keep.update(n.id for n in spec.hidden if n.layer == spec.depth)
    pool = [n.id for n in spec.hidden
            if n.id not in keep and (layer_range is None or layer_range[0] <= n.layer <= layer_range[1])]
    need = target_M - len(keep)
    if need < 0:
        raise InfeasibleError(f"{len(keep)} units are already kept, more than target_M = {target_M}")
    if need > len(pool):
        raise InfeasibleError(f"pool has {len(pool)} free units, {need} needed")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(np.asarray(pool, dtype=np.int64), size=need, replace=False) if need else []
    return spec.with_skip_set(sorted(keep.union(int(c) for c in chosen)))


# ---------------------------------------------------------------- builders

class NetworkBuilder:
    """Layer-by-layer construction of a NetworkSpec.

    >>> b = NetworkBuilder(4)
    >>> _ = b.dense(8, SIGMOID)
    >>> spec = b.build(m=3)
    """

    def __init__(self, d):
        self.d = d
        self.layers = [list(range(1, d + 1))]
        self._pending = []

    @property
    def next_id(self):
        return self.d + len(self._pending) + 1

    def dense(self, width, activation=SIGMOID, sources=(-1,)):
        """Fully connected layer reading the listed earlier layers (``-1`` = previous)."""
        if sources == "all":
            sources = range(1, len(self.layers)) if len(self.layers) > 1 else (0,)
        inputs = sorted(k for s in sources for k in self.layers[s])
        layer = len(self.layers)
        ids = []
        for _ in range(width):
            ids.append(self.next_id)
            self._pending.append(NeuronSpec(self.next_id, layer, inputs, activation))
        self.layers.append(ids)
        return ids

    def conv1d(self, kernel, channels, stride=1, activation=SIGMOID, in_channels=1, shared=True):
        """1-D convolution over the previous layer viewed as ``(length, in_channels)``.

        Each output channel is one sharing group over all its positions.
        """
        prev = self.layers[-1]
        if len(prev) % in_channels:
            raise ValidationError("previous layer size is not a multiple of in_channels")
        length = len(prev) // in_channels
        layer = len(self.layers)
        ids = []
        for t in range(0, length - kernel + 1, stride):
            patch = [prev[pos * in_channels + c] for pos in range(t, t + kernel) for c in range(in_channels)]
            for ch in range(channels):
                group = f"L{layer}c{ch}" if shared else None
                ids.append(self.next_id)
                self._pending.append(NeuronSpec(self.next_id, layer, patch, activation, group))
        if not ids:
            raise ValidationError("kernel larger than the input")
        self.layers.append(ids)
        return ids

    def build(self, m, skip_set=None):
        H = len(self._pending)
        top = len(self.layers)
        if skip_set is None:
            skip_set = self.layers[-1]
        skip_set = tuple(sorted(skip_set))
        outs = [NeuronSpec(self.d + H + k + 1, top, skip_set) for k in range(m)]
        return NetworkSpec(self.d, H, m, tuple(self._pending) + tuple(outs), skip_set)


def mlp(d, widths: Sequence[int], m, activation=SIGMOID, skip_set=None):
    """Plain fully connected network; by default only the last hidden layer feeds the output."""
    b = NetworkBuilder(d)
    for w in widths:
        b.dense(w, activation)
    if skip_set == "all":
        skip_set = range(d + 1, d + sum(widths) + 1)
    return b.build(m, skip_set)


# -------------------------------------------------------------------- JSON

def to_json(spec: NetworkSpec):
    return {
        "format": FORMAT_VERSION,
        "d": spec.d,
        "H": spec.H,
        "m": spec.m,
        "skip_set": list(spec.skip_set),
        "neurons": [
            {
                "id": n.id,
                "layer": n.layer,
                "inputs": list(n.inputs),
                "activation": n.activation.to_json() if n.activation else None,
                "sharing_group": n.sharing_group,
            }
            for n in spec.neurons
        ],
    }


def from_json(obj) -> NetworkSpec:
    fmt = obj.get("format")
    if fmt != FORMAT_VERSION:
        raise ValidationError(f"unsupported network format {fmt!r}")
    try:
        neurons = tuple(
            NeuronSpec(
                int(n["id"]),
                int(n["layer"]),
                n["inputs"],
                ActivationKind.from_json(n["activation"]) if n.get("activation") else None,
                n.get("sharing_group"),
            )
            for n in obj["neurons"]
        )
        return NetworkSpec(int(obj["d"]), int(obj["H"]), int(obj["m"]), neurons, obj["skip_set"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed network document: {exc}") from exc


def save_network(spec, path):
    with open(path, "w") as fh:
        json.dump(to_json(spec), fh)


def load_network(path) -> NetworkSpec:
    with open(path) as fh:
        return from_json(json.load(fh))
