"""Experiment helpers: 2-D loss slices and the deep narrow chain comparison."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine, losses
from .engine import layout
from .errors import ValidationError
from .netgraph import augment_with_skips, mlp, softplus
from .solvers import SgdConfig, sgd_train

GRID_FORMAT = 1


@dataclass
class LandscapeGrid:
    center: engine.ParamState
    dir1: engine.ParamState
    dir2: engine.ParamState
    axis1: np.ndarray
    axis2: np.ndarray
    values: np.ndarray          # values[b, a]: row follows dir2, column follows dir1
    loss_kind: str = "cross_entropy"
    normalization: str = "filter"
    meta: dict = field(default_factory=dict)

    @property
    def extents(self):
        return (float(self.axis1[0]), float(self.axis1[-1])), (float(self.axis2[0]), float(self.axis2[-1]))

    @property
    def resolution(self):
        return len(self.axis1), len(self.axis2)

    @property
    def center_value(self):
        return float(self.values[len(self.axis2) // 2, len(self.axis1) // 2])

    def to_json(self, with_directions=False):
        out = {
            "format": GRID_FORMAT,
            "loss": self.loss_kind,
            "normalization": self.normalization,
            "axis1": self.axis1.tolist(),
            "axis2": self.axis2.tolist(),
            "values": self.values.tolist(),
            "meta": self.meta,
        }
        if with_directions:
            out["center"] = self.center.to_json()
            out["dir1"] = self.dir1.to_json()
            out["dir2"] = self.dir2.to_json()
        return out

    @classmethod
    def from_json(cls, obj):
        if obj.get("format") != GRID_FORMAT:
            raise ValidationError(f"unsupported grid format {obj.get('format')!r}")
        load = engine.ParamState.from_json
        return cls(
            load(obj["center"]) if "center" in obj else None,
            load(obj["dir1"]) if "dir1" in obj else None,
            load(obj["dir2"]) if "dir2" in obj else None,
            np.asarray(obj["axis1"], dtype=np.float64),
            np.asarray(obj["axis2"], dtype=np.float64),
            np.asarray(obj["values"], dtype=np.float64),
            obj.get("loss", "cross_entropy"),
            obj.get("normalization", "filter"),
            obj.get("meta", {}),
        )

    def save(self, path, with_directions=False):
        with open(path, "w") as fh:
            json.dump(self.to_json(with_directions), fh)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "b", "loss"])
            for j, b in enumerate(self.axis2):
                for i, a in enumerate(self.axis1):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(self.values[j, i]))])


def normalize_direction(spec, direction, center, mode="filter"):
    """Scale a random direction to the center's size.

    ``filter``: every weight slot (one unit or one sharing group) and every
    output column of V gets the norm of the matching center block; biases
    are not perturbed.  ``global``: the whole vector gets the center's norm.
    """
    d = direction.copy()
    if mode == "global":
        lay = layout(spec)
        vec, ref = lay.pack(d), lay.pack(center)
        n = np.linalg.norm(vec)
        return lay.unpack(vec * (np.linalg.norm(ref) / n if n > 0 else 0.0))
    if mode != "filter":
        raise ValidationError(f"unknown normalization {mode!r}")
    for key, w in d.weights.items():
        n = np.linalg.norm(w)
        d.weights[key] = w * (np.linalg.norm(center.weights[key]) / n if n > 0 else 0.0)
    d.biases[:] = 0.0
    vn = np.linalg.norm(d.V, axis=0)
    cn = np.linalg.norm(center.V, axis=0)
    d.V = d.V * np.divide(cn, vn, out=np.zeros_like(cn), where=vn > 0)
    return d


def grid_axis(extent, resolution):
    if resolution < 1 or resolution % 2 == 0:
        raise ValidationError(f"resolution must be odd and positive, got {resolution}")
    if resolution == 1:
        return np.zeros(1)
    half = resolution // 2
    return extent * (np.arange(resolution) - half) / half


def landscape_slice(spec, dataset, center, seed=None, extent=1.0, resolution=41,
                    loss_kind="cross_entropy", normalization="filter", dirs=None, workers=1):
    """Loss on the plane ``center + a dir1 + b dir2`` over a square grid.

    Directions are drawn i.i.d. standard normal and normalized unless given
    explicitly as ``dirs=(dir1, dir2)`` (used as is).
    """
    lay = layout(spec)
    axis = grid_axis(extent, resolution)
    if dirs is None:
        rng = np.random.default_rng(seed)
        raw = [lay.unpack(rng.standard_normal(lay.size)) for _ in range(2)]
        dirs = [normalize_direction(spec, r, center, normalization) for r in raw]
        norm_used = normalization
    else:
        norm_used = "explicit"
    d1, d2 = (lay.pack(d) for d in dirs)
    c = lay.pack(center)
    Y = dataset.Y if loss_kind == "square" else None

    def row(b):
        out = np.empty(len(axis))
        for i, a in enumerate(axis):
            G = engine.predict(spec, c + a * d1 + b * d2, dataset.X)
            out[i] = losses.loss(loss_kind, G, dataset.y, Y)
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = np.array(list(pool.map(row, axis)))
    else:
        values = np.array([row(b) for b in axis])
    return LandscapeGrid(center, lay.unpack(d1), lay.unpack(d2), axis, axis.copy(), values,
                         loss_kind, norm_used, {"seed": seed, "extent": extent})


# ----------------------------------------------------------- deep narrow nets

@dataclass
class DemoRun:
    spec: object
    params: engine.ParamState
    history: list

    def first_zero_error_epoch(self):
        for h in self.history:
            if h["misclassified"] == 0:
                return h["epoch"]
        return None


def deep_skinny_demo(depth, width, dataset, with_skips, config=None, activation=None, seed=None,
                     loss_kind="cross_entropy"):
    """Chain of ``depth`` fully connected layers of ``width`` units, trained with SGD.

    The plain variant feeds the output from the last layer only.  The skip
    variant additionally connects N uniformly chosen hidden units (N = number
    of samples) to the output; the hidden topology is identical.
    """
    if width < 1 or depth < 1:
        raise ValidationError("depth and width must be >= 1")
    activation = activation or softplus()
    spec = mlp(dataset.d, [width] * depth, dataset.m, activation)
    if with_skips:
        spec = augment_with_skips(spec, min(spec.H, width + dataset.N), seed=seed)
    config = config or SgdConfig(seed=seed)
    params, history = sgd_train(spec, dataset, None, config, loss_kind)
    return DemoRun(spec, params, history)
