"""Command line entry point.

Every subcommand reads one JSON config, honours ``--seed`` and writes a JSON
result to stdout or ``--out``.  Exit status: 0 success, 2 bad input or a
violated assumption, 3 numerical failure (rank deficiency, divergence).

Config keys shared by the subcommands::

    "network": path | network document | {"mlp": {"d", "widths", "m", "activation", "skip_set"}}
    "augment": {"target_M", "layer_range", "keep_last_layer"}      (optional, applied to network)
    "dataset": {"path", "format", "labels_path", "m", "limit"} | {"synth": {"n", "d", "m", "separation"}}
               plus optional "jitter": magnitude
    "params":  path to a parameter JSON (where meaningful)

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, certificate, engine, netgraph, solvers, workbench
from .data import jitter, load_dataset, synth_dataset
from .errors import NoValleyError, NumericalError, ValidationError

log = logging.getLogger("novalley")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class _Ctx:
    def __init__(self, config, base, seed):
        self.config = config
        self.base = base
        self.seed = seed if seed is not None else config.get("seed")

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def network(self):
        obj = self.config.get("network")
        if obj is None:
            raise ValidationError("config needs a 'network' entry")
        if isinstance(obj, str):
            spec = netgraph.load_network(self.path(obj))
        elif "mlp" in obj:
            a = obj["mlp"]
            act = netgraph.ActivationKind.from_json(a.get("activation", "sigmoid"))
            spec = netgraph.mlp(int(a["d"]), [int(w) for w in a["widths"]], int(a["m"]), act,
                                a.get("skip_set"))
        else:
            spec = netgraph.from_json(obj)
        aug = self.config.get("augment")
        if aug:
            lr = aug.get("layer_range")
            spec = netgraph.augment_with_skips(spec, int(aug["target_M"]), self.seed,
                                               tuple(lr) if lr else None,
                                               bool(aug.get("keep_last_layer", False)))
        return spec

    def dataset(self, spec=None):
        obj = self.config.get("dataset")
        if obj is None:
            raise ValidationError("config needs a 'dataset' entry")
        if "synth" in obj:
            s = obj["synth"]
            ds = synth_dataset(int(s["n"]), int(s["d"]), int(s["m"]), float(s.get("separation", 3.0)),
                               s.get("seed", self.seed))
        else:
            ds = load_dataset(self.path(obj["path"]), obj.get("format"),
                              self.path(obj["labels_path"]) if obj.get("labels_path") else None,
                              obj.get("m"))
        if obj.get("limit"):
            ds = ds.subset(np.arange(min(int(obj["limit"]), ds.N)))
        if obj.get("jitter"):
            ds = jitter(ds, float(obj["jitter"]), self.seed, spec)
        return ds

    def params(self, spec, required=False):
        p = self.config.get("params")
        if p is None:
            if required:
                raise ValidationError("config needs a 'params' entry")
            return None
        return engine.load_params_json(self.path(p))

    def maybe_save_params(self, params):
        p = self.config.get("params_out")
        if p:
            engine.save_params_json(params, self.path(p))


# ------------------------------------------------------------- subcommands

def cmd_validate(ctx):
    spec = ctx.network()
    out = {"validation": netgraph.validate(spec).to_json(), "M": spec.M, "H": spec.H}
    if "dataset" in ctx.config:
        ds = ctx.dataset(spec)
        out["assumptions"] = netgraph.check_assumptions(spec, ds, ctx.config.get("n")).to_json()
    return out


def cmd_augment(ctx):
    spec = ctx.network()
    report = netgraph.validate(spec)
    if not report.ok:
        raise ValidationError(f"network fails validation: {report.codes()}")
    return netgraph.to_json(spec)


def cmd_certify(ctx):
    spec = ctx.network()
    ds = ctx.dataset(spec)
    cfg = certificate.CertificateConfig.from_json(ctx.config.get("certificate"))
    report, params = certificate.certify(spec, ds, cfg, ctx.seed, ctx.config.get("n"))
    ctx.maybe_save_params(params)
    return report.to_json()


def cmd_solve_rand(ctx):
    spec = ctx.network()
    ds = ctx.dataset(spec)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", solvers.RankDeficiencyWarning)
        fit = solvers.random_feature_fit(spec, ds, ctx.seed, ctx.config.get("rank_tol"),
                                         ctx.config.get("loss", "cross_entropy"))
    ctx.maybe_save_params(fit.params)
    out = fit.to_json()
    out["warnings"] = [str(w.message) for w in caught]
    return out


def cmd_train_sgd(ctx):
    spec = ctx.network()
    ds = ctx.dataset(spec)
    cfg_obj = dict(ctx.config.get("sgd", {}))
    if ctx.seed is not None:
        cfg_obj["seed"] = ctx.seed
    cfg = solvers.SgdConfig.from_json(cfg_obj)
    params, history = solvers.sgd_train(spec, ds, ctx.params(spec), cfg,
                                        ctx.config.get("loss", "cross_entropy"))
    ctx.maybe_save_params(params)
    if ctx.config.get("checkpoint"):
        engine.save_params_binary(spec, params, ctx.path(ctx.config["checkpoint"]))
    return {"history": history, "final": history[-1]}


def cmd_escape_path(ctx):
    spec = ctx.network()
    ds = ctx.dataset(spec)
    params = ctx.params(spec)
    if params is None:
        params = solvers.init_truncated_gaussian(spec, ctx.seed)
        rng = np.random.default_rng(ctx.seed)
        params.V = rng.standard_normal(params.V.shape)
    rep = solvers.escape_path(spec, params, ds, float(ctx.config.get("epsilon", 0.2)),
                              int(ctx.config.get("n_samples", 100)), ctx.config.get("rank_tol"))
    out = rep.to_json()
    out["all_ok"] = rep.all_ok
    return out


def cmd_landscape(ctx):
    spec = ctx.network()
    ds = ctx.dataset(spec)
    center = ctx.params(spec, required=True)
    grid = workbench.landscape_slice(
        spec, ds, center, ctx.seed,
        float(ctx.config.get("extent", 1.0)), int(ctx.config.get("resolution", 41)),
        ctx.config.get("loss", "cross_entropy"), ctx.config.get("normalization", "filter"),
        workers=int(ctx.config.get("workers", 1)))
    if ctx.config.get("csv_out"):
        grid.save_csv(ctx.path(ctx.config["csv_out"]))
    return grid.to_json(bool(ctx.config.get("with_directions", False)))


def cmd_demo_skinny(ctx):
    ds = ctx.dataset()
    cfg_obj = dict(ctx.config.get("sgd", {}))
    if ctx.seed is not None:
        cfg_obj["seed"] = ctx.seed
    cfg = solvers.SgdConfig.from_json(cfg_obj)
    act = netgraph.ActivationKind.from_json(ctx.config.get("activation", {"kind": "softplus"}))
    variants = ctx.config.get("with_skips", "both")
    flags = [False, True] if variants == "both" else [bool(variants)]
    out = {}
    for flag in flags:
        run = workbench.deep_skinny_demo(int(ctx.config.get("depth", 50)), int(ctx.config.get("width", 10)),
                                         ds, flag, cfg, act, ctx.seed)
        out["skip" if flag else "plain"] = {"history": run.history, "M": run.spec.M,
                                            "first_zero_error_epoch": run.first_zero_error_epoch()}
    return out


COMMANDS = {
    "validate": (cmd_validate, "check a network (and optionally the data assumptions)"),
    "augment": (cmd_augment, "add random skip connections; prints the network document"),
    "certify": (cmd_certify, "build and verify the full-rank construction"),
    "solve-rand": (cmd_solve_rand, "random hidden weights, least-squares output weights"),
    "train-sgd": (cmd_train_sgd, "SGD with Nesterov momentum"),
    "escape-path": (cmd_escape_path, "loss along the straight segment to an eps/2 point"),
    "landscape": (cmd_landscape, "2-D loss slice around given parameters"),
    "demo-skinny": (cmd_demo_skinny, "deep narrow chain with and without skips"),
}


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def build_parser():
    parser = argparse.ArgumentParser(prog="novalley", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="JSON config file ('-' for stdin)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="write the JSON result here instead of stdout")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config == "-":
            config, base = json.load(sys.stdin), Path.cwd()
        else:
            with open(args.config) as fh:
                config = json.load(fh)
            base = Path(args.config).resolve().parent
        result = COMMANDS[args.command][0](_Ctx(config, base, args.seed))
    except (ValidationError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        history = getattr(exc, "history", None)
        if history and args.out:
            Path(args.out).write_text(json.dumps({"error": str(exc), "history": history},
                                                 default=_json_default) + "\n")
        return EXIT_NUMERIC
    except NoValleyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = json.dumps(result, default=_json_default)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
