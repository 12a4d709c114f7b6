import json
import subprocess
import sys

import numpy as np

from novalley import engine
from novalley import netgraph as ng
from novalley.cli import main
from novalley.data import save_dataset, synth_dataset

NET = {"mlp": {"d": 3, "widths": [8], "m": 2, "skip_set": "all"}}
SYNTH = {"synth": {"n": 6, "d": 3, "m": 2}}


def run(tmp_path, name, config, *extra):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / f"{name}.out.json"
    code = main([name, str(cfg), "--out", str(out), *extra])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_validate_and_augment(tmp_path):
    code, out = run(tmp_path, "validate", {"network": NET, "dataset": SYNTH}, "--seed", "0")
    assert code == 0 and out["validation"]["ok"] and out["M"] == 8
    net = {"mlp": {"d": 3, "widths": [8, 8], "m": 2}}
    code, doc = run(tmp_path, "augment", {"network": net, "augment": {"target_M": 12}}, "--seed", "1")
    assert code == 0 and len(ng.from_json(doc).skip_set) == 12
    (tmp_path / "net.json").write_text(json.dumps(doc))
    code, out = run(tmp_path, "validate", {"network": "net.json"})
    assert code == 0 and out["M"] == 12


def test_certify(tmp_path):
    cfg = {"network": NET, "dataset": SYNTH, "params_out": "cert_params.json"}
    code, out = run(tmp_path, "certify", cfg, "--seed", "0")
    assert code == 0 and out["passed"]
    assert (tmp_path / "cert_params.json").exists()


def test_solve_rand_and_landscape(tmp_path):
    save_dataset(synth_dataset(6, 3, 2, seed=0), tmp_path / "d.csv")
    cfg = {"network": NET, "dataset": {"path": "d.csv"}, "params_out": "p.json"}
    code, out = run(tmp_path, "solve-rand", cfg, "--seed", "0")
    assert code == 0 and out["report"]["misclassified"] == 0 and out["warnings"] == []
    cfg = {"network": NET, "dataset": {"path": "d.csv"}, "params": "p.json", "resolution": 3,
           "csv_out": "grid.csv"}
    code, grid = run(tmp_path, "landscape", cfg, "--seed", "0")
    assert code == 0 and np.all(np.isfinite(grid["values"]))
    assert (tmp_path / "grid.csv").exists()


def test_train_and_escape(tmp_path):
    cfg = {"network": NET, "dataset": SYNTH, "sgd": {"epochs": 3, "lr0": 0.05, "batch_size": 2},
           "checkpoint": "ck.bin"}
    code, out = run(tmp_path, "train-sgd", cfg, "--seed", "2")
    assert code == 0 and len(out["history"]) == 4
    spec = ng.mlp(3, [8], 2, skip_set="all")
    assert engine.load_params_binary(spec, tmp_path / "ck.bin").V.shape == (8, 2)
    code, out = run(tmp_path, "escape-path", {"network": NET, "dataset": SYNTH, "n_samples": 10}, "--seed", "0")
    assert code == 0 and out["all_ok"] and len(out["lambdas"]) == 11


def test_demo_skinny(tmp_path):
    cfg = {"dataset": SYNTH, "depth": 2, "width": 3, "sgd": {"epochs": 2}}
    code, out = run(tmp_path, "demo-skinny", cfg, "--seed", "0")
    assert code == 0 and set(out) == {"plain", "skip"}


def test_exit_codes(tmp_path):
    assert run(tmp_path, "validate", {})[0] == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["validate", str(tmp_path / "broken.json")]) == 2
    assert main(["validate", str(tmp_path / "missing.json")]) == 2
    assert run(tmp_path, "landscape", {"network": NET, "dataset": SYNTH})[0] == 2
    # more samples than skip units: rank deficient -> numerical failure
    code, _ = run(tmp_path, "escape-path", {"network": NET, "dataset": {"synth": {"n": 12, "d": 3, "m": 2}}})
    assert code == 3
    cfg = {"network": NET, "dataset": SYNTH,
           "sgd": {"epochs": 50, "lr0": 1e6, "batch_size": 6, "freeze_hidden": True}, "loss": "square"}
    code, out = run(tmp_path, "train-sgd", cfg, "--seed", "0")
    assert code == 3 and "history" in out


def test_module_entry_point_stdin():
    cfg = json.dumps({"network": NET})
    proc = subprocess.run([sys.executable, "-m", "novalley", "validate", "-"], input=cfg,
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["validation"]["ok"]
