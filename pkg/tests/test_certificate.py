import itertools
import math

import numpy as np
import pytest

from novalley import certificate as cert
from novalley import engine
from novalley import netgraph as ng
from novalley.certificate import CertificateConfig
from novalley.data import Dataset, synth_dataset
from novalley.errors import AssumptionError, DegenerateDataError
from novalley.linalg import numerical_rank
from novalley.solvers import init_truncated_gaussian

SIG0 = 0.5


def random_dense(rng, act=ng.SIGMOID):
    d = int(rng.integers(2, 6))
    widths = [int(w) for w in rng.integers(2, 7, int(rng.integers(1, 4)))]
    return ng.mlp(d, widths, 2, activation=act, skip_set="all")


def leading_block(spec, ds, report, params):
    P = engine.psi(spec, params, ds.X[:report.n]).values
    cols = [spec.skip_set.index(p) for p in sorted(spec.skip_set, key=lambda p: (spec.neuron(p).layer, p))][:report.n]
    return P[np.asarray(report.permutation)][:, np.asarray(cols)]


def test_epsilon_formula():
    spec = ng.mlp(2, [3], 2, skip_set="all")
    assert cert.epsilon_for(spec, (3, 4, 5), CertificateConfig()) == pytest.approx(1 / 96, rel=1e-15)
    assert cert.epsilon_for(spec, (3, 4, 5), CertificateConfig()) == pytest.approx(0.0104167, abs=1e-7)
    assert cert.epsilon_for(spec, (3, 4, 5), CertificateConfig(epsilon_override=0.01)) == 0.01
    big = ng.mlp(2, [9], 2, skip_set="all")
    assert cert.epsilon_for(big, tuple(range(3, 12)), CertificateConfig()) == pytest.approx(1e-6 * 0.5 ** 9)


def test_single_sample():
    spec = ng.mlp(2, [3], 2, skip_set="all")
    ds = synth_dataset(2, 2, 2, seed=0)
    rep, params = cert.certify(spec, ds, seed=0, n=1)
    assert rep.passed and rep.bound == 0.25
    assert rep.det_value == pytest.approx(SIG0, abs=1e-12)
    assert all(a == 1.0 for a in rep.alphas.values())


def test_two_samples_cofactor():
    spec = ng.mlp(3, [4], 2, skip_set="all")
    ds = synth_dataset(2, 3, 2, seed=1)
    rep, params = cert.certify(spec, ds, seed=1)
    assert rep.bound == 0.125
    B = leading_block(spec, ds, rep, params)
    assert abs(B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]) >= 0.125
    assert rep.det_value == pytest.approx(B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0], rel=1e-12)


def test_chain_diagonal_exact():
    spec = ng.mlp(2, [1, 1], 2, skip_set="all")
    ds = synth_dataset(2, 2, 2, seed=4)
    rep, params = cert.certify(spec, ds, seed=4)
    B = leading_block(spec, ds, rep, params)
    np.testing.assert_allclose(np.diag(B), SIG0, atol=1e-12)
    assert rep.passed


@pytest.mark.parametrize("scope", ["layer", "group"])
def test_shared_pair_equal_alpha(scope):
    b = ng.NetworkBuilder(4)
    first = b.dense(3, activation=ng.SIGMOID)
    pair = b.conv1d(2, 1, activation=ng.SIGMOID)   # two units sharing one kernel on layer 2
    spec = b.build(2, skip_set=first + pair)
    assert len({spec.by_id[p].sharing_group for p in pair}) == 1
    ds = synth_dataset(5, 4, 2, seed=2)
    rep, params = cert.certify(spec, ds, CertificateConfig(alpha_scope=scope), seed=2)
    assert rep.alphas[pair[0]] == rep.alphas[pair[1]]
    # sharing preserved: one stored vector for the whole group
    assert sum(1 for k in params.weights if k.startswith("g:")) == 1


def test_layer_scope_equal_per_layer():
    spec = ng.mlp(3, [3, 3], 2, skip_set="all")
    ds = synth_dataset(5, 3, 2, seed=7)
    rep, _ = cert.certify(spec, ds, CertificateConfig(alpha_scope="layer"), seed=7)
    for layer in (1, 2):
        assert len({rep.alphas[n.id] for n in spec.hidden if n.layer == layer}) == 1


def greedy_ok(values, perm):
    used = set()
    for j, i in enumerate(perm):
        free = [k for k in range(values.shape[1]) if k not in used]
        if values[j, i] != max(values[j, k] for k in free):
            return False
        used.add(i)
    return True


def test_ordering_bruteforce(rng):
    assert cert.ordering_permutation(np.tile([3.0, 2.0, 1.0], (3, 1))) == [0, 1, 2]
    assert cert.ordering_permutation([[0.7]]) == [0]
    for _ in range(30):
        values = rng.standard_normal((3, 3))
        ok = [list(p) for p in itertools.permutations(range(3)) if greedy_ok(values, p)]
        assert ok == [cert.ordering_permutation(values)]
    with pytest.raises(DegenerateDataError):
        cert.ordering_permutation([[1.0, 1.0], [0.0, 2.0]])


def test_random_weights_full_rank():
    spec = ng.mlp(5, [10], 2, skip_set="all")
    ds = synth_dataset(8, 5, 2, seed=0)
    full = sum(numerical_rank(engine.psi(spec, init_truncated_gaussian(spec, s), ds).values[:, :8]) == 8
               for s in range(100))
    assert full >= 99


def test_duplicate_sample_rank_drops():
    spec = ng.mlp(5, [10], 2, skip_set="all")
    ds = synth_dataset(8, 5, 2, seed=0)
    X = ds.X.copy()
    X[5] = X[2]
    P = engine.psi(spec, init_truncated_gaussian(spec, 3), X).values
    assert numerical_rank(P[:, :8]) <= 7
    with pytest.raises(DegenerateDataError):
        cert.certify(spec, Dataset(X, ds.y, 2), seed=0)


def test_pipeline_random_dense_nets():
    rng = np.random.default_rng(2024)
    for seed in range(50):
        spec = random_dense(rng)
        n = int(rng.integers(2, min(8, spec.H) + 1))
        ds = synth_dataset(max(n, 2), spec.d, 2, seed=seed)
        rep, params = cert.certify(spec, ds, CertificateConfig(alpha_scope="group"), seed=seed, n=n)
        assert rep.passed, (seed, rep.message)
        assert rep.diag_max_dev <= 1e-12
        assert rep.lower_max <= rep.epsilon + 1e-12
        assert abs(rep.det_value) >= 0.5 * SIG0 ** n * (1 - 1e-6)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_softplus_doubling(n):
    spec = ng.mlp(3, [6, 3], 2, activation=ng.softplus(1.0), skip_set="all")
    ds = synth_dataset(n, 3, 2, seed=n)
    rep, _ = cert.certify(spec, ds, seed=n)
    target = math.log(2.0) ** n
    assert rep.branch == "softplus" and rep.doublings >= 0
    assert abs(rep.det_value - target) <= 0.5 * target
    assert rep.passed


def test_softplus_without_path_rejected():
    # a skip unit whose only upward route leaves the skip set is fine; one with no
    # backward path to a distinct first-layer unit is not
    spec = ng.mlp(2, [1, 3], 2, activation=ng.softplus(1.0), skip_set="all")
    ds = synth_dataset(4, 2, 2, seed=0)
    with pytest.raises(AssumptionError):
        cert.certify(spec, ds, seed=0)


def test_bad_config():
    spec = ng.mlp(2, [3], 2, skip_set="all")
    ds = synth_dataset(2, 2, 2, seed=0)
    with pytest.raises(Exception):
        cert.certify(spec, ds, CertificateConfig(alpha_scope="bogus"), seed=0)


def test_report_json():
    spec = ng.mlp(2, [3], 2, skip_set="all")
    rep, _ = cert.certify(spec, synth_dataset(3, 2, 2, seed=0), seed=0)
    obj = rep.to_json()
    assert all(isinstance(k, str) for k in obj["alphas"]) and obj["passed"] is True


@pytest.mark.parametrize("n", [3, 5])
def test_softplus_doubling_two_layers(n):
    # two leading units on layer 1, the rest on layer 2 reached through non-skip layer-1 units
    base = ng.mlp(3, [6, 4], 2, activation=ng.softplus(1.0))
    layer2 = [u.id for u in base.hidden if u.layer == 2]
    spec = ng.mlp(3, [6, 4], 2, activation=ng.softplus(1.0), skip_set=[4, 5] + layer2)
    ds = synth_dataset(n, 3, 2, seed=10 + n)
    rep, _ = cert.certify(spec, ds, seed=n)
    target = math.log(2.0) ** n
    assert abs(rep.det_value - target) <= 0.5 * target and rep.passed
