
import mpmath
import numpy as np
import pytest

from novalley import engine
from novalley import netgraph as ng
from novalley import solvers
from novalley.data import Dataset, synth_dataset
from novalley.engine import layout
from novalley.errors import DivergenceError, RankDeficientError, ValidationError
from novalley.linalg import default_rank_tol
from novalley.solvers import SgdConfig


def truncated_variance_factor(k=2):
    """Var of N(0,1) conditioned on |z| <= k."""
    with mpmath.workdps(30):
        k = mpmath.mpf(k)
        pdf = mpmath.npdf(k)
        mass = mpmath.erf(k / mpmath.sqrt(2))
        return float(1 - 2 * k * pdf / mass)


# ------------------------------------------------------------------- init

def test_truncated_normal_moments():
    factor = truncated_variance_factor()
    assert factor == pytest.approx(0.774, abs=1e-3)
    rng = np.random.default_rng(0)
    std = np.sqrt(2.0 / 50)
    draws = solvers.truncated_normal(rng, std, 100_000)
    assert np.max(np.abs(draws)) <= 2 * std
    ratio = draws.var() / std ** 2
    assert 0.7 <= ratio <= 0.8
    assert ratio == pytest.approx(factor, abs=0.01)


def test_init_layout_and_determinism():
    spec = ng.mlp(6, [5, 4], 3, skip_set="all")
    a = solvers.init_truncated_gaussian(spec, 11)
    b = solvers.init_truncated_gaussian(spec, 11)
    lay = layout(spec)
    assert np.array_equal(lay.pack(a), lay.pack(b))
    assert np.all(a.biases == 0) and np.all(a.V == 0)
    for key, (_, fan) in lay.slots.items():
        assert np.max(np.abs(a.weights[key])) <= 2 * np.sqrt(2.0 / fan)


# ------------------------------------------------------------------- rand fit

def test_rand_fit_square_system():
    spec = ng.mlp(4, [10], 3, skip_set="all")
    ds = synth_dataset(10, 4, 3, seed=1)
    fit = solvers.random_feature_fit(spec, ds, seed=1)
    assert fit.effective_rank == 10 and not fit.rank_deficient
    assert fit.residual_norm <= default_rank_tol((10, 10)) * np.linalg.norm(ds.Y)
    assert fit.report.misclassified == 0
    again = solvers.random_feature_fit(spec, ds, seed=1)
    assert again.report == fit.report
    assert np.array_equal(again.params.V, fit.params.V)


def test_rand_fit_contradictory_samples():
    spec = ng.mlp(3, [8], 2, skip_set="all")
    X = np.random.default_rng(0).standard_normal((4, 3))
    X[3] = X[0]
    ds = Dataset(X, [0, 1, 0, 1], 2)
    with pytest.warns(solvers.RankDeficiencyWarning):
        fit = solvers.random_feature_fit(spec, ds, seed=0)
    assert fit.rank_deficient and fit.residual_norm > 1e-3
    assert fit.report.misclassified >= 1


def test_rand_fit_wrong_classes():
    with pytest.raises(ValidationError):
        solvers.random_feature_fit(ng.mlp(3, [8], 3, skip_set="all"), synth_dataset(4, 3, 2, seed=0))


# ------------------------------------------------------------------- SGD

def test_sgd_config_validation():
    with pytest.raises(ValidationError):
        SgdConfig(milestones=(0.75, 0.5))
    with pytest.raises(ValidationError):
        SgdConfig(momentum=1.0)
    with pytest.raises(ValidationError):
        SgdConfig(milestones=(1.0,))
    cfg = SgdConfig(epochs=8, lr0=1.0)
    assert [cfg.lr_at(e) for e in range(8)] == [1, 1, 1, 1, 0.1, 0.1, 0.01, 0.01]
    assert SgdConfig.from_json({"epochs": 3, "unknown": 1}).epochs == 3


def test_sgd_zero_lr_keeps_params():
    spec = ng.mlp(3, [4], 2, skip_set="all")
    ds = synth_dataset(10, 3, 2, seed=0)
    p0 = solvers.init_truncated_gaussian(spec, 0)
    p0.V[:] = 0.3
    params, history = solvers.sgd_train(spec, ds, p0, SgdConfig(epochs=5, lr0=0.0, batch_size=3, seed=0))
    assert np.array_equal(layout(spec).pack(params), layout(spec).pack(p0))
    assert len(history) == 6 and history[0]["epoch"] == 0


def one_unit_problem():
    spec = ng.mlp(1, [1], 1, activation=ng.SIGMOID, skip_set="all")
    X = np.array([[-1.0], [0.0], [1.0], [2.0]])
    Y = np.array([[0.3], [1.0], [-0.5], [0.8]])
    params = layout(spec).zeros()
    params.weights["n2"][:] = 0.7
    params.biases[:] = 0.1
    return spec, Dataset(X, np.zeros(4, dtype=int), 1), Y, params


def test_sgd_linear_quadratic_converges(monkeypatch):
    spec, ds, Y, params = one_unit_problem()
    P = engine.psi(spec, params, ds).values
    v_opt = (P[:, 0] @ Y[:, 0]) / (P[:, 0] @ P[:, 0])
    # square loss with explicit targets: route them in through the one-hot hook
    monkeypatch.setattr(Dataset, "Y", property(lambda self: Y))
    cfg = SgdConfig(epochs=500, batch_size=4, lr0=0.5 / (P[:, 0] @ P[:, 0]), momentum=0.9,
                    freeze_hidden=True, seed=0)
    out, history = solvers.sgd_train(spec, ds, params, cfg, "square")
    assert abs(out.V[0, 0] - v_opt) <= 1e-6
    assert out.weights["n2"][0] == 0.7


def test_sgd_full_batch_monotone(rng):
    spec = ng.mlp(3, [6], 2, skip_set="all")
    ds = synth_dataset(12, 3, 2, seed=3)
    p0 = solvers.init_truncated_gaussian(spec, 3)
    P = engine.psi(spec, p0, ds).values
    L = np.linalg.eigvalsh(P.T @ P).max()
    cfg = SgdConfig(epochs=40, batch_size=12, lr0=0.9 / L, momentum=0.0, freeze_hidden=True, seed=0)
    _, history = solvers.sgd_train(spec, ds, p0, cfg, "square")
    values = [h["loss"] for h in history]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[-1] < values[0]


def test_sgd_divergence():
    spec = ng.mlp(3, [6], 2, skip_set="all")
    ds = synth_dataset(12, 3, 2, seed=3)
    with pytest.raises(DivergenceError) as exc:
        solvers.sgd_train(spec, ds, None, SgdConfig(epochs=200, lr0=1e6, batch_size=12, freeze_hidden=True, seed=0), "square")
    assert len(exc.value.history) >= 1


def test_sgd_reduces_cross_entropy():
    spec = ng.mlp(4, [16], 3, skip_set="all")
    ds = synth_dataset(30, 4, 3, seed=5)
    _, history = solvers.sgd_train(spec, ds, None, SgdConfig(epochs=30, lr0=0.1, batch_size=8, seed=5))
    assert history[-1]["loss"] < history[0]["loss"]
    a = solvers.sgd_train(spec, ds, None, SgdConfig(epochs=3, lr0=0.1, batch_size=8, seed=5))[1]
    b = solvers.sgd_train(spec, ds, None, SgdConfig(epochs=3, lr0=0.1, batch_size=8, seed=5))[1]
    assert a == b


# ------------------------------------------------------------------- escape path

def test_t_star_value():
    with mpmath.workdps(40):
        ref = float(mpmath.log(9 / (mpmath.exp(mpmath.mpf("0.1")) - 1)))
    assert solvers.t_star(0.2, 10) == pytest.approx(ref, rel=1e-14)
    # 4.44939..., i.e. about 4.449
    assert solvers.t_star(0.2, 10) == pytest.approx(4.4494, abs=1e-4)


def escape_setup(seed, N=20, m=10):
    spec = ng.mlp(5, [30], m, skip_set="all")
    ds = synth_dataset(N, 5, m, seed=seed)
    params = solvers.init_truncated_gaussian(spec, seed)
    params.V = np.random.default_rng(seed).standard_normal(params.V.shape)
    return spec, ds, params


def test_escape_path_properties():
    spec, ds, params = escape_setup(0)
    rep = solvers.escape_path(spec, params, ds, 0.2)
    assert len(rep.lambdas) == 101 and rep.lambdas[0] == 0.0 and rep.lambdas[-1] == 1.0
    assert rep.end_loss == pytest.approx(0.1, rel=1e-6)
    assert rep.losses[-1] == rep.start_loss
    assert rep.all_ok
    assert set(rep.to_json()) >= {"lambdas", "losses", "t_star", "bound_ok"}


def test_escape_path_start_below_target():
    spec, ds, params = escape_setup(1)
    rep = solvers.escape_path(spec, params, ds, 0.2)
    params.V = 2.0 * rep.V_star
    low = solvers.escape_path(spec, params, ds, 0.2)
    assert low.start_loss < 0.1 and low.all_ok


def test_escape_path_rank_deficient():
    spec, ds, params = escape_setup(2)
    X = ds.X.copy()
    X[4] = X[3]
    with pytest.raises(RankDeficientError):
        solvers.escape_path(spec, params, Dataset(X, ds.y, ds.m), 0.2)
    with pytest.raises(ValidationError):
        solvers.escape_path(spec, params, ds, -1.0)
