"""Acceptance criteria 1-10, each reported as one PASS/FAIL line.

Criteria 4, 7 and 8 contain parts that do not hold for this implementation; those
parts are asserted as written and marked strict ``xfail`` so the rest of the
suite stays meaningful.  Their report lines say FAIL.
"""

import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from dope.data import ObservationTable
from dope.estimators import NuisancePair, dope_from_nuisances
from dope.oracle import GeneratorSizes, exact_functionals, generate_compliant_distribution, si_gradient_check
from dope.oracle.suites import run_suites
from dope.oracle.symmetric import SymmetricExampleSpec, symmetric_example_check
from dope.regressors.linear import fit_ols, with_intercept
from dope.regressors.logistic import fit_logistic_irls
from dope.regressors.models import OLSConfig, fit_outcome, fit_propensity
from dope.regressors.network import init_network, loss_and_gradient
from dope.simulation import COVERAGE_BETA, RmseGrid, SimConfig, run_coverage_experiment, run_rmse_experiment

pytestmark = pytest.mark.slow

# fixed before any acceptance run and not tuned afterwards
CRITERION_7_SEED = 0
CRITERION_8_SEED = 0


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


# ----------------------------------------------------------------------------- 1-3


def test_criterion_1_deletion_identity(acceptance):
    (res,), secs = _timed(run_suites, "lemma1", 500, 0)
    ok = res.max_discrepancy < 1e-10 and secs < 30
    acceptance(1, ok, f"(500 triples, max discrepancy {res.max_discrepancy:.2e} < 1e-10, {secs:.1f}s < 30s)")
    assert ok


def test_criterion_2_supplementation_identity(acceptance):
    (res,), secs = _timed(run_suites, "lemma2", 500, 0)
    parts = {k: v for k, v in res.details.items() if k != "max_mu_discrepancy"}
    ok = all(v < 1e-10 for v in parts.values()) and secs < 30
    detail = ", ".join(f"{k} {v:.2e}" for k, v in sorted(parts.items()))
    acceptance(2, ok, f"(500 triples, {detail}, each < 1e-10, {secs:.1f}s < 30s)")
    assert ok


def test_criterion_3_projection(acceptance):
    (res,), _ = _timed(run_suites, "projection", 500, 0)
    ok = res.max_discrepancy < 1e-12
    acceptance(3, ok, f"(500 pairs, max cell discrepancy {res.max_discrepancy:.2e} < 1e-12)")
    assert ok


# ----------------------------------------------------------------------------- 4


def _symmetric_rows(delta):
    return {r.quantity: r for r in symmetric_example_check(SymmetricExampleSpec(delta=delta, grid_size=101))}


def test_criterion_4_general_forms_and_reversal():
    rows = _symmetric_rows(0.1)
    for name in ("V(0) general", "V(Z) general", "V(W) general", "V(W)"):
        assert rows[name].abs_error < 1e-12
    small = _symmetric_rows(0.01)
    assert small["V(Z)"].exact_value > small["V(W)"].exact_value


@pytest.mark.xfail(strict=True, reason="stated V(0) and V(Z) forms assume v symmetric about 1/2; v(w)=w^2 is not")
def test_criterion_4_stated_closed_forms(acceptance):
    rows = _symmetric_rows(0.1)
    small = _symmetric_rows(0.01)
    errs = {name: rows[name].abs_error for name in ("V(0)", "V(Z)", "V(W)")}
    reversal = small["V(Z)"].exact_value > small["V(W)"].exact_value
    ok = all(e < 1e-12 for e in errs.values()) and reversal
    detail = ", ".join(f"{k} err {v:.3g}" for k, v in errs.items())
    acceptance(4, ok, f"({detail}; reversal at delta=0.01 "
                      f"V(Z)={small['V(Z)'].exact_value:.4f} > V(W)={small['V(W)'].exact_value:.4f}: {reversal})")
    assert ok


# ----------------------------------------------------------------------------- 5


def test_criterion_5_gradient(acceptance):
    res, secs = _timed(si_gradient_check)
    ok = res.rel_error < 1e-3 and secs < 60
    acceptance(5, ok, f"(relative error {res.rel_error:.2e} < 1e-3, {secs:.2f}s < 60s)")
    assert ok


# ----------------------------------------------------------------------------- 6


def _plug_in_variance_runs(runs=50, n=20_000):
    """Relative errors of the plug-in variance against the exact second moment
    of the influence function for a fixed cell representation."""
    dist, Z1, _ = generate_compliant_distribution("ods_pair", GeneratorSizes(2, 8, 3, 3, 8), seed=2024)
    truth = exact_functionals(dist, Z1).v[1]
    C = Z1.cells

    def representation(W):
        return np.eye(C)[Z1.cell_of[np.asarray(W[:, 0], dtype=int)]][:, 1:]

    names = tuple(f"z{j}" for j in range(C - 1))
    rel = []
    for r in range(runs):
        tab = dist.sample(n, np.random.default_rng([7, r]))
        Z = representation(tab.covariates)
        g = fit_outcome(tab.with_covariates(Z, names), OLSConfig())
        m = fit_propensity(Z, tab.treatments, 2)
        est = dope_from_nuisances(NuisancePair(representation, g, m), tab, 1)
        rel.append(est.variance().v_hat / truth - 1.0)
    return np.array(rel), truth


def _standardized_statistics(reps=500, n=2000):
    beta = np.array([1.0, 0.5, -0.5, 0.25])
    mu1 = 1.0 + 1.5 * beta.sum()

    def frozen(W):
        return (W @ beta)[:, None]

    out = []
    for r in range(reps):
        rng = np.random.default_rng([8, r])
        W = rng.uniform(size=(n, 4))
        z = W @ beta
        T = (rng.uniform(size=n) < expit(-0.6 + 1.2 * z)).astype(int)
        Y = T + 3.0 * z + rng.normal(size=n)
        tab = ObservationTable.from_arrays(T, W, Y, labels=("0", "1"))
        Z = frozen(W)
        g = fit_outcome(tab.with_covariates(Z, ("z",)), OLSConfig())
        m = fit_propensity(Z, T, 2)
        est = dope_from_nuisances(NuisancePair(frozen, g, m), tab, 1)
        out.append((est.value - mu1) / est.variance().se)
    return np.array(out)


def test_criterion_6_variance_and_normality(acceptance):
    rel, truth = _plug_in_variance_runs()
    within = int(np.sum(np.abs(rel) < 0.05))
    zs = _standardized_statistics()
    ks = stats.kstest(zs, "norm").statistic
    ok = within >= 45 and ks < 0.08
    acceptance(6, ok, f"((a) {within}/50 within 5% of V={truth:.4f}, need 45; "
                      f"(b) KS {ks:.4f} < 0.08 over 500 replicates)")
    assert ok


# ----------------------------------------------------------------------------- 7


@pytest.fixture(scope="module")
def criterion_7_rows():
    cfg = SimConfig(n=900, d=12, N=200, seed=CRITERION_7_SEED)
    t0 = time.perf_counter()
    ols, _ = run_rmse_experiment(RmseGrid((900,), ("lin",), ("reg-ols", "aipw-ols"), ("stratified",)), cfg)
    nn, _ = run_rmse_experiment(
        RmseGrid((900,), ("cbrt",), ("aipw-nn", "dope-idx", "dope-bcl"), ("stratified",)), cfg)
    secs = time.perf_counter() - t0
    return {r.method: r for r in ols + nn}, secs


def _criterion_7_parts(rows):
    return {
        "reg-ols < aipw-ols (lin)": (rows["reg-ols"], rows["aipw-ols"]),
        "dope-idx < aipw-nn (cbrt)": (rows["dope-idx"], rows["aipw-nn"]),
        "dope-bcl < aipw-nn (cbrt)": (rows["dope-bcl"], rows["aipw-nn"]),
    }


def test_criterion_7_regression_and_index(criterion_7_rows):
    rows, secs = criterion_7_rows
    assert rows["reg-ols"].sqrt_n_rmse < rows["aipw-ols"].sqrt_n_rmse
    assert rows["dope-idx"].sqrt_n_rmse < rows["aipw-nn"].sqrt_n_rmse
    assert secs < 45 * 60


@pytest.mark.xfail(strict=True, reason="DOPE-BCL has heavier-tailed errors than AIPW-NN at this seed and scale")
def test_criterion_7_orderings(criterion_7_rows, acceptance):
    rows, secs = criterion_7_rows
    results = []
    ok = secs < 45 * 60
    for name, (a, b) in _criterion_7_parts(rows).items():
        holds = a.sqrt_n_rmse < b.sqrt_n_rmse
        ok = ok and holds
        results.append(f"{name}: {a.sqrt_n_rmse:.2f}+-{a.clt_halfwidth:.2f} vs "
                       f"{b.sqrt_n_rmse:.2f}+-{b.clt_halfwidth:.2f} {'ok' if holds else 'FAILED'}")
    acceptance(7, ok, f"(seed {CRITERION_7_SEED}, N=200, n=900, sqrt(n)*RMSE; " + "; ".join(results)
               + f"; {secs / 60:.1f} min < 45 min)")
    assert ok


# ----------------------------------------------------------------------------- 8


@pytest.fixture(scope="module")
def criterion_8_rows():
    cfg = SimConfig(n=2700, d=12, link="cbrt", N=50, seed=CRITERION_8_SEED, beta=COVERAGE_BETA)
    rows, _, truth, _ = run_coverage_experiment(cfg, B=200, methods=("reg-nn", "aipw-nn", "dope-idx"),
                                                mode="joint")
    boot = {r.method: r for r in rows if r.interval_kind == "bootstrap_normal"}
    hits = {m: int(round(boot[m].coverage * boot[m].n_replicates)) for m in ("dope-idx", "reg-nn")}
    return boot, hits, truth


def test_criterion_8_index_coverage_and_length(criterion_8_rows):
    boot, hits, _ = criterion_8_rows
    assert hits["dope-idx"] >= 42
    assert boot["aipw-nn"].median_length > boot["dope-idx"].median_length


@pytest.mark.xfail(strict=True, reason="regression-NN bootstrap intervals cover 41/50 at this seed")
def test_criterion_8_coverage(criterion_8_rows, acceptance):
    boot, hits, truth = criterion_8_rows
    wider = boot["aipw-nn"].median_length > boot["dope-idx"].median_length
    ok = all(h >= 42 for h in hits.values()) and wider
    acceptance(8, ok, f"(truth {truth:.4f}; bootstrap coverage dope-idx {hits['dope-idx']}/50, "
                      f"reg-nn {hits['reg-nn']}/50, need 42; median length aipw-nn "
                      f"{boot['aipw-nn'].median_length:.4f} > dope-idx {boot['dope-idx'].median_length:.4f}: {wider})")
    assert ok


# ----------------------------------------------------------------------------- 9


def _network_fd_error():
    rng = np.random.default_rng(0)
    worst = 0.0
    for loss, joint in (("mse", False), ("mse", True), ("bce", False), ("bce", True)):
        W = rng.normal(size=(100, 12))
        t = rng.integers(0, 2, size=100).astype(float) if joint else None
        y = rng.integers(0, 2, size=100).astype(float) if loss == "bce" else rng.normal(size=100)
        net = init_network(12, joint, rng)
        net.theta = rng.normal(size=12) / 3.0
        _, grads = loss_and_gradient(net, W, y, t, loss)
        for name in grads:
            if name == "alpha" and not joint:
                continue
            base = getattr(net, name)
            flat = np.atleast_1d(np.array(base, dtype=float))
            fd = np.empty_like(flat)
            for k in range(flat.size):
                vals = []
                for sign in (1.0, -1.0):
                    trial = flat.copy()
                    trial[k] += sign * 1e-6
                    setattr(net, name, float(trial[0]) if np.ndim(base) == 0 else trial)
                    vals.append(loss_and_gradient(net, W, y, t, loss)[0])
                fd[k] = (vals[0] - vals[1]) / 2e-6
            setattr(net, name, base)
            an = np.atleast_1d(grads[name])
            scale = max(np.max(np.abs(an)), np.max(np.abs(fd)))
            worst = max(worst, float(np.max(np.abs(an - fd)) / scale))
    return worst


def _ols_orthogonality():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        X = rng.normal(size=(500, 12))
        y = X @ rng.normal(size=12) + rng.normal(size=500)
        m = fit_ols(X, y)
        worst = max(worst, float(np.max(np.abs(with_intercept(X).T @ (y - m.predict(X))))))
    return worst


def _irls_score():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        X = rng.normal(size=(500, 3))
        y = (rng.uniform(size=500) < expit(X @ rng.normal(size=3))).astype(float)
        m = fit_logistic_irls(X, y)
        assert m.converged
        worst = max(worst, m.score_norm)
    return worst


def test_criterion_9_numerics(acceptance):
    fd = _network_fd_error()
    orth = _ols_orthogonality()
    score = _irls_score()
    ok = fd < 1e-5 and orth < 1e-8 and score < 1e-8
    acceptance(9, ok, f"(backprop vs FD {fd:.2e} < 1e-5; OLS orthogonality {orth:.2e} < 1e-8; "
                      f"IRLS score {score:.2e} < 1e-8)")
    assert ok


# ----------------------------------------------------------------------------- 10


def test_criterion_10_determinism(tmp_path, acceptance):
    base = [sys.executable, "-m", "dope", "simulate", "--preset", "paper-rmse", "--N", "20",
            "--truth-draws", "100000", "--seed", "0"]
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    subprocess.run(base + ["--out-dir", str(serial)], check=True, capture_output=True)
    subprocess.run(base + ["--threads", "8", "--out-dir", str(parallel)], check=True, capture_output=True)
    same = all((serial / f).read_bytes() == (parallel / f).read_bytes() for f in ("rmse.csv", "rmse.json"))
    n_rows = len((serial / "rmse.csv").read_text().splitlines()) - 2
    acceptance(10, same, f"(paper-rmse preset with N=20, serial vs 8 threads, {n_rows} rows, "
                         f"rmse.csv and rmse.json byte-identical: {same})")
    assert same
