"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.  Every check uses
seed 0 and the full sample sizes.
"""

import csv
import time

import numpy as np
import pytest

from vssgp import oracles
from vssgp.cli import run_cli


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, detail, seconds, limit=None):
        within = limit is None or seconds < limit
        budget = "" if limit is None else f", limit {limit:.0f}s"
        line = (f"[acceptance {number:>2}] {'PASS' if passed and within else 'FAIL'}  {title}: "
                f"{detail} ({seconds:.1f}s{budget})")
        with capsys.disabled():
            print("\n" + line)
        return passed and within

    return emit


def _oracle(report, number, title, fn, limit=None, **kwargs):
    t0 = time.perf_counter()
    passed, detail = fn(seed=0, **kwargs)
    assert report(number, title, passed, detail, time.perf_counter() - t0, limit), detail


def _bench(tmp_path, name, ks, methods):
    out = tmp_path / name
    code = run_cli(["bench", "--ks", ",".join(map(str, ks)), "--seeds", "5", "--segments", "5",
                    "--seg-length", "10", "--components", "0.3:0", "--iters", "500",
                    "--methods", ",".join(methods), "--out", str(out), "--deterministic"])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


class TestAcceptance:
    def test_01_identities(self, report):
        _oracle(report, 1, "identity oracles (MC 1e6 / quadrature, 100 draws)", oracles.check_identities, 60,
                n_draws=100, n_samples=10**6)

    def test_02_phase_average(self, report):
        _oracle(report, 2, "uniform phase average of cosine products", oracles.check_phase_average,
                n_draws=100, tol=1e-10)

    def test_03_kernel_convergence(self, report):
        _oracle(report, 3, "feature inner products converge to the L=2 kernel", oracles.check_kernel_convergence,
                60, n_samples=10**5)

    def test_04_gradients(self, report):
        _oracle(report, 4, "analytic vs central-difference gradients", oracles.check_gradients, 120,
                n_draws=20, tol=1e-4, N=10, Q=2, K=3, L=2, D=2)

    def test_05_bound_ordering(self, report):
        _oracle(report, 5, "factorised bound <= optimal bound", oracles.check_bound_ordering,
                n_draws=100, tol=1e-8)

    def test_06_ssgp_recovery(self, report):
        _oracle(report, 6, "point-mass bound equals the finite-basis marginal", oracles.check_ssgp_recovery,
                N=40, K=5, tol=1e-8)

    def test_07_svi_unbiased(self, report):
        _oracle(report, 7, "mean over all mini-batches equals the full bound", oracles.check_svi_unbiased,
                N=6, S=2, tol=1e-10)

    def test_08_bound_below_evidence(self, report):
        _oracle(report, 8, "optimal bound <= Monte Carlo evidence + 3 SE", oracles.check_bound_below_evidence,
                300, n_instances=20, n_samples=10**5)

    def test_09_predictive_limits(self, report):
        _oracle(report, 9, "far-field predictive limit and non-stationarity", oracles.check_predictive_limits,
                tol=1e-6)

    def test_10_synthetic_regression(self, tmp_path, report):
        t0 = time.perf_counter()
        rows = _bench(tmp_path, "regression.csv", [20], ["vssgp", "ssgp"])
        test = {m: np.array([float(r["test_rmse"]) for r in rows if r["method"] == m]) for m in ("vssgp", "ssgp")}
        worst = float(test["vssgp"].max())
        passed = worst <= 0.2 and test["vssgp"].mean() <= test["ssgp"].mean()
        detail = (f"worst VSSGP held-out RMSE {worst:.4f} (<= 0.2); mean test RMSE VSSGP "
                  f"{test['vssgp'].mean():.4f} vs SSGP {test['ssgp'].mean():.4f} over 5 seeds")
        assert report(10, "noisy sinusoid imputation, K=20, 500 iterations", passed, detail,
                      time.perf_counter() - t0, 600), detail

    def test_11_no_overfitting_in_k(self, tmp_path, report):
        t0 = time.perf_counter()
        ks = [5, 10, 20, 40, 80]
        rows = _bench(tmp_path, "sweep.csv", ks, ["vssgp"])
        means = [float(np.mean([float(r["test_rmse"]) for r in rows if int(r["K"]) == K])) for K in ks]
        ratio = means[-1] / min(means)
        passed = ratio <= 1.2
        detail = ("mean test RMSE by K " + ", ".join(f"{K}: {m:.4f}" for K, m in zip(ks, means))
                  + f"; K=80 / min = {ratio:.3f} (<= 1.2)")
        assert report(11, "test error stable as K grows", passed, detail, time.perf_counter() - t0, 1200), detail
