"""Independent numerical checks of the closed forms.

Each check recomputes a quantity by a different route (Monte Carlo,
adaptive quadrature, finite differences, dense linear algebra, exhaustive
enumeration) and compares it with the library.  They back the
``oracle-check`` command and the acceptance tests.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg

from vssgp._rng import substream
from vssgp.baselines import mc_log_evidence
from vssgp.bounds import (
    BoundKind,
    elbo_factorised,
    elbo_optimal,
    elbo_stochastic,
    solve_optimal_coefficients,
)
from vssgp.features import (
    expected_cos_gaussian,
    expected_cos_sq_gaussian,
    expected_cos_uniform_phase,
    feature_moments,
    phi_matrix,
)
from vssgp.model import TWO_PI, FixedPhases, KernelSpec, Layout, VariationalPhases, VariationalState, kernel_exact
from vssgp.predict import predict_moments, predictive_variance
from vssgp.training import FitConfig, bound_and_gradient, fit_quasi_newton


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn, *args, **kwargs):
    t0 = time.perf_counter()
    passed, detail = fn(*args, **kwargs)
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------


def random_spec(rng, L, Q, periodic=True):
    """Random spectral mixture; periodic components get one non-zero inverse period."""
    weights = rng.uniform(0.5, 2.0, size=L)
    ls = rng.uniform(0.5, 2.0, size=(L, Q))
    ip = np.zeros((L, Q))
    if periodic:
        for i in range(L):
            if i % 2 == 0:
                ip[i, rng.integers(Q)] = rng.uniform(0.1, 0.6)
    return KernelSpec.from_arrays(weights, ls, ip)


def random_state(rng, N_or_X, Q, K, L, D, variational_phases=False, freq_var=(0.05, 0.5),
                 tau=None):
    """Random posterior with inducing inputs scattered over the data range."""
    LK = K * L
    if np.ndim(N_or_X) == 0:
        z = rng.uniform(-1.0, 1.0, size=(LK, Q))
    else:
        X = np.asarray(N_or_X)
        z = X[rng.integers(X.shape[0], size=LK)] + 0.1 * rng.standard_normal((LK, Q))
    if variational_phases:
        a = rng.uniform(0.0, 2.0, size=LK)
        phases = VariationalPhases(a, a + rng.uniform(0.3, TWO_PI - 2.0 - 0.1, size=LK))
    else:
        phases = FixedPhases(rng.uniform(0.0, TWO_PI, size=LK))
    return VariationalState(
        inducing_inputs=z,
        freq_means=rng.standard_normal((LK, Q)),
        freq_vars=rng.uniform(*freq_var, size=(LK, Q)),
        phases=phases,
        coeff_means=0.5 * rng.standard_normal((LK, D)),
        coeff_vars=rng.uniform(0.1, 1.0, size=(LK, D)),
        noise_precision=float(rng.uniform(2.0, 10.0) if tau is None else tau),
    )


def random_data(rng, N, Q, D):
    X = rng.uniform(-1.5, 1.5, size=(N, Q))
    Y = np.sin(2.0 * X.sum(axis=1, keepdims=True) + np.arange(D)) + 0.1 * rng.standard_normal((N, D))
    return X, Y


# ---------------------------------------------------------------------------
# Identities
# ---------------------------------------------------------------------------


def _mc_mean(samples):
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


def _quad(f, a, b):
    with warnings.catch_warnings():
        # round-off notices near machine precision are expected here
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-14, limit=200)
    return val


def check_identities(n_draws=100, n_samples=10**6, seed=0, n_se=3.0):
    """Gaussian cosine moments against Monte Carlo, the uniform-phase
    expectation against adaptive quadrature."""
    rng = substream(seed, "oracle-identities")
    worst_z, worst_q, failures = 0.0, 0.0, 0
    for _ in range(n_draws):
        Q = int(rng.integers(1, 4))
        mu = rng.normal(0.0, 1.0, Q)
        sig = rng.uniform(0.0, 1.0, Q)
        xbar = rng.normal(0.0, 1.0, Q)
        bbar = rng.uniform(0.0, TWO_PI)
        w = mu + np.sqrt(sig) * rng.standard_normal((n_samples, Q))
        arg = w @ xbar + bbar
        cos = np.cos(arg)
        for sample, closed in ((cos, expected_cos_gaussian(mu, sig, xbar, bbar)),
                               (cos * cos, expected_cos_sq_gaussian(mu, sig, xbar, bbar))):
            mean, se = _mc_mean(sample)
            z = abs(mean - closed) / se
            worst_z = max(worst_z, z)
            failures += z > n_se
        c = rng.uniform(-5.0, 5.0)
        alpha = rng.uniform(0.0, TWO_PI)
        beta = rng.uniform(alpha, TWO_PI)
        if beta - alpha < 1e-12:
            ref = math.cos(c + alpha)
        else:
            ref = _quad(lambda b: math.cos(c + b), alpha, beta) / (beta - alpha)
        err = abs(float(expected_cos_uniform_phase(c, alpha, beta)) - ref)
        worst_q = max(worst_q, err)
        failures += err > 1e-10
    return failures == 0, (f"{n_draws} draws: worst MC deviation {worst_z:.2f} SE, "
                           f"worst quadrature error {worst_q:.1e}, {failures} failures")


def check_phase_average(n_draws=100, seed=0, tol=1e-10):
    """Averaging 2 cos(x+b) cos(y+b) over a uniform phase gives cos(x-y)."""
    rng = substream(seed, "oracle-phase-average")
    worst = 0.0
    for _ in range(n_draws):
        x, y = rng.uniform(-10.0, 10.0, size=2)
        val = _quad(lambda b: 2.0 * math.cos(x + b) * math.cos(y + b), 0.0, TWO_PI)
        worst = max(worst, abs(val / TWO_PI - math.cos(x - y)))
    return worst <= tol, f"{n_draws} pairs: worst error {worst:.1e} (tol {tol:g})"


def check_kernel_convergence(n_samples=10**5, K=4, seed=0, n_se=3.0, chunk=10_000):
    """Feature inner products under prior draws average to the kernel."""
    rng = substream(seed, "oracle-kernel")
    L, Q = 2, 2
    spec = random_spec(rng, L, Q)
    z = rng.uniform(-1.0, 1.0, size=(L * K, Q))
    x, y = rng.uniform(-1.0, 1.0, size=(2, Q))
    prods = np.empty(n_samples)
    for lo in range(0, n_samples, chunk):
        S = min(chunk, n_samples - lo)
        w = rng.standard_normal((S, L * K, Q))
        b = rng.uniform(0.0, TWO_PI, size=(S, L * K))
        P = phi_matrix(np.stack([x, y]), w, b, z, spec)
        prods[lo:lo + S] = np.sum(P[:, 0, :] * P[:, 1, :], axis=1)
    mean, se = _mc_mean(prods)
    exact = kernel_exact(spec, x, y)
    z_score = abs(mean - exact) / se
    return z_score <= n_se, f"MC {mean:.5f} vs kernel {exact:.5f}: {z_score:.2f} SE"


# ---------------------------------------------------------------------------
# Bounds and gradients
# ---------------------------------------------------------------------------


def finite_difference_gradient(fun, v, h=1e-5):
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (fun(v + e) - fun(v - e)) / (2.0 * h)
    return g


def gradient_errors(X, Y, state, spec, bound: BoundKind, h=1e-5):
    """Relative error per parameter block between analytic and central-difference gradients."""
    config = FitConfig(bound=bound)
    layout = Layout(state, spec, config.effective_frozen())
    v = layout.pack(state, spec)
    _, g = bound_and_gradient(v, (X, Y), config, layout)
    g_fd = finite_difference_gradient(lambda u: bound_and_gradient(u, (X, Y), config, layout)[0], v, h)
    out = {}
    for name, sl in layout.slices.items():
        scale = max(np.linalg.norm(g_fd[sl]), np.linalg.norm(g[sl]), 1e-6)
        out[name] = float(np.linalg.norm(g[sl] - g_fd[sl]) / scale)
    return out


def check_gradients(n_draws=20, seed=0, tol=1e-4, N=10, Q=2, K=3, L=2, D=2):
    rng = substream(seed, "oracle-gradients")
    worst, worst_where = 0.0, ""
    for draw in range(n_draws):
        X, Y = random_data(rng, N, Q, D)
        spec = random_spec(rng, L, Q)
        state = random_state(rng, X, Q, K, L, D, variational_phases=bool(draw % 2))
        for bound in (BoundKind.FACTORISED, BoundKind.OPTIMAL):
            for name, err in gradient_errors(X, Y, state, spec, bound).items():
                if err > worst:
                    worst, worst_where = err, f"{bound.value}/{name}"
    return worst < tol, f"{n_draws} draws x 2 bounds: worst block error {worst:.1e} at {worst_where}"


def check_bound_ordering(n_draws=100, seed=0, tol=1e-8):
    rng = substream(seed, "oracle-ordering")
    X, Y = random_data(rng, 12, 2, 2)
    spec = random_spec(rng, 2, 2)
    state = random_state(rng, X, 2, 3, 2, 2)
    opt = elbo_optimal(X, Y, state, spec)
    solve = solve_optimal_coefficients(feature_moments(X, state, spec), Y, state.noise_precision)
    s_opt = np.repeat(np.diag(solve.coeff_cov)[:, None], Y.shape[1], axis=1)
    worst_gap = -math.inf
    for i in range(n_draws):
        # half the draws sit close to the optimum, where the gap is smallest
        spread = 0.05 if i % 2 else 1.0
        s = s_opt * np.exp(spread * rng.standard_normal(s_opt.shape))
        m = solve.means + 0.1 * spread * rng.standard_normal(solve.means.shape)
        fac = elbo_factorised(X, Y, state.replace(coeff_means=m, coeff_vars=s), spec)
        worst_gap = max(worst_gap, fac - opt)
    # one feature: the diagonal posterior is the full optimum
    spec1 = random_spec(rng, 1, 2)
    state1 = random_state(rng, X, 2, 1, 1, 2)
    solve1 = solve_optimal_coefficients(feature_moments(X, state1, spec1), Y, state1.noise_precision)
    at_opt = state1.replace(coeff_means=solve1.means,
                            coeff_vars=np.repeat(solve1.coeff_cov, Y.shape[1], axis=1))
    eq_err = abs(elbo_factorised(X, Y, at_opt, spec1) - elbo_optimal(X, Y, state1, spec1))
    ok = worst_gap <= tol and eq_err <= tol
    return ok, f"max(factorised - optimal) = {worst_gap:.2e}; LK=1 equality error {eq_err:.1e}"


def gaussian_log_marginal_woodbury(Phi, Y, tau):
    """log N(Y; 0, Phi Phi^T + I/tau) via the Woodbury identity and determinant lemma."""
    N, M = Phi.shape
    D = Y.shape[1]
    A = np.eye(M) + tau * Phi.T @ Phi
    R = linalg.cholesky(A, lower=True)
    u = linalg.solve_triangular(R, Phi.T @ Y, lower=True)
    quad = tau * float(np.sum(Y * Y)) - tau**2 * float(np.sum(u * u))
    logdet = -N * math.log(tau) + 2.0 * float(np.sum(np.log(np.diag(R))))
    return -0.5 * N * D * math.log(TWO_PI) - 0.5 * D * logdet - 0.5 * quad


def check_ssgp_recovery(N=40, K=5, seed=0, tol=1e-8):
    rng = substream(seed, "oracle-ssgp")
    X, Y = random_data(rng, N, 1, 1)
    spec = random_spec(rng, 1, 1)
    state = random_state(rng, X, 1, K, 1, 1).replace(freq_vars=np.zeros((K, 1)))
    Phi = phi_matrix(X, state.freq_means, state.phases.b, state.inducing_inputs, spec)
    ref = gaussian_log_marginal_woodbury(Phi, Y, state.noise_precision)
    val = elbo_optimal(X, Y, state, spec, include_kl_freq=False)
    err = abs(val - ref)
    return err <= tol, f"bound {val:.10f} vs Woodbury {ref:.10f}: error {err:.1e}"


def check_svi_unbiased(N=6, S=2, seed=0, tol=1e-10):
    rng = substream(seed, "oracle-svi")
    X, Y = random_data(rng, N, 2, 2)
    spec = random_spec(rng, 2, 2)
    state = random_state(rng, X, 2, 2, 2, 2)
    subsets = list(itertools.combinations(range(N), S))
    mean = math.fsum(elbo_stochastic(X, Y, state, spec, list(c)) for c in subsets) / len(subsets)
    full = elbo_factorised(X, Y, state, spec)
    err = abs(mean - full)
    return err <= tol, f"mean over {len(subsets)} batches vs full bound: error {err:.1e}"


EVIDENCE_FROZEN = frozenset({"inducing_inputs", "noise_precision", "weights", "lengthscales",
                             "inverse_periods"})


def check_bound_below_evidence(n_instances=20, n_samples=10**5, seed=0, n_se=3.0, fit_iters=100):
    rng = substream(seed, "oracle-evidence")
    worst, worst_margin = -math.inf, ""
    for i in range(n_instances):
        X, Y = random_data(rng, 8, 1, 1)
        spec = random_spec(rng, 1, 1)
        state = random_state(rng, X, 1, 2, 1, 1, variational_phases=bool(i % 2),
                             freq_var=(0.5, 1.0))
        state = state.replace(freq_means=0.3 * state.freq_means)
        if fit_iters:
            # a fitted q(w) makes the bound tight enough for the comparison to bite
            cfg = FitConfig(max_iters=fit_iters, frozen=EVIDENCE_FROZEN)
            state, _, _ = fit_quasi_newton((X, Y), state, spec, cfg)
        bound = elbo_optimal(X, Y, state, spec)
        est, se = mc_log_evidence((X, Y), spec, state, n_samples, seed=seed + i)
        excess = (bound - est) / se if se > 0 else (math.inf if bound > est else -math.inf)
        if excess > worst:
            worst, worst_margin = excess, f"bound {bound:.4f}, evidence {est:.4f} +- {se:.4f}"
    return worst <= n_se, f"{n_instances} instances: max (bound - evidence)/SE = {worst:.2f} ({worst_margin})"


def far_field_covariance(state: VariationalState, spec: KernelSpec, solve=None):
    """Predictive covariance once every expected feature has decayed.

    E[phi] -> 0 and E[phi_k^2] -> sigma_i^2 / K, leaving
    I/tau + sum_k (sigma_i^2/K) (m_k m_k^T + diag(s_k)).
    """
    K = state.LK // spec.L
    c = np.repeat(spec.weights / K, K)
    M = state.coeff_means if solve is None else solve.means
    if solve is None:
        S = np.einsum("k,kd->d", c, state.coeff_vars)
    else:
        S = np.full(state.D, float(c @ np.diag(solve.coeff_cov)))
    return np.eye(state.D) / state.noise_precision + np.einsum("k,kd,ke->de", c, M, M) + np.diag(S)


def check_predictive_limits(seed=0, tol=1e-6):
    rng = substream(seed, "oracle-predictive")
    Q, K, L, D = 2, 3, 2, 2
    spec = random_spec(rng, L, Q, periodic=False)
    state = random_state(rng, 0, Q, K, L, D)
    x_far = np.full((1, Q), 1e3)
    quad = np.min(np.sum(state.freq_vars * ((x_far - state.inducing_inputs) / spec.lengthscales.repeat(K, 0)) ** 2, 1))
    mean, var = predict_moments(x_far, state, spec)
    cov = predictive_variance(x_far[0], state, spec)
    target = far_field_covariance(state, spec)
    err = float(np.max(np.abs(cov - target)))
    mnorm = float(np.linalg.norm(mean))
    X2 = np.array([[0.1, -0.2], [0.9, 0.7]])
    diag = feature_moments(X2, state, spec).ediag.sum(axis=1)
    spread = abs(diag[0] - diag[1])
    ok = quad > 60 and err <= tol and mnorm < 1e-10 and spread > 1e-3
    return ok, (f"far-field covariance error {err:.1e}, mean norm {mnorm:.1e}, "
                f"E[phi phi^T] diagonal differs by {spread:.3f} between two inputs")


SUITE = (
    ("gaussian and uniform-phase identities", check_identities),
    ("phase average of cosine products", check_phase_average),
    ("feature inner products converge to the kernel", check_kernel_convergence),
    ("analytic gradients match finite differences", check_gradients),
    ("factorised bound never exceeds the optimal bound", check_bound_ordering),
    ("point-mass bound equals the finite-basis marginal likelihood", check_ssgp_recovery),
    ("mini-batch bound is unbiased", check_svi_unbiased),
    ("bound stays below the Monte Carlo evidence", check_bound_below_evidence),
    ("predictive far-field and non-stationarity limits", check_predictive_limits),
)


def run_suite(seed=0, quick=False, log=print):
    """Run every check; ``quick`` trims sample counts for a fast smoke run."""
    kwargs = {}
    if quick:
        kwargs = {
            "check_identities": {"n_draws": 10, "n_samples": 10**5},
            "check_kernel_convergence": {"n_samples": 2 * 10**4},
            "check_gradients": {"n_draws": 2},
            "check_bound_below_evidence": {"n_instances": 4, "n_samples": 2 * 10**4},
        }
    results = []
    for name, fn in SUITE:
        res = _timed(name, fn, seed=seed, **kwargs.get(fn.__name__, {}))
        if log is not None:
            log(res.line())
        results.append(res)
    return results
