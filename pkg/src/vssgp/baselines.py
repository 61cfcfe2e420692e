"""Comparison methods.

SSGP and random projections are point-mass special cases of the variational
model and reuse its bound and prediction code unchanged.  The exact GP and
the Monte Carlo evidence estimate are independent references.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, optimize
from scipy.special import logsumexp

from vssgp._rng import substream
from vssgp.bounds import BoundKind, NumericalError, jitter_cholesky
from vssgp.features import phi_matrix
from vssgp.model import TWO_PI, FixedPhases, KernelSpec, VariationalState, kernel_matrix
from vssgp.training import (
    FitConfig,
    FittedModel,
    FitTrace,
    _as_data,
    attach_optimal_coefficients,
    fit_quasi_newton,
    init_state,
)

HYPER_BLOCKS = frozenset({"weights", "lengthscales", "inverse_periods", "noise_precision"})
EXACT_GP_CAP = 2000


def point_mass_state(state: VariationalState) -> VariationalState:
    """Collapse q(w) to its mean; variational phases become fixed midpoints."""
    phases = state.phases
    if not isinstance(phases, FixedPhases):
        phases = FixedPhases(np.mod(phases.midpoints(), TWO_PI))
    return state.replace(freq_vars=np.zeros_like(state.freq_vars), phases=phases)


def _baseline_config(config: FitConfig, extra_frozen):
    return replace(config, bound=BoundKind.OPTIMAL, include_kl_freq=False,
                   frozen=config.frozen | frozenset(extra_frozen))


def fit_ssgp(data, spec: KernelSpec, K, config: FitConfig, tau=10.0) -> FittedModel:
    """Sparse spectrum GP: frequencies optimised as parameters.

    Frequency variances are fixed at zero, phases are fixed random draws and
    the frequency KL is dropped, leaving the finite-basis GP marginal
    likelihood.
    """
    data = _as_data(data)
    init = point_mass_state(init_state(data, spec, K, config.seed, tau))
    cfg = _baseline_config(config, {"freq_vars"})
    state, spec_out, trace = fit_quasi_newton(data, init, spec, cfg)
    state, solve = attach_optimal_coefficients(data, state, spec_out)
    return FittedModel(state, spec_out, BoundKind.OPTIMAL, trace, solve, name="ssgp")


def fit_random_projections(data, spec: KernelSpec, K, config: FitConfig, optimize_hypers=False,
                           tau=10.0) -> FittedModel:
    """Random projections: prior frequency draws held fixed.

    Coefficients come from the closed-form solve.  With ``optimize_hypers``
    the kernel hyperparameters and noise precision are tuned on the same
    objective as SSGP; otherwise no iterations run.
    """
    data = _as_data(data)
    init = point_mass_state(init_state(data, spec, K, config.seed, tau))
    trace = FitTrace()
    if optimize_hypers:
        cfg = _baseline_config(config, {"inducing_inputs", "freq_means", "freq_vars"})
        init, spec, trace = fit_quasi_newton(data, init, spec, cfg)
    state, solve = attach_optimal_coefficients(data, init, spec)
    return FittedModel(state, spec, BoundKind.OPTIMAL, trace, solve, name="rp")


@dataclass(frozen=True)
class ExactGP:
    """Full GP regression with the spectral mixture kernel."""

    X: np.ndarray
    Y: np.ndarray
    spec: KernelSpec
    noise_precision: float
    chol: np.ndarray
    alpha: np.ndarray
    log_marginal: float

    def predict(self, Xs):
        """Posterior predictive means (n, D) and variances (n,), noise included."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        Ks = kernel_matrix(self.spec, Xs, self.X)
        mean = Ks @ self.alpha
        v = linalg.solve_triangular(self.chol, Ks.T, lower=True)
        prior = np.sum(self.spec.weights)  # k(x, x) for the spectral mixture
        var = prior - np.sum(v * v, axis=0) + 1.0 / self.noise_precision
        return mean, var


def exact_gp(data, spec: KernelSpec, tau, cap=EXACT_GP_CAP) -> ExactGP:
    X, Y = _as_data(data)
    N, D = Y.shape
    if N > cap:
        raise ValueError(f"exact GP limited to N <= {cap}, got {N}")
    Kxx = kernel_matrix(spec, X, X) + np.eye(N) / tau
    R, _ = jitter_cholesky(Kxx)
    alpha = linalg.cho_solve((R, True), Y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(R))))
    lml = -0.5 * float(np.sum(Y * alpha)) - 0.5 * D * logdet - 0.5 * N * D * math.log(TWO_PI)
    return ExactGP(X, Y, spec, float(tau), R, alpha, lml)


def fit_exact_gp(data, spec: KernelSpec, tau, max_iters=100, cap=EXACT_GP_CAP) -> ExactGP:
    """Exact GP with hyperparameters tuned on the log marginal likelihood.

    Optimises log weights, log lengthscales, non-zero inverse periods and
    log tau with L-BFGS-B on finite-difference gradients.
    """
    X, Y = _as_data(data)
    period_mask = spec.inverse_periods > 0

    def unpack(theta):
        L, Q = spec.L, spec.Q
        w = np.exp(theta[:L])
        ls = np.exp(theta[L:L + L * Q]).reshape(L, Q)
        ip = spec.inverse_periods.copy()
        n_ip = int(period_mask.sum())
        ip[period_mask] = np.exp(theta[L + L * Q:L + L * Q + n_ip])
        return KernelSpec.from_arrays(w, ls, ip), math.exp(theta[-1])

    def neg_lml(theta):
        try:
            s, t = unpack(theta)
            return -exact_gp((X, Y), s, t, cap).log_marginal
        except (NumericalError, ValueError, OverflowError):
            return 1e300

    theta0 = np.concatenate([np.log(spec.weights), np.log(spec.lengthscales).ravel(),
                             np.log(spec.inverse_periods[period_mask]), [math.log(tau)]])
    res = optimize.minimize(neg_lml, theta0, method="L-BFGS-B",
                            bounds=[(-12.0, 12.0)] * theta0.size, options={"maxiter": max_iters})
    s, t = unpack(res.x)
    return exact_gp((X, Y), s, t, cap)


def mc_log_evidence(data, spec: KernelSpec, state_prior: VariationalState, n_samples, seed=0,
                    chunk=4096):
    """Monte Carlo estimate of log p(Y | X) for the random-feature model.

    Frequencies are drawn from the standard normal prior; phases from
    Unif(0, 2pi) when ``state_prior`` has variational phases, otherwise its
    fixed phases are used.  Inducing inputs and noise precision come from
    ``state_prior``.  Returns ``(estimate, std_err)`` with the standard error
    from the delta method on the mean of the likelihoods.
    """
    X, Y = _as_data(data)
    N, D = Y.shape
    LK, Q = state_prior.LK, state_prior.Q
    tau = state_prior.noise_precision
    z = state_prior.inducing_inputs
    rng = substream(seed, "mc-evidence")
    yy = float(np.sum(Y * Y))
    logs = np.empty(int(n_samples))
    for lo in range(0, int(n_samples), chunk):
        S = min(chunk, int(n_samples) - lo)
        w = rng.standard_normal((S, LK, Q))
        if state_prior.variational_phases:
            b = rng.uniform(0.0, TWO_PI, size=(S, LK))
        else:
            b = np.broadcast_to(state_prior.phases.b, (S, LK))
        Phi = phi_matrix(X, w, b, z, spec)
        if N <= LK:
            C = np.einsum("snk,smk->snm", Phi, Phi) + np.eye(N) / tau
            R = np.linalg.cholesky(C)
            sol = np.linalg.solve(R, np.broadcast_to(Y, (S, N, D)))
            quad = np.sum(sol * sol, axis=(1, 2))
            logdet_C = 2.0 * np.sum(np.log(np.diagonal(R, axis1=1, axis2=2)), axis=1)
        else:
            A = np.eye(LK) + tau * np.einsum("snk,snl->skl", Phi, Phi)
            R = np.linalg.cholesky(A)
            sol = np.linalg.solve(R, np.einsum("snk,nd->skd", Phi, Y))
            logdet_A = 2.0 * np.sum(np.log(np.diagonal(R, axis1=1, axis2=2)), axis=1)
            # Woodbury: (Phi Phi^T + I/tau)^-1 = tau I - tau^2 Phi A^-1 Phi^T
            quad = tau * yy - tau**2 * np.sum(sol * sol, axis=(1, 2))
            logdet_C = -N * math.log(tau) + logdet_A
        logs[lo:lo + S] = -0.5 * N * D * math.log(TWO_PI) - 0.5 * D * logdet_C - 0.5 * quad
    n = logs.size
    estimate = float(logsumexp(logs) - math.log(n))
    ratios = np.exp(logs - logs.max())
    mean = ratios.mean()
    std_err = float(ratios.std(ddof=1) / math.sqrt(n) / mean) if n > 1 else math.inf
    return estimate, std_err
