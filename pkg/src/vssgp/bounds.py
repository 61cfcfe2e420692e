"""KL terms, the optimal coefficient posterior and the evidence lower bounds.

All bound functions share a private core that optionally returns adjoints:
derivatives of the bound with respect to the feature moments (``g_phi``,
``g_diag``, shaped like ``ephi``/``ediag``) and with respect to constrained
state fields.  :mod:`vssgp.training` chains these through the feature
kernels and the parameter layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import linalg

from vssgp.features import FeatureMoments, feature_moments
from vssgp.model import TWO_PI, KernelSpec, VariationalState

LOG_2PI = math.log(TWO_PI)
JITTER_SEQUENCE = (1e-10, 1e-8, 1e-6)


class NumericalError(ArithmeticError):
    """A factorisation or bound evaluation failed numerically."""


class BoundKind(str, Enum):
    OPTIMAL = "optimal"
    FACTORISED = "factorised"
    STOCHASTIC = "stochastic"


def jitter_cholesky(A):
    """Lower Cholesky factor of ``A``, adding diagonal jitter if needed.

    Tries the bare matrix first, then jitter of 1e-10, 1e-8, 1e-6 times the
    mean diagonal.  Returns ``(L, jitter)``.
    """
    A = np.asarray(A, dtype=float)
    scale = float(np.mean(np.diag(A))) if A.size else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    for jit in (0.0,) + JITTER_SEQUENCE:
        try:
            Aj = A if jit == 0.0 else A + jit * scale * np.eye(A.shape[0])
            return linalg.cholesky(Aj, lower=True, check_finite=True), jit * scale
        except (linalg.LinAlgError, ValueError):
            continue
    try:
        min_eig = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
    except np.linalg.LinAlgError:
        min_eig = float("nan")
    raise NumericalError(
        f"Cholesky failed after jitter {JITTER_SEQUENCE[-1]:g}; smallest eigenvalue ~ {min_eig:.3e}"
    )


@dataclass(frozen=True)
class CoefficientSolve:
    """Optimal q(a_d) = N(means[:, d], sigma_hat / tau) for every output d."""

    sigma_hat: np.ndarray
    means: np.ndarray
    chol: np.ndarray
    jitter: float
    noise_precision: float

    @property
    def coeff_cov(self):
        return self.sigma_hat / self.noise_precision


def _system(ephitphi, tau):
    A = ephitphi + np.eye(ephitphi.shape[0]) / tau
    return 0.5 * (A + A.T)


def solve_optimal_coefficients(moments: FeatureMoments, Y, tau) -> CoefficientSolve:
    """Closed-form coefficient posterior for fixed frequency posterior."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] != moments.ephi.shape[0]:
        raise ValueError("Y rows do not match the feature moments")
    A = _system(moments.ephitphi, tau)
    R, jit = jitter_cholesky(A)
    sigma_hat = linalg.cho_solve((R, True), np.eye(A.shape[0]))
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    means = linalg.cho_solve((R, True), moments.ephi.T @ Y)
    return CoefficientSolve(sigma_hat, means, R, jit, float(tau))


# ---------------------------------------------------------------------------
# KL terms
# ---------------------------------------------------------------------------


def kl_freq(state: VariationalState):
    """KL(q(w, b) || p(w, b)); fixed phases contribute nothing.

    Returns ``inf`` when some frequency variance (or phase width) is zero.
    """
    sig = state.freq_vars
    if np.any(sig <= 0):
        return math.inf
    mu = state.freq_means
    kl = 0.5 * float(np.sum(sig + mu * mu - 1.0 - np.log(sig)))
    if state.variational_phases:
        width = state.phases.beta - state.phases.alpha
        if np.any(width <= 0):
            return math.inf
        kl += float(np.sum(np.log(TWO_PI / width)))
    return kl


def kl_freq_grad(state: VariationalState):
    # a zero variance gives an infinite KL; the caller rejects that point
    with np.errstate(divide="ignore"):
        g_var = 0.5 * (1.0 - 1.0 / state.freq_vars)
    out = {"freq_means": state.freq_means.copy(), "freq_vars": g_var}
    if state.variational_phases:
        width = state.phases.beta - state.phases.alpha
        out["phase_alpha"] = 1.0 / width
        out["phase_beta"] = -1.0 / width
    return out


def kl_coeff(state: VariationalState):
    """KL(q(A) || N(0, I)) for diagonal coefficient posteriors."""
    s, m = state.coeff_vars, state.coeff_means
    return 0.5 * float(np.sum(s + m * m - 1.0 - np.log(s)))


def kl_coeff_grad(state: VariationalState):
    return {
        "coeff_means": state.coeff_means.copy(),
        "coeff_vars": 0.5 * (1.0 - 1.0 / state.coeff_vars),
    }


def _merge(total, part, sign=1.0):
    for k, v in part.items():
        total[k] = total[k] + sign * v if k in total else sign * np.asarray(v, dtype=float)
    return total


# ---------------------------------------------------------------------------
# Data terms
# ---------------------------------------------------------------------------


def _factorised_data(moments: FeatureMoments, Y, state: VariationalState, weight=1.0, grad=False):
    """``weight * sum_{n,d} L_nd`` and optionally its adjoints."""
    E, Ed = moments.ephi, moments.ediag
    M, S = state.coeff_means, state.coeff_vars
    tau = state.noise_precision
    N, D = Y.shape
    P = E @ M
    b = np.sum(S + M * M, axis=1)
    c = np.sum(M * M, axis=1)
    T = float(np.sum(P * P) + Ed.sum(axis=0) @ b - np.einsum("nk,nk->k", E, E) @ c)
    yy = float(np.sum(Y * Y))
    yp = float(np.sum(Y * P))
    value = weight * (-0.5 * N * D * LOG_2PI + 0.5 * N * D * math.log(tau)
                      - 0.5 * tau * yy + tau * yp - 0.5 * tau * T)
    if not grad:
        return value, None
    colsum_d = Ed.sum(axis=0)
    colsum_e2 = np.einsum("nk,nk->k", E, E)
    adj = {
        "g_phi": weight * tau * ((Y - P) @ M.T + E * c),
        "g_diag": np.broadcast_to(-0.5 * weight * tau * b, Ed.shape).copy(),
        "coeff_means": weight * tau * (E.T @ Y - E.T @ P - (colsum_d - colsum_e2)[:, None] * M),
        "coeff_vars": np.broadcast_to(-0.5 * weight * tau * colsum_d[:, None], S.shape).copy(),
        "noise_precision": weight * (0.5 * N * D / tau - 0.5 * yy + yp - 0.5 * T),
    }
    return value, adj


def _optimal_data(moments: FeatureMoments, Y, tau, grad=False):
    E, Ed = moments.ephi, moments.ediag
    N, D = Y.shape
    LK = E.shape[1]
    A = _system(moments.ephitphi, tau)
    R, _ = jitter_cholesky(A)
    C = E.T @ Y
    Mo = linalg.cho_solve((R, True), C)
    quad = float(np.sum(C * Mo))
    logdet_A = 2.0 * float(np.sum(np.log(np.diag(R))))
    yy = float(np.sum(Y * Y))
    # 0.5 log|Sigma_hat / tau| = -0.5 (LK log tau + log|A|)
    value = (-0.5 * N * D * LOG_2PI + 0.5 * N * D * math.log(tau) - 0.5 * tau * yy
             - 0.5 * D * (LK * math.log(tau) + logdet_A) + 0.5 * tau * quad)
    if not grad:
        return value, None
    A_inv = linalg.cho_solve((R, True), np.eye(LK))
    G = -0.5 * D * A_inv - 0.5 * tau * (Mo @ Mo.T)
    G = 0.5 * (G + G.T)
    gdiag = np.diag(G)
    adj = {
        "g_phi": tau * (Y @ Mo.T) + 2.0 * (E @ G) - 2.0 * E * gdiag,
        "g_diag": np.broadcast_to(gdiag, Ed.shape).copy(),
        "noise_precision": (0.5 * N * D / tau - 0.5 * yy - 0.5 * D * LK / tau + 0.5 * quad
                            - float(np.trace(G)) / (tau * tau)),
    }
    return value, adj


def _check_data(X, Y, state):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if Y.shape[1] != state.D:
        raise ValueError(f"Y has {Y.shape[1]} outputs but the state has D={state.D}")
    return X, Y


def _finite(value, what):
    if not math.isfinite(value):
        raise NumericalError(f"{what} evaluated to {value}")
    return value


def optimal_objective(X, Y, state, spec, include_kl_freq=True, grad=False, moments=None):
    X, Y = _check_data(X, Y, state)
    if moments is None:
        moments = feature_moments(X, state, spec)
    value, adj = _optimal_data(moments, Y, state.noise_precision, grad)
    if include_kl_freq:
        value -= kl_freq(state)
        if grad:
            _merge(adj, kl_freq_grad(state), -1.0)
    return value, adj


def factorised_objective(X, Y, state, spec, batch=None, grad=False):
    X, Y = _check_data(X, Y, state)
    N = X.shape[0]
    weight = 1.0
    if batch is not None:
        batch = _check_batch(batch, N)
        weight = N / len(batch)
        X, Y = X[batch], Y[batch]
    moments = feature_moments(X, state, spec)
    value, adj = _factorised_data(moments, Y, state, weight, grad)
    value -= kl_coeff(state) + kl_freq(state)
    if grad:
        _merge(adj, kl_coeff_grad(state), -1.0)
        _merge(adj, kl_freq_grad(state), -1.0)
        adj["rows"] = batch
    return value, adj


def _check_batch(batch, N):
    batch = np.asarray(batch, dtype=int).ravel()
    if batch.size == 0:
        raise ValueError("mini-batch must not be empty")
    if np.unique(batch).size != batch.size:
        raise ValueError("mini-batch contains duplicate indices")
    if batch.min() < 0 or batch.max() >= N:
        raise ValueError(f"mini-batch indices must lie in [0, {N})")
    return batch


# ---------------------------------------------------------------------------
# Public bounds
# ---------------------------------------------------------------------------


def elbo_optimal(X, Y, state: VariationalState, spec: KernelSpec, include_kl_freq=True):
    """Bound with q(A) replaced by its optimum.

    With ``include_kl_freq=False`` and point-mass frequencies this is the
    sparse spectrum GP log marginal likelihood.  Substituting the optimum
    into the factorised bound produces no extra additive constant: the
    trace terms contribute -LK/2 per output and the coefficient KL +LK/2.
    """
    value, _ = optimal_objective(X, Y, state, spec, include_kl_freq)
    return value


def elbo_pointwise(n, d, X, Y, state: VariationalState, spec: KernelSpec, moments_row=None):
    """Per-point, per-output term L_nd (0-based ``n`` and ``d``)."""
    X, Y = _check_data(X, Y, state)
    if not (0 <= n < X.shape[0] and 0 <= d < Y.shape[1]):
        raise IndexError(f"(n, d) = ({n}, {d}) out of range")
    if moments_row is None:
        moments_row = feature_moments(X[n:n + 1], state, spec)
    e = moments_row.ephi[0]
    ed = moments_row.ediag[0]
    m = state.coeff_means[:, d]
    s = state.coeff_vars[:, d]
    tau = state.noise_precision
    y = Y[n, d]
    em = float(e @ m)
    trace = em * em + float(ed @ (s + m * m)) - float((e * e) @ (m * m))
    return -0.5 * math.log(TWO_PI / tau) - 0.5 * tau * y * y + tau * y * em - 0.5 * tau * trace


def elbo_factorised(X, Y, state: VariationalState, spec: KernelSpec):
    value, _ = factorised_objective(X, Y, state, spec)
    return value


def elbo_stochastic(X, Y, state: VariationalState, spec: KernelSpec, batch):
    """Unbiased mini-batch estimate of :func:`elbo_factorised`."""
    value, _ = factorised_objective(X, Y, state, spec, batch=batch)
    return value
