"""Predictive moments of the approximate model at test inputs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from vssgp.bounds import CoefficientSolve
from vssgp.features import feature_moments
from vssgp.model import KernelSpec, VariationalState


@dataclass(frozen=True)
class PredictiveDensity:
    mean: np.ndarray
    covariance: np.ndarray


def _coefficients(state: VariationalState, solve: Optional[CoefficientSolve]):
    if solve is None:
        return state.coeff_means, state.coeff_vars, None
    return solve.means, None, solve.coeff_cov


def _covariances(moments, state, M, S_diag, S_full):
    E, Ed = moments.ephi, moments.ediag
    n, D = E.shape[0], M.shape[1]
    excess = Ed - E * E  # diag(E[phi^T phi] - E[phi]^T E[phi])
    cov = np.einsum("kd,nk,ke->nde", M, excess, M)
    if S_full is None:
        psi = Ed @ S_diag
    else:
        psi = np.einsum("nk,kl,nl->n", E, S_full, E) + excess @ np.diag(S_full)
        psi = np.repeat(psi[:, None], D, axis=1)
    idx = np.arange(D)
    cov[:, idx, idx] += psi + 1.0 / state.noise_precision
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def _inputs(Xs, state):
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if Xs.shape[0] == 0:
        raise ValueError("no test inputs")
    if Xs.shape[1] != state.Q:
        raise ValueError(f"test inputs have {Xs.shape[1]} columns, model expects Q={state.Q}")
    return Xs


def predictive_mean(x, state: VariationalState, spec: KernelSpec, solve: Optional[CoefficientSolve] = None):
    """E[y*] = E[phi*] M, a length-D vector."""
    x = _inputs(np.asarray(x, dtype=float).reshape(1, -1), state)
    M, _, _ = _coefficients(state, solve)
    return (feature_moments(x, state, spec).ephi @ M)[0]


def predictive_variance(x, state: VariationalState, spec: KernelSpec, solve: Optional[CoefficientSolve] = None):
    """D x D predictive covariance at a single input.

    With ``solve`` the full coefficient covariance Sigma_hat / tau is used
    inside the trace term instead of the stored diagonal variances.
    """
    x = _inputs(np.asarray(x, dtype=float).reshape(1, -1), state)
    M, S_diag, S_full = _coefficients(state, solve)
    return _covariances(feature_moments(x, state, spec), state, M, S_diag, S_full)[0]


def predict_batch(Xs, state: VariationalState, spec: KernelSpec, solve: Optional[CoefficientSolve] = None):
    """Per-row predictive densities for a matrix of test inputs."""
    Xs = _inputs(Xs, state)
    M, S_diag, S_full = _coefficients(state, solve)
    moments = feature_moments(Xs, state, spec)
    means = moments.ephi @ M
    covs = _covariances(moments, state, M, S_diag, S_full)
    return [PredictiveDensity(m, c) for m, c in zip(means, covs)]


def predict_moments(Xs, state: VariationalState, spec: KernelSpec, solve: Optional[CoefficientSolve] = None):
    """Vectorised means and marginal variances, both (n, D)."""
    Xs = _inputs(Xs, state)
    M, S_diag, S_full = _coefficients(state, solve)
    moments = feature_moments(Xs, state, spec)
    covs = _covariances(moments, state, M, S_diag, S_full)
    return moments.ephi @ M, np.diagonal(covs, axis1=1, axis2=2).copy()
