"""Expected random Fourier features under the frequency/phase posterior.

Feature column ``k`` of component ``i`` is

    sqrt(2 sigma_i^2 / K) * cos(w_k . xbar_nk + b_k + 2pi pbar_i . (x_n - z_k))

with ``xbar_nk = (x_n - z_k) / l_i`` and ``w_k`` in the standard-normal
parameterisation.  Under ``w_k ~ N(mu_k, diag(Sigma_k))`` and a uniform phase
posterior the first two moments have closed forms; the heavy lifting is done
by the kernels in :mod:`vssgp._backend`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vssgp import _backend
from vssgp._kernels_py import EXP_FLOOR, sinc
from vssgp.model import TWO_PI, KernelSpec, VariationalState, check_compatible, column_components


def expected_cos_gaussian(mu, Sigma, xbar, bbar):
    """E[cos(w.xbar + bbar)] for w ~ N(mu, diag(Sigma))."""
    mu, Sigma, xbar = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (mu, Sigma, xbar))
    quad = float(np.sum(Sigma * xbar * xbar))
    return math.exp(max(-0.5 * quad, EXP_FLOOR)) * math.cos(float(mu @ xbar) + bbar)


def expected_cos_sq_gaussian(mu, Sigma, xbar, bbar):
    """E[cos^2(w.xbar + bbar)] for w ~ N(mu, diag(Sigma))."""
    mu, Sigma, xbar = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (mu, Sigma, xbar))
    quad = float(np.sum(Sigma * xbar * xbar))
    return 0.5 + 0.5 * math.exp(max(-2.0 * quad, EXP_FLOOR)) * math.cos(2.0 * float(mu @ xbar) + 2.0 * bbar)


def expected_cos_uniform_phase(c, alpha, beta):
    """E[cos(c + b)] for b ~ Unif(alpha, beta).

    Evaluated as ``cos(c + mid) * sinc(half_width)``, which equals
    ``(sin(c+beta) - sin(c+alpha)) / (beta - alpha)`` and stays accurate as
    the interval shrinks to a point.
    """
    mid = 0.5 * (alpha + beta)
    half = 0.5 * (beta - alpha)
    return np.cos(c + mid) * sinc(half)


@dataclass(frozen=True)
class FeatureMoments:
    """First and second moments of the feature matrix.

    ``ephi`` is E[Phi] (N x LK).  ``ediag[n, k]`` is E[Phi_nk^2]; with
    independent columns this is all that is needed beyond ``ephi`` to build
    E[Phi^T Phi] (see :attr:`ephitphi`).
    """

    ephi: np.ndarray
    ediag: np.ndarray

    @property
    def ephitphi(self):
        out = self.ephi.T @ self.ephi
        idx = np.diag_indices_from(out)
        out[idx] += self.ediag.sum(axis=0) - np.einsum("nk,nk->k", self.ephi, self.ephi)
        return out

    def row(self, n):
        return FeatureMoments(self.ephi[n:n + 1], self.ediag[n:n + 1])

    def row_second_moment(self, n):
        """E[phi_n^T phi_n] for a single data point (LK x LK)."""
        e = self.ephi[n]
        out = np.outer(e, e)
        out[np.diag_indices_from(out)] = self.ediag[n]
        return out


def _column_params(state: VariationalState, spec: KernelSpec):
    check_compatible(state, spec)
    comp = column_components(state.LK, spec.L)
    K = state.LK // spec.L
    scale = np.sqrt(2.0 * spec.weights / K)[comp]
    return (
        np.ascontiguousarray(state.inducing_inputs),
        np.ascontiguousarray(state.freq_means),
        np.ascontiguousarray(state.freq_vars),
        np.ascontiguousarray(1.0 / spec.lengthscales[comp]),
        np.ascontiguousarray(spec.inverse_periods[comp]),
        np.ascontiguousarray(scale),
        np.ascontiguousarray(state.phases.midpoints()),
        np.ascontiguousarray(state.phases.half_widths()),
    )


def _check_inputs(X, state):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != state.Q:
        raise ValueError(f"inputs have {X.shape[1]} columns, model expects Q={state.Q}")
    return X


def feature_moments(X, state: VariationalState, spec: KernelSpec) -> FeatureMoments:
    X = _check_inputs(X, state)
    ephi, ediag = _backend.moments(X, *_column_params(state, spec))
    return FeatureMoments(np.asarray(ephi), np.asarray(ediag))


def feature_moments_vjp(X, state: VariationalState, spec: KernelSpec, g_phi, g_diag):
    """Vector-Jacobian product of :func:`feature_moments`.

    Returns a dict of gradients with respect to the constrained parameters:
    state fields, ``phase_alpha``/``phase_beta`` (variational phases only),
    and the kernel's ``weights``, ``lengthscales``, ``inverse_periods``.
    """
    X = _check_inputs(X, state)
    params = _column_params(state, spec)
    g_phi = np.ascontiguousarray(g_phi, dtype=float)
    g_diag = np.ascontiguousarray(g_diag, dtype=float)
    gZ, gMU, gSIG, gINVL, gPBAR, gscale, gmid, ghalf = (
        np.asarray(a) for a in _backend.moments_vjp(X, *params, g_phi, g_diag)
    )
    comp = column_components(state.LK, spec.L)
    invl, scale = params[3], params[5]
    L, Q = spec.L, spec.Q

    g_ls = np.zeros((L, Q))
    np.add.at(g_ls, comp, -gINVL * invl * invl)
    g_ip = np.zeros((L, Q))
    np.add.at(g_ip, comp, gPBAR)
    # scale = sqrt(2 w / K)  =>  d scale / d w = scale / (2 w)
    g_w = np.zeros(L)
    np.add.at(g_w, comp, gscale * scale / (2.0 * spec.weights[comp]))

    out = {
        "inducing_inputs": gZ,
        "freq_means": gMU,
        "freq_vars": gSIG,
        "weights": g_w,
        "lengthscales": g_ls,
        "inverse_periods": g_ip,
    }
    if state.variational_phases:
        out["phase_alpha"] = 0.5 * (gmid - ghalf)
        out["phase_beta"] = 0.5 * (gmid + ghalf)
    return out


def expected_phi(X, state: VariationalState, spec: KernelSpec):
    """E[Phi] (N x LK)."""
    return feature_moments(X, state, spec).ephi


def expected_phitphi(X, state: VariationalState, spec: KernelSpec):
    """E[Phi^T Phi] (LK x LK)."""
    return feature_moments(X, state, spec).ephitphi


def phi_row(x, w, b, z, spec: KernelSpec):
    """Feature row for one sampled (w, b).

    ``w`` is (LK, Q) in the standard-normal parameterisation, ``b`` is (LK,)
    and ``z`` the (LK, Q) inducing inputs.
    """
    x = np.asarray(x, dtype=float)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    LK = w.shape[0]
    comp = column_components(LK, spec.L)
    K = LK // spec.L
    delta = x[None, :] - z
    freq = w / spec.lengthscales[comp] / TWO_PI + spec.inverse_periods[comp]
    arg = TWO_PI * np.sum(freq * delta, axis=1) + np.asarray(b, dtype=float)
    return np.sqrt(2.0 * spec.weights[comp] / K) * np.cos(arg)


def phi_matrix(X, w, b, z, spec: KernelSpec):
    """Feature matrix for one or many sampled (w, b).

    With ``w`` of shape (S, LK, Q) and ``b`` of shape (S, LK) returns
    (S, N, LK); 2-d ``w`` gives a single (N, LK) matrix.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    single = w.ndim == 2
    if single:
        w, b = w[None], b[None]
    LK = w.shape[1]
    comp = column_components(LK, spec.L)
    K = LK // spec.L
    z = np.atleast_2d(np.asarray(z, dtype=float))
    freq = w / spec.lengthscales[comp] / TWO_PI + spec.inverse_periods[comp]  # (S, LK, Q)
    delta = X[:, None, :] - z[None]  # (N, LK, Q)
    arg = TWO_PI * np.einsum("skq,nkq->snk", freq, delta) + b[:, None, :]
    out = np.sqrt(2.0 * spec.weights[comp] / K) * np.cos(arg)
    return out[0] if single else out
