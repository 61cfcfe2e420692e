"""Pure numpy implementation of the feature-moment kernels.

Column-expanded inputs: every per-column array has LK rows, so component
hyperparameters arrive already broadcast to their columns.

    X (N,Q)  Z, MU, SIG, INVL, PBAR (LK,Q)  scale, mid, half (LK,)

``mid``/``half`` are the centre and half-width of the uniform phase
posterior; fixed phases use ``half = 0``.
"""

import math

import numpy as np

TWO_PI = 2.0 * math.pi
EXP_FLOOR = -745.0
_ROW_CHUNK = 2048


def sinc(h):
    return np.sinc(h / math.pi)


def dsinc(h):
    h = np.asarray(h, dtype=float)
    small = np.abs(h) < 1e-4
    hs = np.where(small, 1.0, h)
    out = (hs * np.cos(hs) - np.sin(hs)) / hs**2
    return np.where(small, -h / 3.0 + h**3 / 30.0, out)


def _row_terms(X, Z, MU, SIG, INVL, PBAR, mid):
    delta = X[:, None, :] - Z[None, :, :]
    xb = delta * INVL
    v = np.einsum("nkq,kq->nk", xb * xb, SIG)
    c = np.einsum("nkq,kq->nk", xb, MU) + TWO_PI * np.einsum("nkq,kq->nk", delta, PBAR)
    return delta, xb, v, c + mid


def moments(X, Z, MU, SIG, INVL, PBAR, scale, mid, half):
    """Return ``(ephi, ediag)``, both N x LK.

    ``ediag[n, k]`` is E[phi_nk^2]; column sums give the diagonal of
    E[Phi^T Phi].
    """
    N = X.shape[0]
    LK = Z.shape[0]
    ephi = np.empty((N, LK))
    ediag = np.empty((N, LK))
    sh = sinc(half)
    sh2 = sinc(2.0 * half)
    s2 = scale * scale
    for lo in range(0, N, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, N)
        _, _, v, theta = _row_terms(X[lo:hi], Z, MU, SIG, INVL, PBAR, mid)
        e1 = np.exp(np.maximum(-0.5 * v, EXP_FLOOR))
        e2 = np.exp(np.maximum(-2.0 * v, EXP_FLOOR))
        ephi[lo:hi] = scale * e1 * np.cos(theta) * sh
        ediag[lo:hi] = s2 * (0.5 + 0.5 * e2 * np.cos(2.0 * theta) * sh2)
    return ephi, ediag


def moments_vjp(X, Z, MU, SIG, INVL, PBAR, scale, mid, half, g_phi, g_diag):
    """Pull ``(g_phi, g_diag)`` back onto the column-expanded parameters.

    Returns ``(g_Z, g_MU, g_SIG, g_INVL, g_PBAR, g_scale, g_mid, g_half)``.
    """
    N = X.shape[0]
    LK, Q = Z.shape
    g_Z = np.zeros((LK, Q))
    g_MU = np.zeros((LK, Q))
    g_SIG = np.zeros((LK, Q))
    g_INVL = np.zeros((LK, Q))
    g_PBAR = np.zeros((LK, Q))
    g_scale = np.zeros(LK)
    g_mid = np.zeros(LK)
    g_half = np.zeros(LK)
    sh = sinc(half)
    sh2 = sinc(2.0 * half)
    dsh = dsinc(half)
    dsh2 = dsinc(2.0 * half)
    s2 = scale * scale
    for lo in range(0, N, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, N)
        delta, xb, v, theta = _row_terms(X[lo:hi], Z, MU, SIG, INVL, PBAR, mid)
        gp = g_phi[lo:hi]
        gd = g_diag[lo:hi]
        e1 = np.exp(np.maximum(-0.5 * v, EXP_FLOOR))
        e2 = np.exp(np.maximum(-2.0 * v, EXP_FLOOR))
        cos1, sin1 = np.cos(theta), np.sin(theta)
        cos2, sin2 = np.cos(2.0 * theta), np.sin(2.0 * theta)
        d1 = e1 * cos1 * sh
        c2 = 0.5 + 0.5 * e2 * cos2 * sh2
        g_scale += np.sum(gp * d1 + gd * 2.0 * scale * c2, axis=0)
        gD1 = gp * scale
        gC2 = gd * s2
        gv = -0.5 * gD1 * d1 - gC2 * e2 * cos2 * sh2
        gth = -gD1 * e1 * sin1 * sh - gC2 * e2 * sin2 * sh2
        gh = gD1 * e1 * cos1 * dsh + gC2 * e2 * cos2 * dsh2
        g_mid += gth.sum(axis=0)
        g_half += gh.sum(axis=0)
        g_SIG += np.einsum("nk,nkq->kq", gv, xb * xb)
        g_MU += np.einsum("nk,nkq->kq", gth, xb)
        gxb = 2.0 * gv[:, :, None] * SIG * xb + gth[:, :, None] * MU
        g_INVL += np.einsum("nkq,nkq->kq", gxb, delta)
        g_PBAR += TWO_PI * np.einsum("nk,nkq->kq", gth, delta)
        gdelta = gxb * INVL + TWO_PI * gth[:, :, None] * PBAR
        g_Z -= gdelta.sum(axis=0)
    return g_Z, g_MU, g_SIG, g_INVL, g_PBAR, g_scale, g_mid, g_half
