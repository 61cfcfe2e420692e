"""Bound gradients, optimisers and model fitting.

Both optimisers maximise the bound.  Internally L-BFGS minimises the
negated bound; every public value (traces, returned bounds) is the bound
itself, never its negation.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from vssgp._rng import substream
from vssgp.bounds import (
    BoundKind,
    CoefficientSolve,
    NumericalError,
    factorised_objective,
    optimal_objective,
    solve_optimal_coefficients,
)
from vssgp.features import feature_moments, feature_moments_vjp
from vssgp.model import (
    TWO_PI,
    Dataset,
    FixedPhases,
    KernelSpec,
    Layout,
    ParameterError,
    ParameterVector,
    VariationalPhases,
    VariationalState,
)

log = logging.getLogger(__name__)

COEFF_BLOCKS = frozenset({"coeff_means", "coeff_vars"})


class OptimizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FitConfig:
    """Settings for one fit.

    ``frozen`` names parameter blocks (see :mod:`vssgp.model`) kept at their
    initial values.  ``grad_tol`` enables a gradient-norm stop (off by
    default: the optimisers run their full iteration budget).
    """

    bound: BoundKind = BoundKind.OPTIMAL
    max_iters: int = 500
    optimizer: str = "lbfgs"
    batch_size: Optional[int] = None
    step_size: float = 1e-3
    decay: float = 0.9
    epsilon: float = 1e-8
    seed: int = 0
    frozen: frozenset = field(default_factory=frozenset)
    include_kl_freq: bool = True
    grad_tol: Optional[float] = None
    lbfgs_memory: int = 10

    def __post_init__(self):
        object.__setattr__(self, "bound", BoundKind(self.bound))
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be positive")
        if self.optimizer not in ("lbfgs", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise ValueError("batch_size must be at least 1")

    def effective_frozen(self):
        if self.bound is BoundKind.OPTIMAL:
            return self.frozen | COEFF_BLOCKS
        return self.frozen


@dataclass
class FitTrace:
    values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    warning: Optional[str] = None
    n_evals: int = 0
    initial_value: Optional[float] = None

    def record(self, value, grad_norm, t0):
        self.values.append(float(value))
        self.grad_norms.append(float(grad_norm))
        self.wall_clock.append(time.perf_counter() - t0)

    def __len__(self):
        return len(self.values)


# ---------------------------------------------------------------------------
# Bound + gradient
# ---------------------------------------------------------------------------


def _as_data(data):
    if isinstance(data, Dataset):
        return data.X, data.Y
    X, Y = data
    return np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(Y, dtype=float).reshape(len(X), -1)


def bound_and_gradient(v, data, config: FitConfig, layout: Optional[Layout] = None, batch=None):
    """Selected bound and its gradient with respect to the flat vector.

    ``v`` is a :class:`ParameterVector` or a raw array together with its
    ``layout``.  ``batch`` (row indices) applies to the stochastic bound;
    without it the stochastic bound uses every row.
    """
    if isinstance(v, ParameterVector):
        layout, v = v.layout, v.values
    if layout is None:
        raise ValueError("raw parameter arrays need their layout")
    X, Y = _as_data(data)
    # extreme trial points overflow; the finiteness check below reports them
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        state, spec = layout.unpack(v)
        kind = config.bound
        if kind is BoundKind.OPTIMAL:
            value, adj = optimal_objective(X, Y, state, spec, config.include_kl_freq, grad=True)
            Xr = X
        else:
            rows = batch if kind is BoundKind.STOCHASTIC else None
            value, adj = factorised_objective(X, Y, state, spec, batch=rows, grad=True)
            Xr = X if adj["rows"] is None else X[adj["rows"]]
        grads = feature_moments_vjp(Xr, state, spec, adj.pop("g_phi"), adj.pop("g_diag"))
        adj.pop("rows", None)
        for k, val in adj.items():
            grads[k] = grads[k] + val if k in grads else val
        g = layout.gradient(v, grads)
    if not math.isfinite(value) or not np.all(np.isfinite(g)):
        bad = [name for name, sl in layout.slices.items() if not np.all(np.isfinite(g[sl]))]
        raise NumericalError(f"non-finite bound ({value}) or gradient in blocks {bad or ['<value>']}")
    return value, g


# ---------------------------------------------------------------------------
# Optimisers
# ---------------------------------------------------------------------------


@dataclass
class OptimizeResult:
    x: np.ndarray
    value: float
    trace: FitTrace


def lbfgs_maximize(fun: Callable, x0, max_iters=500, memory=10, grad_tol=None,
                   c1=1e-4, max_backtracks=40) -> OptimizeResult:
    """Maximise ``fun(x) -> (value, grad)`` with L-BFGS.

    Steps are accepted only under the Armijo sufficient-increase condition,
    so the recorded values never decrease.  A failed line search ends the
    run with ``trace.warning`` set and the best iterate returned.
    """
    t0 = time.perf_counter()
    trace = FitTrace()

    def neg(x):
        trace.n_evals += 1
        try:
            val, g = fun(x)
        except (NumericalError, ParameterError, FloatingPointError, OverflowError,
                np.linalg.LinAlgError):
            return math.inf, None
        if not math.isfinite(val):
            return math.inf, None
        return -val, -np.asarray(g, dtype=float)

    x = np.array(x0, dtype=float)
    f, g = neg(x)
    if g is None:
        raise NumericalError("objective is not finite at the initial point")
    trace.initial_value = -f
    s_hist, y_hist = [], []

    for _ in range(max_iters):
        gnorm = np.linalg.norm(g)
        if gnorm <= 1e-300 or gnorm <= 1e-14 * (1.0 + abs(f)):
            break
        if grad_tol is not None and gnorm < grad_tol:
            break
        p = _two_loop(g, s_hist, y_hist)
        if not s_hist:
            p = p / max(gnorm, 1.0)
        slope = float(g @ p)
        if slope >= 0:
            s_hist.clear()
            y_hist.clear()
            p = -g / max(gnorm, 1.0)
            slope = float(g @ p)
        step, accepted = 1.0, None
        for _ in range(max_backtracks):
            x_new = x + step * p
            f_new, g_new = neg(x_new)
            if g_new is not None and f_new <= f + c1 * step * slope:
                accepted = (x_new, f_new, g_new)
                break
            step *= 0.5
        if accepted is None:
            if s_hist:
                s_hist.clear()
                y_hist.clear()
                continue
            trace.warning = "line search failed to find sufficient increase"
            warnings.warn(trace.warning, OptimizationWarning, stacklevel=2)
            break
        x_new, f_new, g_new = accepted
        if f_new >= f:
            # accepted only through rounding: no representable progress left
            break
        s, y = x_new - x, g_new - g
        if float(s @ y) > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        trace.record(-f, np.linalg.norm(g), t0)
    return OptimizeResult(x, -f, trace)


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (a, rho) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def rmsprop_maximize(fun: Callable, x0, n_iters, step_size=1e-3, decay=0.9, epsilon=1e-8,
                     grad_tol=None) -> OptimizeResult:
    """Stochastic ascent with per-coordinate RMS scaling.

    ``fun(x, iteration) -> (value, grad)``; the accumulator is refreshed
    before each step: r <- decay r + (1-decay) g^2, x <- x + step g / sqrt(r + eps).
    """
    t0 = time.perf_counter()
    trace = FitTrace()
    x = np.array(x0, dtype=float)
    r = np.zeros_like(x)
    for it in range(n_iters):
        val, g = fun(x, it)
        trace.n_evals += 1
        gnorm = float(np.linalg.norm(g))
        trace.record(val, gnorm, t0)
        if grad_tol is not None and gnorm < grad_tol:
            break
        r = decay * r + (1.0 - decay) * g * g
        x = x + step_size * g / np.sqrt(r + epsilon)
    return OptimizeResult(x, trace.values[-1], trace)


# ---------------------------------------------------------------------------
# Initialisation and fitting
# ---------------------------------------------------------------------------


def init_state(data, spec: KernelSpec, K, seed=0, tau=10.0, variational_phases=False,
               freq_var=0.1) -> VariationalState:
    """Starting posterior: random frequency means, small variances.

    Inducing inputs are training inputs drawn without replacement (with
    replacement once LK exceeds N).
    """
    X, Y = _as_data(data)
    if X.shape[0] == 0:
        raise ValueError("cannot initialise from an empty dataset")
    if int(K) < 1:
        raise ValueError("K must be at least 1")
    N, Q = X.shape
    LK = spec.L * int(K)
    rng = substream(seed, "init")
    mu = rng.standard_normal((LK, Q))
    rows = rng.choice(N, size=LK, replace=LK > N)
    z = X[rows]
    if variational_phases:
        phases = VariationalPhases(np.zeros(LK), np.full(LK, TWO_PI))
    else:
        phases = FixedPhases(rng.uniform(0.0, TWO_PI, size=LK))
    D = Y.shape[1]
    return VariationalState(
        inducing_inputs=z,
        freq_means=mu,
        freq_vars=np.full((LK, Q), float(freq_var)),
        phases=phases,
        coeff_means=np.zeros((LK, D)),
        coeff_vars=np.ones((LK, D)),
        noise_precision=float(tau),
    )


@dataclass
class FittedModel:
    state: VariationalState
    spec: KernelSpec
    bound: BoundKind
    trace: FitTrace
    solve: Optional[CoefficientSolve] = None
    name: str = "vssgp"

    def predict(self, Xs):
        from vssgp.predict import predict_moments

        return predict_moments(Xs, self.state, self.spec, self.solve)


def attach_optimal_coefficients(data, state, spec):
    """Solve q(A) in closed form and store it in the state."""
    X, Y = _as_data(data)
    solve = solve_optimal_coefficients(feature_moments(X, state, spec), Y, state.noise_precision)
    s = np.repeat(np.diag(solve.coeff_cov)[:, None], state.D, axis=1)
    return state.replace(coeff_means=solve.means, coeff_vars=np.maximum(s, 1e-300)), solve


def fit_quasi_newton(data, init: VariationalState, spec: KernelSpec, config: FitConfig):
    """Maximise the optimal-coefficient or factorised bound with L-BFGS."""
    if config.bound is BoundKind.STOCHASTIC:
        raise ValueError("the stochastic bound is fitted with fit_adaptive_sgd")
    layout = Layout(init, spec, config.effective_frozen())
    data = _as_data(data)

    def fun(x):
        return bound_and_gradient(x, data, config, layout)

    res = lbfgs_maximize(fun, layout.pack(init, spec), config.max_iters, config.lbfgs_memory,
                         config.grad_tol)
    state, spec_out = layout.unpack(res.x)
    log.info("lbfgs: %d iterations, bound %.6g", len(res.trace), res.value)
    return state, spec_out, res.trace


def fit_adaptive_sgd(data, init: VariationalState, spec: KernelSpec, config: FitConfig):
    """Maximise the stochastic bound with RMSProp on fresh mini-batches."""
    if config.bound is not BoundKind.STOCHASTIC:
        raise ValueError("fit_adaptive_sgd needs the stochastic bound")
    X, Y = _as_data(data)
    N = X.shape[0]
    S = N if config.batch_size is None else min(int(config.batch_size), N)
    layout = Layout(init, spec, config.effective_frozen())
    rng = substream(config.seed, "minibatch")

    def fun(x, it):
        batch = np.arange(N) if S == N else rng.choice(N, size=S, replace=False)
        return bound_and_gradient(x, (X, Y), config, layout, batch=batch)

    res = rmsprop_maximize(fun, layout.pack(init, spec), config.max_iters, config.step_size,
                           config.decay, config.epsilon, config.grad_tol)
    state, spec_out = layout.unpack(res.x)
    return state, spec_out, res.trace


def fit_vssgp(data, spec: KernelSpec, K, config: FitConfig, tau=10.0, variational_phases=False,
              init: Optional[VariationalState] = None) -> FittedModel:
    """Initialise, optimise and (for the optimal bound) solve for q(A)."""
    data = _as_data(data)
    if init is None:
        init = init_state(data, spec, K, config.seed, tau, variational_phases)
    if config.optimizer == "rmsprop" or config.bound is BoundKind.STOCHASTIC:
        if config.bound is not BoundKind.STOCHASTIC:
            config = FitConfig(**{**config.__dict__, "bound": BoundKind.STOCHASTIC})
        state, spec, trace = fit_adaptive_sgd(data, init, spec, config)
    else:
        state, spec, trace = fit_quasi_newton(data, init, spec, config)
    solve = None
    if config.bound is BoundKind.OPTIMAL:
        state, solve = attach_optimal_coefficients(data, state, spec)
    return FittedModel(state, spec, config.bound, trace, solve)
