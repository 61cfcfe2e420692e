"""Domain types, the spectral mixture kernel and the parameter layout.

Every trainable quantity lives in a flat unconstrained vector during
optimisation.  :class:`Layout` owns the mapping in both directions and the
chain rule from constrained gradients back to the flat vector.

Unconstrained layout, in order (blocks listed in ``frozen`` are skipped):

==================  ========  ==========================================
block               size      transform
==================  ========  ==========================================
inducing_inputs     LK*Q      identity
freq_means          LK*Q      identity
freq_vars           LK*Q      log
phase_lower         LK        logit(alpha / 2pi)          (variational)
phase_width         LK        logit((beta-alpha)/(2pi-alpha)) (variational)
coeff_means         LK*D      identity
coeff_vars          LK*D      log
noise_precision     1         log
weights             L         log
lengthscales        L*Q       log
inverse_periods     #nonzero  inverse softplus (zeros stay frozen)
==================  ========  ==========================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Union

import numpy as np
from scipy.special import expit, logit

TWO_PI = 2.0 * math.pi

# Fractions fed to logit when packing phase bounds are clipped to this margin
# so that the prior state alpha=0, beta=2pi stays packable.
PHASE_FRACTION_EPS = 1e-6


class ParameterError(ValueError):
    """Invalid or non-finite model parameters."""


def _as_float_array(name, value, ndim):
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ParameterError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        raise ParameterError(f"{name}{list(bad)}: non-finite value")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Inputs ``X`` (N x Q) and outputs ``Y`` (N x D)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = _as_float_array("X", self.X, 2)
        Y = _as_float_array("Y", self.Y, 2)
        if X.shape[0] < 1:
            raise ParameterError("dataset must contain at least one row")
        if X.shape[0] != Y.shape[0]:
            raise ParameterError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def Q(self):
        return self.X.shape[1]

    @property
    def D(self):
        return self.Y.shape[1]


@dataclass(frozen=True)
class SMComponent:
    """One spectral mixture component.

    ``inverse_periods`` of zero means an infinite period in that dimension,
    i.e. a plain squared-exponential factor.
    """

    weight: float
    lengthscales: np.ndarray
    inverse_periods: np.ndarray

    def __post_init__(self):
        ls = _as_float_array("lengthscales", np.atleast_1d(self.lengthscales), 1)
        ip = _as_float_array("inverse_periods", np.atleast_1d(self.inverse_periods), 1)
        if ip.shape != ls.shape:
            raise ParameterError("lengthscales and inverse_periods must have equal length")
        w = float(self.weight)
        if not (math.isfinite(w) and w > 0):
            raise ParameterError(f"weight: must be positive and finite, got {w}")
        if np.any(ls <= 0):
            raise ParameterError("lengthscales: must be positive")
        if np.any(ip < 0):
            raise ParameterError("inverse_periods: must be non-negative")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "inverse_periods", ip)


@dataclass(frozen=True)
class KernelSpec:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ParameterError("kernel spec needs at least one component")
        Q = comps[0].lengthscales.shape[0]
        if any(c.lengthscales.shape[0] != Q for c in comps):
            raise ParameterError("all components must share the input dimension")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, weights, lengthscales, inverse_periods):
        lengthscales = np.atleast_2d(np.asarray(lengthscales, dtype=float))
        inverse_periods = np.atleast_2d(np.asarray(inverse_periods, dtype=float))
        return cls(tuple(
            SMComponent(w, l, p)
            for w, l, p in zip(np.atleast_1d(weights), lengthscales, inverse_periods)
        ))

    @property
    def L(self):
        return len(self.components)

    @property
    def Q(self):
        return self.components[0].lengthscales.shape[0]

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])

    @property
    def lengthscales(self):
        return np.stack([c.lengthscales for c in self.components])

    @property
    def inverse_periods(self):
        return np.stack([c.inverse_periods for c in self.components])


@dataclass(frozen=True)
class FixedPhases:
    """Phases held at sampled constants ``b`` in [0, 2pi)."""

    b: np.ndarray

    def __post_init__(self):
        b = _as_float_array("phases.b", self.b, 1)
        if np.any(b < 0) or np.any(b > TWO_PI):
            raise ParameterError("phases.b: must lie in [0, 2pi]")
        object.__setattr__(self, "b", b)

    def midpoints(self):
        return self.b

    def half_widths(self):
        return np.zeros_like(self.b)


@dataclass(frozen=True)
class VariationalPhases:
    """Uniform phase posteriors on [alpha_k, beta_k]."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = _as_float_array("phases.alpha", self.alpha, 1)
        b = _as_float_array("phases.beta", self.beta, 1)
        if a.shape != b.shape:
            raise ParameterError("phases.alpha and phases.beta differ in length")
        if np.any(a < 0) or np.any(b > TWO_PI) or np.any(a > b):
            raise ParameterError("phases: need 0 <= alpha <= beta <= 2pi")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    def midpoints(self):
        return 0.5 * (self.alpha + self.beta)

    def half_widths(self):
        return 0.5 * (self.beta - self.alpha)


Phases = Union[FixedPhases, VariationalPhases]


@dataclass(frozen=True)
class VariationalState:
    """Variational posterior over frequencies, phases and coefficients.

    Array shapes: ``inducing_inputs``, ``freq_means``, ``freq_vars`` are
    (LK, Q); ``coeff_means`` and ``coeff_vars`` are (LK, D).  Column ``k``
    belongs to component ``k // K``.
    """

    inducing_inputs: np.ndarray
    freq_means: np.ndarray
    freq_vars: np.ndarray
    phases: Phases
    coeff_means: np.ndarray
    coeff_vars: np.ndarray
    noise_precision: float

    def __post_init__(self):
        z = _as_float_array("inducing_inputs", self.inducing_inputs, 2)
        mu = _as_float_array("freq_means", self.freq_means, 2)
        sig = _as_float_array("freq_vars", self.freq_vars, 2)
        m = _as_float_array("coeff_means", self.coeff_means, 2)
        s = _as_float_array("coeff_vars", self.coeff_vars, 2)
        if not (mu.shape == sig.shape == z.shape):
            raise ParameterError("inducing_inputs, freq_means and freq_vars must share shape")
        if m.shape != s.shape or m.shape[0] != z.shape[0]:
            raise ParameterError("coeff_means/coeff_vars must be (LK, D)")
        if np.any(sig < 0):
            raise ParameterError("freq_vars: must be non-negative")
        if np.any(s <= 0):
            raise ParameterError("coeff_vars: must be positive")
        n_phase = (self.phases.b if isinstance(self.phases, FixedPhases) else self.phases.alpha).shape[0]
        if n_phase != z.shape[0]:
            raise ParameterError("phases: length must equal LK")
        tau = float(self.noise_precision)
        if not (math.isfinite(tau) and tau > 0):
            raise ParameterError(f"noise_precision: must be positive and finite, got {tau}")
        for name, arr in [("inducing_inputs", z), ("freq_means", mu), ("freq_vars", sig),
                          ("coeff_means", m), ("coeff_vars", s)]:
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "noise_precision", tau)

    @property
    def LK(self):
        return self.inducing_inputs.shape[0]

    @property
    def Q(self):
        return self.inducing_inputs.shape[1]

    @property
    def D(self):
        return self.coeff_means.shape[1]

    @property
    def variational_phases(self):
        return isinstance(self.phases, VariationalPhases)

    def replace(self, **changes):
        return replace(self, **changes)


def features_per_component(LK, L):
    if LK % L:
        raise ParameterError(f"LK={LK} is not a multiple of L={L}")
    return LK // L


def column_components(LK, L):
    """Component index of every feature column (0-based, ``k // K``)."""
    return np.repeat(np.arange(L), features_per_component(LK, L))


def check_compatible(state: VariationalState, spec: KernelSpec):
    if state.Q != spec.Q:
        raise ParameterError(f"state has Q={state.Q} but kernel spec has Q={spec.Q}")
    features_per_component(state.LK, spec.L)


def kernel_exact(spec: KernelSpec, x, y):
    """Spectral mixture covariance between two input vectors."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    total = 0.0
    for c in spec.components:
        se = math.exp(-0.5 * float(np.sum(diff**2 / c.lengthscales**2)))
        cos = float(np.prod(np.cos(TWO_PI * diff * c.inverse_periods)))
        total += c.weight * se * cos
    return total


def kernel_matrix(spec: KernelSpec, X1, X2):
    X1 = np.atleast_2d(X1)
    X2 = np.atleast_2d(X2)
    diff = X1[:, None, :] - X2[None, :, :]
    out = np.zeros((X1.shape[0], X2.shape[0]))
    for c in spec.components:
        se = np.exp(-0.5 * np.sum(diff**2 / c.lengthscales**2, axis=-1))
        cos = np.prod(np.cos(TWO_PI * diff * c.inverse_periods), axis=-1)
        out += c.weight * se * cos
    return out


# ---------------------------------------------------------------------------
# Unconstrained parameterisation
# ---------------------------------------------------------------------------

BLOCKS = (
    "inducing_inputs",
    "freq_means",
    "freq_vars",
    "phase_lower",
    "phase_width",
    "coeff_means",
    "coeff_vars",
    "noise_precision",
    "weights",
    "lengthscales",
    "inverse_periods",
)

PHASE_BLOCKS = frozenset({"phase_lower", "phase_width"})


def _softplus(u):
    return np.logaddexp(0.0, u)


def _inv_softplus(p):
    # log(expm1(p)) without overflow for large p
    return p + np.log(-np.expm1(-p))


@dataclass(frozen=True)
class Layout:
    """Fixed mapping between (state, spec) and a flat unconstrained vector.

    Built from a template; blocks in ``frozen`` and structurally fixed values
    (fixed phases, zero inverse periods) are carried over from the template
    on unpack.
    """

    template_state: VariationalState
    template_spec: KernelSpec
    frozen: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        frozen = frozenset(self.frozen)
        unknown = frozen - set(BLOCKS)
        if unknown:
            raise ParameterError(f"unknown parameter blocks: {sorted(unknown)}")
        check_compatible(self.template_state, self.template_spec)
        object.__setattr__(self, "frozen", frozen)

    @property
    def active_blocks(self):
        out = []
        for name in BLOCKS:
            if name in self.frozen:
                continue
            if name in PHASE_BLOCKS and not self.template_state.variational_phases:
                continue
            if name == "inverse_periods" and not np.any(self.template_spec.inverse_periods > 0):
                continue
            out.append(name)
        return tuple(out)

    def _size(self, name):
        st, sp = self.template_state, self.template_spec
        LK, Q, D = st.LK, st.Q, st.D
        return {
            "inducing_inputs": LK * Q,
            "freq_means": LK * Q,
            "freq_vars": LK * Q,
            "phase_lower": LK,
            "phase_width": LK,
            "coeff_means": LK * D,
            "coeff_vars": LK * D,
            "noise_precision": 1,
            "weights": sp.L,
            "lengthscales": sp.L * Q,
            "inverse_periods": int(np.count_nonzero(sp.inverse_periods > 0)),
        }[name]

    @property
    def slices(self):
        out, start = {}, 0
        for name in self.active_blocks:
            n = self._size(name)
            out[name] = slice(start, start + n)
            start += n
        return out

    @property
    def size(self):
        return sum(self._size(n) for n in self.active_blocks)

    def _period_mask(self):
        return self.template_spec.inverse_periods > 0

    def pack(self, state: VariationalState, spec: KernelSpec):
        check_compatible(state, spec)
        if state.inducing_inputs.shape != self.template_state.inducing_inputs.shape or state.D != self.template_state.D:
            raise ParameterError("state shape does not match the layout template")
        v = np.empty(self.size)
        for name, sl in self.slices.items():
            with np.errstate(divide="ignore", invalid="ignore"):
                v[sl] = self._pack_block(name, state, spec)
            if not np.all(np.isfinite(v[sl])):
                raise ParameterError(f"{name}: value maps to a non-finite unconstrained parameter")
        return v

    def _pack_block(self, name, state, spec):
        if name == "inducing_inputs":
            return state.inducing_inputs.ravel()
        if name == "freq_means":
            return state.freq_means.ravel()
        if name == "freq_vars":
            return np.log(state.freq_vars).ravel()
        if name in PHASE_BLOCKS:
            a, b = state.phases.alpha, state.phases.beta
            if name == "phase_lower":
                frac = a / TWO_PI
            else:
                frac = (b - a) / np.maximum(TWO_PI - a, np.finfo(float).tiny)
            return logit(np.clip(frac, PHASE_FRACTION_EPS, 1.0 - PHASE_FRACTION_EPS))
        if name == "coeff_means":
            return state.coeff_means.ravel()
        if name == "coeff_vars":
            return np.log(state.coeff_vars).ravel()
        if name == "noise_precision":
            return np.array([math.log(state.noise_precision)])
        if name == "weights":
            return np.log(spec.weights)
        if name == "lengthscales":
            return np.log(spec.lengthscales).ravel()
        if name == "inverse_periods":
            ip = spec.inverse_periods
            if np.any((ip > 0) != self._period_mask()):
                raise ParameterError("inverse_periods: zero pattern differs from the template")
            return _inv_softplus(ip[self._period_mask()])
        raise AssertionError(name)

    def unpack(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ParameterError(f"parameter vector has length {v.size}, layout expects {self.size}")
        if not np.all(np.isfinite(v)):
            raise ParameterError(f"parameter vector entry {int(np.argmin(np.isfinite(v)))} is not finite")
        st, sp = self.template_state, self.template_spec
        LK, Q, D = st.LK, st.Q, st.D
        blocks = {name: v[sl] for name, sl in self.slices.items()}
        kw = {}
        if "inducing_inputs" in blocks:
            kw["inducing_inputs"] = blocks["inducing_inputs"].reshape(LK, Q)
        if "freq_means" in blocks:
            kw["freq_means"] = blocks["freq_means"].reshape(LK, Q)
        if "freq_vars" in blocks:
            kw["freq_vars"] = np.exp(blocks["freq_vars"]).reshape(LK, Q)
        if st.variational_phases and ("phase_lower" in blocks or "phase_width" in blocks):
            alpha = TWO_PI * expit(blocks["phase_lower"]) if "phase_lower" in blocks else st.phases.alpha
            if "phase_width" in blocks:
                beta = alpha + (TWO_PI - alpha) * expit(blocks["phase_width"])
            else:
                beta = np.maximum(st.phases.beta, alpha)
            kw["phases"] = VariationalPhases(alpha, np.minimum(beta, TWO_PI))
        if "coeff_means" in blocks:
            kw["coeff_means"] = blocks["coeff_means"].reshape(LK, D)
        if "coeff_vars" in blocks:
            kw["coeff_vars"] = np.exp(blocks["coeff_vars"]).reshape(LK, D)
        if "noise_precision" in blocks:
            kw["noise_precision"] = float(np.exp(blocks["noise_precision"][0]))
        state = replace(st, **kw)

        weights = np.exp(blocks["weights"]) if "weights" in blocks else sp.weights
        ls = np.exp(blocks["lengthscales"]).reshape(sp.L, Q) if "lengthscales" in blocks else sp.lengthscales
        ip = sp.inverse_periods.copy()
        if "inverse_periods" in blocks:
            ip[self._period_mask()] = _softplus(blocks["inverse_periods"])
        spec = KernelSpec.from_arrays(weights, ls, ip)
        return state, spec

    def gradient(self, v, grads):
        """Chain constrained-space gradients into the unconstrained vector.

        ``grads`` maps names to dL/d(constrained value): the state field names,
        ``phase_alpha``/``phase_beta``, and ``weights``/``lengthscales``/
        ``inverse_periods`` for the kernel.  Missing entries count as zero.
        """
        v = np.asarray(v, dtype=float)
        state, spec = self.unpack(v)
        out = np.zeros(self.size)

        def g(name, shape):
            val = grads.get(name)
            return np.zeros(shape) if val is None else np.asarray(val, dtype=float).reshape(shape)

        LK, Q, D = state.LK, state.Q, state.D
        with np.errstate(invalid="ignore"):
            self._chain(v, state, spec, g, out)
        return out

    def _chain(self, v, state, spec, g, out):
        LK, Q, D = state.LK, state.Q, state.D
        for name, sl in self.slices.items():
            if name == "inducing_inputs":
                out[sl] = g(name, (LK, Q)).ravel()
            elif name == "freq_means":
                out[sl] = g(name, (LK, Q)).ravel()
            elif name == "freq_vars":
                out[sl] = (g(name, (LK, Q)) * state.freq_vars).ravel()
            elif name == "coeff_means":
                out[sl] = g(name, (LK, D)).ravel()
            elif name == "coeff_vars":
                out[sl] = (g(name, (LK, D)) * state.coeff_vars).ravel()
            elif name == "noise_precision":
                out[sl] = g(name, (1,)) * state.noise_precision
            elif name == "weights":
                out[sl] = g(name, (spec.L,)) * spec.weights
            elif name == "lengthscales":
                out[sl] = (g(name, (spec.L, Q)) * spec.lengthscales).ravel()
            elif name == "inverse_periods":
                u = v[sl]
                out[sl] = g(name, (spec.L, Q))[self._period_mask()] * expit(u)
        if state.variational_phases:
            ga = g("phase_alpha", (LK,))
            gb = g("phase_beta", (LK,))
            sl_lo = self.slices.get("phase_lower")
            sl_w = self.slices.get("phase_width")
            r = expit(v[sl_w]) if sl_w is not None else None
            if sl_lo is not None:
                t = expit(v[sl_lo])
                dalpha = TWO_PI * t * (1.0 - t)
                dbeta_dalpha = (1.0 - r) if r is not None else 0.0
                out[sl_lo] = (ga + gb * dbeta_dalpha) * dalpha
            if sl_w is not None:
                out[sl_w] = gb * (TWO_PI - state.phases.alpha) * r * (1.0 - r)


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray
    layout: Layout

    def unpack(self):
        return self.layout.unpack(self.values)


def pack(state: VariationalState, spec: KernelSpec, frozen: Iterable[str] = ()) -> ParameterVector:
    layout = Layout(state, spec, frozenset(frozen))
    return ParameterVector(layout.pack(state, spec), layout)


def unpack(v, template=None, frozen: Iterable[str] = ()):
    """Map a flat vector back to ``(state, spec)``.

    ``v`` is either a :class:`ParameterVector` or a raw array; a raw array
    needs ``template`` as a ``(state, spec)`` pair.
    """
    if isinstance(v, ParameterVector):
        return v.layout.unpack(v.values)
    if template is None:
        raise ParameterError("raw vectors need a (state, spec) template")
    layout = Layout(template[0], template[1], frozenset(frozen))
    return layout.unpack(v)
