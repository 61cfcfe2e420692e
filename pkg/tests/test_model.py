import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vssgp.model import (
    TWO_PI,
    Dataset,
    FixedPhases,
    KernelSpec,
    Layout,
    ParameterError,
    SMComponent,
    VariationalPhases,
    VariationalState,
    column_components,
    kernel_exact,
    kernel_matrix,
    pack,
    unpack,
)
from vssgp.oracles import random_spec, random_state


def _state(LK=2, Q=1, D=1, tau=1.0, **kw):
    base = dict(
        inducing_inputs=np.zeros((LK, Q)),
        freq_means=np.zeros((LK, Q)),
        freq_vars=np.ones((LK, Q)),
        phases=FixedPhases(np.zeros(LK)),
        coeff_means=np.zeros((LK, D)),
        coeff_vars=np.ones((LK, D)),
        noise_precision=tau,
    )
    base.update(kw)
    return VariationalState(**base)


class TestTypes:
    def test_dataset_shapes(self):
        d = Dataset(np.zeros((3, 2)), np.ones((3, 1)))
        assert (d.N, d.Q, d.D) == (3, 2, 1)

    def test_dataset_rejects_nonfinite(self):
        with pytest.raises(ParameterError, match=r"X\[1, 0\]"):
            Dataset(np.array([[0.0], [np.nan]]), np.zeros((2, 1)))

    def test_dataset_rejects_empty_and_mismatch(self):
        with pytest.raises(ParameterError):
            Dataset(np.zeros((0, 1)), np.zeros((0, 1)))
        with pytest.raises(ParameterError):
            Dataset(np.zeros((3, 1)), np.zeros((2, 1)))

    @pytest.mark.parametrize("weight,ls,ip", [(0.0, [1.0], [0.0]), (1.0, [-1.0], [0.0]),
                                              (1.0, [1.0], [-0.1])])
    def test_component_invariants(self, weight, ls, ip):
        with pytest.raises(ParameterError):
            SMComponent(weight, np.array(ls), np.array(ip))

    def test_spec_needs_a_component(self):
        with pytest.raises(ParameterError):
            KernelSpec(())

    def test_phase_ordering(self):
        with pytest.raises(ParameterError):
            VariationalPhases(np.array([1.0]), np.array([0.5]))
        with pytest.raises(ParameterError):
            VariationalPhases(np.array([0.0]), np.array([7.0]))

    def test_state_rejects_zero_coeff_var(self):
        with pytest.raises(ParameterError, match="coeff_vars"):
            _state(coeff_vars=np.zeros((2, 1)))

    def test_column_components(self):
        assert column_components(6, 2).tolist() == [0, 0, 0, 1, 1, 1]
        with pytest.raises(ParameterError):
            column_components(5, 2)


class TestPack:
    def test_unit_noise_packs_to_zero(self):
        spec = KernelSpec.from_arrays([1.0], [[1.0]], [[0.0]])
        pv = pack(_state(tau=1.0), spec)
        assert pv.values[pv.layout.slices["noise_precision"]][0] == 0.0

    def test_lengthscale_e_packs_to_one(self):
        spec = KernelSpec.from_arrays([1.0], [[math.e]], [[0.0]])
        pv = pack(_state(), spec)
        assert pv.values[pv.layout.slices["lengthscales"]][0] == pytest.approx(1.0, abs=1e-15)

    def test_zero_vector_unpacks_to_unit_values(self):
        spec = KernelSpec.from_arrays([2.0], [[3.0]], [[0.0]])
        layout = Layout(_state(tau=5.0), spec)
        state, spec_out = layout.unpack(np.zeros(layout.size))
        assert state.noise_precision == 1.0
        assert np.all(spec_out.lengthscales == 1.0)
        assert np.all(state.freq_means == 0.0)

    def test_infinite_entry_rejected(self):
        spec = KernelSpec.from_arrays([1.0], [[1.0]], [[0.0]])
        layout = Layout(_state(), spec)
        v = np.zeros(layout.size)
        v[3] = np.inf
        with pytest.raises(ParameterError, match="entry 3"):
            layout.unpack(v)

    def test_length_mismatch_rejected(self):
        spec = KernelSpec.from_arrays([1.0], [[1.0]], [[0.0]])
        layout = Layout(_state(), spec)
        with pytest.raises(ParameterError, match="length"):
            layout.unpack(np.zeros(layout.size + 1))

    def test_raw_unpack_needs_template(self):
        with pytest.raises(ParameterError):
            unpack(np.zeros(3))

    def test_frozen_blocks_are_skipped(self):
        spec = KernelSpec.from_arrays([1.0], [[1.0]], [[0.0]])
        full = Layout(_state(), spec)
        frozen = Layout(_state(), spec, frozenset({"inducing_inputs", "weights"}))
        assert frozen.size == full.size - 3
        with pytest.raises(ParameterError):
            Layout(_state(), spec, frozenset({"nonsense"}))

    def test_zero_inverse_periods_not_trained(self):
        spec = KernelSpec.from_arrays([1.0, 1.0], [[1.0, 1.0]] * 2, [[0.0, 0.3], [0.0, 0.0]])
        layout = Layout(_state(LK=2, Q=2), spec)
        assert layout.slices["inverse_periods"].stop - layout.slices["inverse_periods"].start == 1
        _, out = layout.unpack(layout.pack(_state(LK=2, Q=2), spec) + 0.1)
        assert out.inverse_periods[0, 0] == 0.0 and out.inverse_periods[1, 1] == 0.0

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), variational=st.booleans())
    def test_round_trip_state(self, seed, variational):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, 2, 2)
        state = random_state(rng, 0, 2, 3, 2, 2, variational_phases=variational)
        back, spec_back = unpack(pack(state, spec))
        for name in ("inducing_inputs", "freq_means", "freq_vars", "coeff_means", "coeff_vars"):
            np.testing.assert_allclose(getattr(back, name), getattr(state, name), rtol=1e-12, atol=1e-14)
        assert back.noise_precision == pytest.approx(state.noise_precision, rel=1e-12)
        if variational:
            np.testing.assert_allclose(back.phases.alpha, state.phases.alpha, rtol=1e-12)
            np.testing.assert_allclose(back.phases.beta, state.phases.beta, rtol=1e-12)
        else:
            np.testing.assert_array_equal(back.phases.b, state.phases.b)
        np.testing.assert_allclose(spec_back.weights, spec.weights, rtol=1e-12)
        np.testing.assert_allclose(spec_back.lengthscales, spec.lengthscales, rtol=1e-12)
        np.testing.assert_allclose(spec_back.inverse_periods, spec.inverse_periods, rtol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_round_trip_vector(self, seed):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, 2, 2)
        state = random_state(rng, 0, 2, 2, 2, 1, variational_phases=True)
        layout = Layout(state, spec)
        v = rng.uniform(-3.0, 3.0, layout.size)
        np.testing.assert_allclose(layout.pack(*layout.unpack(v)), v, rtol=1e-12, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_unpacked_phases_ordered(self, seed):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, 1, 1)
        state = random_state(rng, 0, 1, 4, 1, 1, variational_phases=True)
        layout = Layout(state, spec)
        out, _ = layout.unpack(rng.normal(0.0, 20.0, layout.size))
        assert np.all(0 <= out.phases.alpha)
        assert np.all(out.phases.alpha <= out.phases.beta)
        assert np.all(out.phases.beta <= TWO_PI)


class TestKernel:
    def test_zero_lag(self, rng):
        spec = random_spec(rng, 3, 2)
        x = rng.normal(size=2)
        assert kernel_exact(spec, x, x) == pytest.approx(spec.weights.sum(), rel=1e-15)

    def test_squared_exponential_unit_lag(self):
        spec = KernelSpec.from_arrays([1.0], [[1.0]], [[0.0]])
        assert kernel_exact(spec, [1.0], [0.0]) == pytest.approx(0.6065306597126334, rel=1e-14)

    def test_additive_over_components(self, rng):
        spec = random_spec(rng, 2, 3)
        x, y = rng.normal(size=(2, 3))
        parts = 0.0
        for c in spec.components:
            d = x - y
            parts += c.weight * math.exp(-0.5 * sum((d / c.lengthscales) ** 2)) * math.prod(
                math.cos(TWO_PI * di * pi) for di, pi in zip(d, c.inverse_periods))
        assert kernel_exact(spec, x, y) == pytest.approx(parts, rel=1e-13)

    def test_matrix_matches_pairwise(self, rng):
        spec = random_spec(rng, 2, 2)
        X1, X2 = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
        ref = np.array([[kernel_exact(spec, a, b) for b in X2] for a in X1])
        np.testing.assert_allclose(kernel_matrix(spec, X1, X2), ref, rtol=1e-13)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, 2, 2)
        x, y = rng.normal(0.0, 3.0, size=(2, 2))
        k = kernel_exact(spec, x, y)
        assert k == kernel_exact(spec, y, x)
        assert abs(k) <= spec.weights.sum() + 1e-12
