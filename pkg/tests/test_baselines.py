import math

import numpy as np
import pytest
from scipy import stats

import vssgp.training as training
from vssgp.baselines import (
    exact_gp,
    fit_exact_gp,
    fit_random_projections,
    fit_ssgp,
    mc_log_evidence,
    point_mass_state,
)
from vssgp.features import phi_matrix
from vssgp.imputation import rmse, synthetic_sinusoid
from vssgp.model import KernelSpec, VariationalPhases, kernel_matrix
from vssgp.oracles import gaussian_log_marginal_woodbury, random_data, random_spec, random_state
from vssgp.predict import predict_moments
from vssgp.training import FitConfig, init_state


@pytest.fixture
def se_spec():
    return KernelSpec.from_arrays([1.0], [[0.5]], [[0.0]])


class TestSSGP:
    def test_objective_is_marginal_likelihood_throughout(self, rng, monkeypatch):
        X, Y = random_data(rng, 15, 1, 1)
        spec = random_spec(rng, 1, 1)
        checked = []
        original = training.bound_and_gradient

        def spy(v, data, config, layout=None, batch=None):
            value, g = original(v, data, config, layout, batch)
            state, spec_v = layout.unpack(v)
            Phi = phi_matrix(data[0], state.freq_means, state.phases.b, state.inducing_inputs, spec_v)
            ref = gaussian_log_marginal_woodbury(Phi, data[1], state.noise_precision)
            checked.append(abs(value - ref) / max(1.0, abs(ref)))
            return value, g

        monkeypatch.setattr(training, "bound_and_gradient", spy)
        model = fit_ssgp((X, Y), spec, 4, FitConfig(max_iters=20))
        assert len(checked) > 20
        assert max(checked) < 1e-8
        assert np.all(model.state.freq_vars == 0)

    def test_training_error_falls_with_more_features(self):
        spec = KernelSpec.from_arrays([1.0], [[1.0]], [[0.0]])
        means = []
        for K in (2, 5, 10, 20):
            errs = []
            for seed in range(5):
                data, _ = synthetic_sinusoid(n=100, seed=seed, period=6.0)
                model = fit_ssgp(data, spec, K, FitConfig(max_iters=100, seed=seed))
                errs.append(rmse(model.predict(data.X)[0][:, 0], data.Y[:, 0]))
            means.append(np.mean(errs))
        assert np.all(np.diff(means) <= 0), means

    def test_deterministic(self, se_spec):
        data, _ = synthetic_sinusoid(n=60, seed=3)
        a = fit_ssgp(data, se_spec, 5, FitConfig(max_iters=30, seed=2))
        b = fit_ssgp(data, se_spec, 5, FitConfig(max_iters=30, seed=2))
        assert a.trace.values == b.trace.values
        np.testing.assert_array_equal(a.state.freq_means, b.state.freq_means)

    def test_point_mass_collapses_phases(self, rng):
        state = random_state(rng, 0, 1, 3, 1, 1, variational_phases=True)
        pm = point_mass_state(state)
        assert not pm.variational_phases
        np.testing.assert_allclose(pm.phases.b, state.phases.midpoints())
        assert np.all(pm.freq_vars == 0)


class TestRandomProjections:
    def test_no_iterations_with_fixed_hypers(self, se_spec):
        data, _ = synthetic_sinusoid(n=50)
        model = fit_random_projections(data, se_spec, 10, FitConfig(seed=1))
        assert len(model.trace) == 0 and model.trace.n_evals == 0
        init = point_mass_state(init_state(data, se_spec, 10, 1))
        np.testing.assert_array_equal(model.state.freq_means, init.freq_means)

    def test_shared_prediction_path(self, se_spec):
        data, _ = synthetic_sinusoid(n=50)
        model = fit_random_projections(data, se_spec, 10, FitConfig(seed=1))
        Xs = np.linspace(-1.0, 11.0, 17)[:, None]
        direct = predict_moments(Xs, model.state, model.spec, model.solve)
        for a, b in zip(model.predict(Xs), direct):
            np.testing.assert_array_equal(a, b)

    def test_large_basis_high_precision_configuration(self, se_spec):
        data, _ = synthetic_sinusoid(n=200)
        model = fit_random_projections(data, se_spec, 500, FitConfig(), tau=100.0)
        assert model.state.LK == 500
        assert model.state.noise_precision == 100.0
        assert model.solve.means.shape == (500, 1)
        assert np.all(np.isfinite(model.predict(data.X)[0]))

    def test_optimised_hypers_improve_objective(self, se_spec):
        data, _ = synthetic_sinusoid(n=80)
        fixed = fit_random_projections(data, se_spec, 10, FitConfig(max_iters=50))
        tuned = fit_random_projections(data, se_spec, 10, FitConfig(max_iters=50), optimize_hypers=True)
        np.testing.assert_array_equal(fixed.state.freq_means, tuned.state.freq_means)
        assert tuned.trace.values[-1] > tuned.trace.initial_value


class TestExactGP:
    def test_single_point(self):
        spec = KernelSpec.from_arrays([2.0], [[1.0]], [[0.0]])
        gp = exact_gp((np.array([[0.3]]), np.array([[0.8]])), spec, 4.0)
        assert gp.log_marginal == pytest.approx(stats.norm(0.0, math.sqrt(2.25)).logpdf(0.8), rel=1e-14)

    def test_noiseless_interpolation(self, rng):
        X = np.sort(rng.uniform(0, 5, size=(6, 1)), axis=0)
        Y = np.sin(X)
        gp = exact_gp((X, Y), KernelSpec.from_arrays([1.0], [[1.0]], [[0.0]]), 1e8)
        np.testing.assert_allclose(gp.predict(X)[0], Y, atol=1e-4)

    def test_direct_inverse(self, rng):
        X, Y = random_data(rng, 30, 2, 1)
        spec = random_spec(rng, 2, 2)
        tau = 5.0
        gp = exact_gp((X, Y), spec, tau)
        C = kernel_matrix(spec, X, X) + np.eye(30) / tau
        Cinv = np.linalg.inv(C)
        _, logdet = np.linalg.slogdet(C)
        ref = -0.5 * float(Y[:, 0] @ Cinv @ Y[:, 0]) - 0.5 * logdet - 15 * math.log(2 * math.pi)
        assert gp.log_marginal == pytest.approx(ref, abs=1e-8)
        Xs = rng.normal(size=(4, 2))
        Ks = kernel_matrix(spec, Xs, X)
        mean, var = gp.predict(Xs)
        np.testing.assert_allclose(mean, Ks @ Cinv @ Y, atol=1e-8)
        np.testing.assert_allclose(var, spec.weights.sum() - np.einsum("ij,jk,ik->i", Ks, Cinv, Ks) + 1 / tau,
                                   atol=1e-8)

    def test_size_cap(self, se_spec):
        with pytest.raises(ValueError, match="limited"):
            exact_gp((np.zeros((5, 1)), np.zeros((5, 1))), se_spec, 1.0, cap=4)

    def test_hyperparameter_fit_improves(self, se_spec):
        data, _ = synthetic_sinusoid(n=60)
        before = exact_gp(data, se_spec, 1.0).log_marginal
        assert fit_exact_gp(data, se_spec, 1.0, max_iters=30).log_marginal > before


class TestMonteCarloEvidence:
    @pytest.fixture
    def tiny(self, se_spec):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (8, 1))
        Y = np.sin(3 * X) + 0.1 * rng.standard_normal((8, 1))
        return X, Y, se_spec

    def test_converges_to_exact_gp(self, tiny):
        X, Y, spec = tiny
        exact = exact_gp((X, Y), spec, 10.0).log_marginal
        gaps, errs = [], []
        for K in (25, 100, 400):
            state = init_state((X, Y), spec, K, seed=0, tau=10.0, variational_phases=True)
            est, se = mc_log_evidence((X, Y), spec, state, 20_000, seed=1)
            gaps.append(exact - est)
            errs.append(se)
        # finite-basis bias shrinks like 1/K: quadrupling K cuts the gap by well over half
        assert gaps[1] < 0.5 * gaps[0] and gaps[2] < 0.5 * gaps[1]
        assert abs(gaps[2]) < 0.01 + 3 * errs[2]

    def test_noise_dominated_limit(self, tiny):
        X, Y, spec = tiny
        tau = 1e-6
        state = init_state((X, Y), spec, 5, tau=tau, variational_phases=True)
        est, _ = mc_log_evidence((X, Y), spec, state, 10_000)
        ref = float(np.sum(stats.norm(0.0, 1.0 / math.sqrt(tau)).logpdf(Y)))
        assert est == pytest.approx(ref, abs=1e-4)

    def test_deterministic_given_seed(self, tiny):
        X, Y, spec = tiny
        state = init_state((X, Y), spec, 5, variational_phases=True)
        a = mc_log_evidence((X, Y), spec, state, 10_000, seed=3)
        b = mc_log_evidence((X, Y), spec, state, 10_000, seed=3)
        assert a == b
        assert mc_log_evidence((X, Y), spec, state, 10_000, seed=4) != a

    def test_fixed_phases_and_woodbury_path(self, rng, se_spec):
        X, Y = random_data(rng, 12, 1, 1)
        state = init_state((X, Y), se_spec, 3)
        est, se = mc_log_evidence((X, Y), se_spec, state, 10_000)
        w = np.random.default_rng(0).standard_normal((2000, 3, 1))
        b = np.broadcast_to(state.phases.b, (2000, 3))
        Phi = phi_matrix(X, w, b, state.inducing_inputs, se_spec)
        logs = [gaussian_log_marginal_woodbury(P, Y, state.noise_precision) for P in Phi]
        ref = float(np.logaddexp.reduce(logs) - math.log(2000))
        assert math.isfinite(est) and se > 0
        assert est == pytest.approx(ref, abs=0.5)

    def test_variational_state_uses_uniform_phases(self, tiny):
        X, Y, spec = tiny
        state = init_state((X, Y), spec, 4, variational_phases=True)
        narrow = state.replace(phases=VariationalPhases(np.zeros(4), np.full(4, 0.1)))
        # the prior draw ignores the posterior phase interval
        assert mc_log_evidence((X, Y), spec, state, 5000) == mc_log_evidence((X, Y), spec, narrow, 5000)
