import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from vssgp import _backend
from vssgp.features import feature_moments, feature_moments_vjp
from vssgp.oracles import random_spec, random_state

ROOT = Path(__file__).resolve().parents[1]
compiled = pytest.mark.skipif("compiled" not in _backend.available(), reason="extension not built")


@pytest.fixture
def restore_backend():
    prev = _backend.name()
    yield
    _backend.use(prev, num_threads=1)


def _instance(seed, variational):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, 2, 2)
    X = rng.uniform(-2, 2, size=(int(rng.integers(1, 40)), 2))
    state = random_state(rng, X, 2, int(rng.integers(1, 5)), 2, 1, variational_phases=variational)
    g = rng.normal(size=(2, X.shape[0], state.LK))
    return X, state, spec, g


class TestSelection:
    def test_python_always_available(self):
        assert "python" in _backend.available()

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            _backend.use("fortran")

    def test_environment_override(self):
        code = "from vssgp import _backend; print(_backend.name())"
        env = dict(os.environ, VSSGP_BACKEND="python")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"

    @compiled
    def test_compiled_is_default(self):
        env = {k: v for k, v in os.environ.items() if k != "VSSGP_BACKEND"}
        code = "from vssgp import _backend; print(_backend.name())"
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "compiled"


@compiled
class TestAgreement:
    @settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(seed=st.integers(0, 2**32 - 1), variational=st.booleans())
    def test_forward_and_vjp(self, restore_backend, seed, variational):
        X, state, spec, (gp, gd) = _instance(seed, variational)
        out = {}
        for b in ("python", "compiled"):
            _backend.use(b)
            out[b] = (feature_moments(X, state, spec), feature_moments_vjp(X, state, spec, gp, gd))
        (mp, vp), (mc, vc) = out["python"], out["compiled"]
        np.testing.assert_allclose(mc.ephi, mp.ephi, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(mc.ediag, mp.ediag, rtol=1e-12, atol=1e-13)
        assert vp.keys() == vc.keys()
        for k in vp:
            np.testing.assert_allclose(vc[k], vp[k], rtol=1e-10, atol=1e-11)

    def test_thread_count_does_not_change_results(self, restore_backend):
        X, state, spec, (gp, gd) = _instance(3, True)
        _backend.use("compiled", num_threads=1)
        one = feature_moments_vjp(X, state, spec, gp, gd)
        _backend.use("compiled", num_threads=4)
        four = feature_moments_vjp(X, state, spec, gp, gd)
        for k in one:
            np.testing.assert_array_equal(one[k], four[k])

    def test_benchmark_script(self):
        script = ROOT / "benchmarks" / "bench_kernels.py"
        out = subprocess.run([sys.executable, str(script), "--repeats", "1"], capture_output=True,
                             text=True, check=True, timeout=300)
        rows = [line.split() for line in out.stdout.splitlines()[1:]]
        assert [r[3] for r in rows] == ["forward", "vjp"] * 4
        assert all(float(r[-1]) < 1e-10 for r in rows)
