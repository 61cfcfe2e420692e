"""Time the compiled and pure-numpy feature-moment kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeats 5] [--threads 1]

For every problem size both backends run the forward moments and their
vector-Jacobian product; the script checks that they agree and prints the
best-of-``repeats`` wall time and the speed-up.
"""

import argparse
import time

import numpy as np

from vssgp import _backend
from vssgp.features import feature_moments, feature_moments_vjp
from vssgp.model import FixedPhases, KernelSpec, VariationalState

SIZES = [(200, 1, 20), (1000, 1, 50), (4000, 1, 50), (2000, 3, 100)]


def make_problem(N, Q, LK, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3.0, 3.0, size=(N, Q))
    state = VariationalState(
        inducing_inputs=rng.uniform(-3.0, 3.0, size=(LK, Q)),
        freq_means=rng.standard_normal((LK, Q)),
        freq_vars=rng.uniform(0.05, 0.5, size=(LK, Q)),
        phases=FixedPhases(rng.uniform(0.0, 2.0 * np.pi, size=LK)),
        coeff_means=np.zeros((LK, 1)),
        coeff_vars=np.ones((LK, 1)),
        noise_precision=10.0,
    )
    spec = KernelSpec.from_arrays([1.0], np.full((1, Q), 0.7), np.full((1, Q), 0.2))
    g_phi = rng.standard_normal((N, LK))
    g_diag = rng.standard_normal((N, LK))
    return X, state, spec, g_phi, g_diag


def best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled backend not built; only the numpy fallback is available")
    print(f"{'N':>6} {'Q':>2} {'LK':>4} {'pass':>8} " + " ".join(f"{b:>10}" for b in backends)
          + f" {'speed-up':>9} {'max diff':>9}")
    for N, Q, LK in SIZES:
        X, state, spec, g_phi, g_diag = make_problem(N, Q, LK)
        passes = {
            "forward": lambda: feature_moments(X, state, spec),
            "vjp": lambda: feature_moments_vjp(X, state, spec, g_phi, g_diag),
        }
        for label, fn in passes.items():
            times, outputs = {}, {}
            for b in backends:
                _backend.use(b, num_threads=args.threads)
                outputs[b] = fn()
                times[b] = best_time(fn, args.repeats)
            if label == "forward":
                flat = {b: np.concatenate([o.ephi.ravel(), o.ediag.ravel()]) for b, o in outputs.items()}
            else:
                flat = {b: np.concatenate([np.ravel(v) for v in o.values()]) for b, o in outputs.items()}
            ref = flat["python"]
            diff = max(float(np.max(np.abs(f - ref))) for f in flat.values())
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            print(f"{N:>6} {Q:>2} {LK:>4} {label:>8} "
                  + " ".join(f"{times[b] * 1e3:>8.2f}ms" for b in backends)
                  + f" {speed:>8.1f}x {diff:>9.1e}")
    _backend.use("compiled" if "compiled" in backends else "python")


if __name__ == "__main__":
    main()
