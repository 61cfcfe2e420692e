"""Imputation benchmarks: gap construction, metrics and method runners."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from vssgp._rng import substream
from vssgp.model import Dataset, KernelSpec

MAX_PACKING_ATTEMPTS = 10_000
REPORT_COLUMNS = ("method", "train_rmse", "test_rmse", "train_stft_rmse", "test_stft_rmse",
                  "seconds", "config")


@dataclass(frozen=True)
class ImputationTask:
    """A series with contiguous segments withheld for testing."""

    series: Dataset
    segments: tuple
    train_mask: np.ndarray
    test_mask: np.ndarray
    seed: int

    @property
    def train(self):
        return self.series.X[self.train_mask], self.series.Y[self.train_mask]

    @property
    def test(self):
        return self.series.X[self.test_mask], self.series.Y[self.test_mask]


def make_imputation_task(series, n_segments, seg_length, seed) -> ImputationTask:
    """Withhold ``n_segments`` disjoint runs of ``seg_length`` consecutive rows.

    Start positions are drawn jointly and redrawn until no two segments
    overlap; more than 10^4 rejected draws is an error.
    """
    if not isinstance(series, Dataset):
        series = Dataset(*series)
    N = series.N
    n_segments, seg_length = int(n_segments), int(seg_length)
    if n_segments < 0 or seg_length < 0:
        raise ValueError("segment count and length must be non-negative")
    if n_segments > 0 and seg_length < 1:
        raise ValueError("segments must have positive length")
    if 2 * n_segments * seg_length >= N and n_segments > 0:
        raise ValueError(f"{n_segments} segments of {seg_length} need fewer than half of the "
                         f"{N} points")
    rng = substream(seed, "imputation")
    starts = np.empty(0, dtype=int)
    if n_segments > 0:
        for _ in range(MAX_PACKING_ATTEMPTS):
            starts = np.sort(rng.integers(0, N - seg_length + 1, size=n_segments))
            if np.all(np.diff(starts) >= seg_length):
                break
        else:
            raise RuntimeError(f"could not place {n_segments} disjoint segments after "
                               f"{MAX_PACKING_ATTEMPTS} attempts")
    test = np.zeros(N, dtype=bool)
    for s in starts:
        test[s:s + seg_length] = True
    test.setflags(write=False)
    train = ~test
    train.setflags(write=False)
    segments = tuple((int(s), seg_length) for s in starts)
    return ImputationTask(series, segments, train, test, int(seed))


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise ValueError("rmse of empty vectors")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def stft_magnitude(signal, sample_rate_hz):
    """Hann-windowed magnitude spectra, frames of 25 ms every 12 ms."""
    signal = np.asarray(signal, dtype=float).ravel()
    if sample_rate_hz <= 0:
        raise ValueError("sample rate must be positive")
    frame = int(round(0.025 * sample_rate_hz))
    hop = max(int(round(0.012 * sample_rate_hz)), 1)
    if frame < 1 or signal.size < frame:
        raise ValueError(f"signal of {signal.size} samples is shorter than one {frame}-sample frame")
    n_frames = 1 + (signal.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    window = np.hanning(frame)
    return np.abs(np.fft.rfft(signal[idx] * window, axis=1))


def stft_rmse(pred, truth, sample_rate_hz):
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    return rmse(stft_magnitude(pred, sample_rate_hz), stft_magnitude(truth, sample_rate_hz))


# ---------------------------------------------------------------------------
# Synthetic signals
# ---------------------------------------------------------------------------


def synthetic_sinusoid(n=200, noise=0.1, seed=0, period=2.0, x_max=10.0):
    """Noisy sinusoid on an even grid of ``n`` points in [0, x_max)."""
    rng = substream(seed, "synthetic-sinusoid")
    x = np.linspace(0.0, x_max, n, endpoint=False)
    f = np.sin(2.0 * math.pi * x / period)
    y = f + noise * rng.standard_normal(n)
    return Dataset(x[:, None], y[:, None]), f


def synthetic_audio(n=4000, sample_rate=16000.0, seed=0, noise=0.01):
    """Voiced-speech-like signal: harmonics of a drifting pitch under an envelope.

    Times are in milliseconds so that the input scale is comparable to the
    unit-lengthscale prior.
    """
    rng = substream(seed, "synthetic-audio")
    t = np.arange(n) / sample_rate
    f0 = 140.0 + 20.0 * np.sin(2.0 * math.pi * 3.0 * t)
    phase = 2.0 * math.pi * np.cumsum(f0) / sample_rate
    amps = 1.0 / (1.0 + np.arange(5)) ** 1.2
    offsets = rng.uniform(0.0, 2.0 * math.pi, size=amps.size)
    y = sum(a * np.sin((h + 1) * phase + o) for h, (a, o) in enumerate(zip(amps, offsets)))
    envelope = 0.6 + 0.4 * np.sin(2.0 * math.pi * 4.0 * t + rng.uniform(0.0, 2.0 * math.pi))
    y = 0.1 * envelope * y + noise * rng.standard_normal(n)
    return Dataset(1000.0 * t[:, None], y[:, None])


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    method: str
    train_rmse: float
    test_rmse: Optional[float]
    train_stft_rmse: Optional[float] = None
    test_stft_rmse: Optional[float] = None
    seconds: Optional[float] = None
    config: dict = field(default_factory=dict)

    def row(self, timing=True):
        def num(v):
            return "" if v is None else repr(float(v))

        return [self.method, num(self.train_rmse), num(self.test_rmse), num(self.train_stft_rmse),
                num(self.test_stft_rmse), num(self.seconds) if timing else "",
                json.dumps(self.config, sort_keys=True)]


def fit_method(method, train, spec: KernelSpec, K, config, tau=10.0, variational_phases=False):
    """Fit ``vssgp``, ``ssgp``, ``rp`` (hyperparameters fixed) or ``rp-opt``."""
    from vssgp.baselines import fit_random_projections, fit_ssgp
    from vssgp.training import fit_vssgp

    if method == "vssgp":
        return fit_vssgp(train, spec, K, config, tau, variational_phases)
    if method == "ssgp":
        return fit_ssgp(train, spec, K, config, tau)
    if method == "rp":
        return fit_random_projections(train, spec, K, config, False, tau)
    if method == "rp-opt":
        return fit_random_projections(train, spec, K, config, True, tau)
    raise ValueError(f"unknown method {method!r}")


def run_imputation(task: ImputationTask, method, spec: KernelSpec, K, config, tau=10.0,
                   variational_phases=False, sample_rate=None, echo=None,
                   standardize=False) -> RunReport:
    """Fit on the training rows and score the predictive mean on both sets.

    STFT errors, when ``sample_rate`` is given, are computed on the
    concatenated training (respectively withheld) samples.
    """
    from vssgp.io import Standardization

    Xtr, Ytr = task.train
    std = Standardization.fit(Ytr) if standardize else None
    t0 = time.perf_counter()
    model = fit_method(method, (Xtr, Ytr if std is None else std.forward(Ytr)), spec, K, config,
                       tau, variational_phases)
    seconds = time.perf_counter() - t0

    def predict(X):
        mean, _ = model.predict(X)
        return mean if std is None else std.inverse_mean(mean)

    pred_tr = predict(Xtr)
    report = RunReport(method, rmse(pred_tr, Ytr), None, seconds=seconds, config=dict(echo or {}))
    report.train_stft_rmse = _optional_stft(pred_tr, Ytr, sample_rate)
    if task.test_mask.any():
        Xte, Yte = task.test
        pred_te = predict(Xte)
        report.test_rmse = rmse(pred_te, Yte)
        report.test_stft_rmse = _optional_stft(pred_te, Yte, sample_rate)
    return report


def _optional_stft(pred, truth, sample_rate):
    """STFT error, or None without a sample rate or when shorter than one frame."""
    if sample_rate is None or np.size(truth) < int(round(0.025 * sample_rate)):
        return None
    return stft_rmse(pred, truth, sample_rate)
