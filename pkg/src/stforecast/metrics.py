"""Forecast metrics: RMSE, the delay/threshold hit-rate matrix, and periodograms.

The hit-rate matrix only rewards predictions that reach the observed level,
so it never penalizes over-prediction. Always report it next to the RMSE.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


def rmse(actual, predicted) -> float:
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {p.shape}")
    if a.size == 0:
        raise ValueError("rmse of empty series")
    return math.sqrt(float(np.mean((a - p) ** 2)))


@dataclass
class PrecisionMatrix:
    """``beta[d, i-1]``: share of slots with ``actual >= i`` that the forecast
    reached ``i`` at the slot itself or up to ``d`` slots earlier.

    Thresholds never reached by the actual series give NaN rows of ``beta``.
    """

    beta: np.ndarray  # [delay 0..m, threshold 1..n]
    n_events: np.ndarray  # N_i, [threshold]
    n_hits: np.ndarray  # N_{i,d}, [delay, threshold]

    @property
    def max_delay(self) -> int:
        return self.beta.shape[0] - 1

    @property
    def max_threshold(self) -> int:
        return self.beta.shape[1]

    def write_csv(self, path, long: bool = False, undefined: str = "NA") -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if long:
                writer.writerow(["delay", "threshold", "beta", "n_events", "n_hits"])
                for d in range(self.max_delay + 1):
                    for i in range(self.max_threshold):
                        b = self.beta[d, i]
                        writer.writerow([d, i + 1, undefined if np.isnan(b) else repr(float(b)),
                                         int(self.n_events[i]), int(self.n_hits[d, i])])
                return
            writer.writerow(["delay\\threshold"] + [str(i + 1) for i in range(self.max_threshold)])
            for d in range(self.max_delay + 1):
                writer.writerow([d] + [undefined if np.isnan(b) else repr(float(b))
                                       for b in self.beta[d]])


def precision_matrix(actual, predicted, max_delay: int = 3, max_threshold: int = 2) -> PrecisionMatrix:
    """Hit rates over thresholds ``1..max_threshold`` and delays ``0..max_delay``.

    A slot ``t`` with ``actual[t] >= i`` is a hit at delay ``d`` when
    ``predicted[s] >= i`` for some ``s`` in ``t-d .. t`` (clipped at 0).
    """
    x = np.asarray(actual, dtype=np.float64)
    xp = np.asarray(predicted, dtype=np.float64)
    if x.shape != xp.shape or x.ndim != 1:
        raise ValueError("actual and predicted must be aligned 1-D series")
    if max_delay < 0 or max_threshold < 1:
        raise ValueError("need max_delay >= 0 and max_threshold >= 1")
    n = x.size
    # running max of the forecast over the trailing window t-d..t
    window_max = np.empty((max_delay + 1, n))
    window_max[0] = xp
    for d in range(1, max_delay + 1):
        shifted = np.concatenate([np.full(d, -np.inf), xp[:-d]]) if d < n else np.full(n, -np.inf)
        window_max[d] = np.maximum(window_max[d - 1], shifted)
    thresholds = np.arange(1, max_threshold + 1)
    events = x[None, :] >= thresholds[:, None]  # [threshold, t]
    n_events = events.sum(axis=1)
    reached = window_max[:, None, :] >= thresholds[None, :, None]  # [delay, threshold, t]
    n_hits = (reached & events[None]).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.where(n_events[None, :] > 0, n_hits / np.maximum(n_events, 1)[None, :], np.nan)
    return PrecisionMatrix(beta, n_events, n_hits)


def mean_precision_matrix(mats) -> np.ndarray:
    """Average of several matrices, ignoring undefined entries."""
    stack = np.stack([m.beta for m in mats])
    with np.errstate(invalid="ignore"):
        return np.nanmean(stack, axis=0) if np.any(~np.isnan(stack)) else stack[0]


@dataclass
class Spectrum:
    frequency: np.ndarray  # cycles per time unit, DC excluded
    power: np.ndarray
    dc: float

    def peak_frequency(self) -> float:
        return float(self.frequency[np.argmax(self.power)])


def spectrum(series, dt: float = 1.0) -> Spectrum:
    """One-sided periodogram normalized so that ``dc + power.sum() == sum(x**2)``."""
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise ValueError("spectrum needs at least two samples")
    X = np.fft.rfft(x)
    p = np.abs(X) ** 2 / n
    # fold negative frequencies in, except DC and (for even n) Nyquist
    fold = np.full(p.size, 2.0)
    fold[0] = 1.0
    if n % 2 == 0:
        fold[-1] = 1.0
    p *= fold
    freq = np.fft.rfftfreq(n, d=dt)
    return Spectrum(freq[1:], p[1:], float(p[0]))
