"""Exponential-kernel multivariate Hawkes processes.

Orientation convention used throughout the package: ``A[u, v]`` is the
excitation that an event on node ``v`` adds to the intensity of node ``u``,

    lambda_u(t) = mu_u + sum_{i: t_i < t} A[u, u_i] * w * exp(-w (t - t_i)).

So column ``v`` of ``A`` lists the offspring an event at ``v`` produces on
every node, and row ``u`` lists the parents that can trigger ``u``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._rng import make_rng
from .events import EventSequence


class StabilityError(ValueError):
    """The excitation matrix has spectral radius >= 1."""


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class HawkesModel:
    mu: np.ndarray
    A: np.ndarray
    w: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64).ravel()
        A = np.array(self.A, dtype=np.float64, ndmin=2)
        U = mu.size
        if U == 0 or A.shape != (U, U):
            raise ShapeError(f"mu has length {U} but A has shape {A.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(A))):
            raise ValueError("mu and A must be finite")
        if mu.min() < 0 or A.min() < 0:
            raise ValueError("mu and A must be nonnegative")
        if not (self.w > 0 and math.isfinite(self.w)):
            raise ValueError(f"kernel rate w must be positive, got {self.w}")
        mu.flags.writeable = False
        A.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "w", float(self.w))

    @property
    def num_nodes(self) -> int:
        return self.mu.size

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "A": self.A.tolist(), "w": self.w}

    @classmethod
    def from_dict(cls, d: dict) -> "HawkesModel":
        return cls(np.asarray(d["mu"], dtype=float), np.asarray(d["A"], dtype=float), float(d["w"]))


def save_model(model: HawkesModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> HawkesModel:
    with open(path) as fh:
        return HawkesModel.from_dict(json.load(fh))


def kernel(w: float, t):
    """Exponential triggering density ``w * exp(-w t)`` for ``t >= 0``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("kernel is only defined for t >= 0")
    out = w * np.exp(-w * t)
    return float(out) if out.ndim == 0 else out


def kernel_integral(w: float, s):
    """Integral of the kernel over ``[0, s]``: ``1 - exp(-w s)``."""
    return -np.expm1(-w * np.asarray(s, dtype=np.float64))


def intensity(model: HawkesModel, seq: EventSequence, u: int, t: float) -> float:
    """Conditional intensity of node ``u`` at time ``t`` (strictly earlier events only)."""
    if not 0 <= u < model.num_nodes:
        raise IndexError(f"node {u} out of range [0, {model.num_nodes})")
    if not 0 <= t <= seq.horizon:
        raise ValueError(f"t={t} outside [0, {seq.horizon}]")
    prior = seq.times < t
    dt = t - seq.times[prior]
    return float(model.mu[u] + np.sum(model.A[u, seq.nodes[prior]] * model.w * np.exp(-model.w * dt)))


@dataclass(frozen=True)
class IntensityTrace:
    times: np.ndarray
    lam: np.ndarray  # [node, time]


def intensity_trace(model: HawkesModel, seq: EventSequence, times) -> IntensityTrace:
    times = np.asarray(times, dtype=np.float64)
    lam = np.empty((model.num_nodes, times.size))
    for k, t in enumerate(times):
        prior = seq.times < t
        g = model.w * np.exp(-model.w * (t - seq.times[prior]))
        lam[:, k] = model.mu + model.A[:, seq.nodes[prior]] @ g
    return IntensityTrace(times, lam)


@njit(cache=True)
def _event_intensities(times, nodes, mu, A, w):
    # lambda_{u_i}(t_i) over earlier-indexed events, O(n U) via the
    # exponential recursion; simultaneous earlier events count with g(0) = w.
    n = times.size
    U = mu.size
    R = np.zeros(U)
    lam = np.empty(n)
    t_prev = 0.0
    for i in range(n):
        decay = math.exp(-w * (times[i] - t_prev))
        u = nodes[i]
        s = mu[u]
        for v in range(U):
            R[v] *= decay
            s += A[u, v] * R[v]
        lam[i] = s
        R[u] += w
        t_prev = times[i]
    return lam


def compensator(model: HawkesModel, seq: EventSequence) -> float:
    """Closed form of ``sum_u int_0^T lambda_u(t) dt``."""
    col = model.A.sum(axis=0)
    tail = kernel_integral(model.w, seq.horizon - seq.times)
    return float(model.mu.sum() * seq.horizon + np.sum(col[seq.nodes] * tail))


def log_likelihood(model: HawkesModel, seqs) -> float:
    """Point-process log-likelihood summed over independent sequences.

    Returns ``-inf`` when some observed event has zero intensity.
    """
    if isinstance(seqs, EventSequence):
        seqs = [seqs]
    total = 0.0
    for seq in seqs:
        if seq.num_nodes != model.num_nodes:
            raise ShapeError("sequence and model disagree on the number of nodes")
        lam = _event_intensities(seq.times, seq.nodes, model.mu, model.A, model.w)
        if lam.size and lam.min() <= 0:
            return float("-inf")
        total += math.fsum(np.log(lam)) - compensator(model, seq)
    return total


def spectral_radius(A, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Perron root of a square nonnegative matrix by power iteration.

    Iterates on ``A + I`` (same Perron vector, spectral radius shifted by
    one) so periodic matrices such as permutations still converge.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n == 0 or not np.any(A):
        return 0.0
    x = np.full(n, 1.0 / math.sqrt(n))
    est = 0.0
    for _ in range(max_iter):
        y = A @ x + x
        new = float(np.linalg.norm(y))
        x = y / new
        if abs(new - est) <= tol * max(1.0, new):
            est = new
            break
        est = new
    else:
        warnings.warn("spectral_radius: power iteration did not converge", RuntimeWarning)
    return max(est - 1.0, 0.0)


def branching_ratio(model: HawkesModel, u: int) -> float:
    """Expected number of direct offspring of an event at node ``u``."""
    return float(model.A[:, u].sum())


def stationary_rate(model: HawkesModel) -> np.ndarray:
    """Mean event rate per node, the solution of ``L = mu + A L``."""
    return np.linalg.solve(np.eye(model.num_nodes) - model.A, model.mu)


@njit(cache=True)
def _thin(state_t, excite, mu, A, w, horizon, amp, period, uniforms, out_t, out_u, n_out):
    # Ogata thinning against the bound sum_u lambda_u(t+), recomputed after
    # every candidate. The background is mu_u * (1 - amp cos(2 pi t / period)),
    # bounded by mu_u * (1 + amp). Returns (t, uniforms used, n_out, done).
    U = mu.size
    mu_bound = 0.0
    for v in range(U):
        mu_bound += mu[v] * (1.0 + amp)
    t = state_t
    k = 0
    while k + 1 < uniforms.size:
        if n_out >= out_t.size:
            return t, k, n_out, False
        bound = mu_bound
        for v in range(U):
            bound += excite[v]
        if bound <= 0.0:
            return horizon, k, n_out, True
        dt = -math.log1p(-uniforms[k]) / bound
        d = uniforms[k + 1] * bound
        k += 2
        t += dt
        if t >= horizon:
            return horizon, k, n_out, True
        decay = math.exp(-w * dt)
        m = 1.0
        if amp > 0.0:
            m = 1.0 - amp * math.cos(2.0 * math.pi * t / period)
        s = 0.0
        chosen = -1
        for v in range(U):
            excite[v] *= decay
            if chosen < 0:
                s += mu[v] * m + excite[v]
                if d < s:
                    chosen = v
        if chosen >= 0:
            out_t[n_out] = t
            out_u[n_out] = chosen
            n_out += 1
            for v in range(U):
                excite[v] += A[v, chosen] * w
    return t, k, n_out, False


def simulate(model: HawkesModel, horizon: float, seed=0, diurnal: tuple[float, float] | None = None,
             check_stability: bool = True, chunk: int = 1 << 16) -> EventSequence:
    """Simulate on ``[0, horizon)`` by Ogata thinning.

    Args:
        model: process parameters; ``spectral_radius(model.A)`` must be < 1.
        horizon: length of the observation window in hours.
        seed: integer seed (or a Generator) for the Philox stream.
        diurnal: optional ``(amplitude, period)`` modulating the background as
            ``mu * (1 - amplitude * cos(2 pi t / period))``; amplitude in [0, 1].
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if check_stability:
        rho = spectral_radius(model.A)
        if rho >= 1.0:
            raise StabilityError(f"spectral radius {rho:.4f} >= 1; the process is explosive")
    amp, period = (0.0, 1.0) if diurnal is None else (float(diurnal[0]), float(diurnal[1]))
    if not 0.0 <= amp <= 1.0 or period <= 0:
        raise ValueError("diurnal amplitude must be in [0, 1] and period positive")
    rng = make_rng(seed)
    guess = float(np.sum(stationary_rate(model))) * horizon if check_stability else 0.0
    cap = int(min(max(1024, 1.2 * guess + 64), 5e7))
    out_t = np.empty(cap)
    out_u = np.empty(cap, dtype=np.int64)
    n_out = 0
    excite = np.zeros(model.num_nodes)
    t = 0.0
    done = False
    uniforms = rng.random(2 * chunk)
    pos = 0
    while not done:
        if pos >= uniforms.size - 1:
            uniforms = rng.random(2 * chunk)
            pos = 0
        t, used, n_out, done = _thin(t, excite, model.mu, model.A, model.w, float(horizon),
                                     amp, period, uniforms[pos:], out_t, out_u, n_out)
        pos += used
        if not done and n_out >= out_t.size:
            out_t = np.concatenate([out_t, np.empty(out_t.size)])
            out_u = np.concatenate([out_u, np.empty(out_u.size, dtype=np.int64)])
    return EventSequence(out_t[:n_out].copy(), out_u[:n_out].copy(), float(horizon), model.num_nodes)
