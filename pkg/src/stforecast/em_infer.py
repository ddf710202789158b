"""Penalized EM inference of a multivariate Hawkes excitation graph.

Each iteration attributes every event either to the background or to one
earlier event (E-step), then updates

    mu_u   <- (expected background events at u) / (total observed time)
    a_uv   <- sqrt(a_uv * N_uv / G_v)
    a_uv   <- max(a_uv - l1_lambda / G_v, 0)

where ``N_uv`` is the expected number of ``u`` events triggered by ``v``
events and ``G_v = sum_{j: u_j = v} (1 - exp(-w (T - t_j)))`` is the kernel
mass that ``v`` events had the chance to spend. The square root makes the
update a geometric mean of the old value and the plain EM update, so with
``l1_lambda = 0`` the likelihood still never decreases.

The soft threshold is measured in units of the surrogate's curvature
``G_v``: the M-step surrogate for ``a_uv`` is ``N log a - G_v a - lambda a``,
so ``lambda / G_v`` is the shift the L1 term induces on ``a``. Setting
``shrink_scale="absolute"`` thresholds at ``l1_lambda`` itself instead, which
removes every edge whose unpenalized estimate is below roughly
``4 * l1_lambda`` regardless of how much data supports it.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .events import EventSequence
from .graph import WeightedGraph
from .hawkes import HawkesModel, kernel_integral, log_likelihood

log = logging.getLogger(__name__)


class DegenerateModelError(ArithmeticError):
    pass


class DivergenceError(ArithmeticError):
    pass


@dataclass
class EMConfig:
    l1_lambda: float = 0.01
    max_iters: int = 500
    tol: float = 1e-5
    truncation_horizon: float | None = None  # None -> 10 / w; math.inf -> exact E-step
    prior_edges: np.ndarray | None = None  # bool [u, v]: a_uv may be nonzero
    shrink_scale: str = "kernel_mass"  # or "absolute"

    def __post_init__(self):
        if self.l1_lambda < 0:
            raise ValueError("l1_lambda must be >= 0")
        if self.shrink_scale not in ("kernel_mass", "absolute"):
            raise ValueError(f"unknown shrink_scale {self.shrink_scale!r}")
        if self.truncation_horizon is not None and not self.truncation_horizon > 0:
            raise ValueError("truncation_horizon must be positive")
        if self.prior_edges is not None:
            mask = np.asarray(self.prior_edges, dtype=bool)
            if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
                raise ValueError("prior_edges must be a square boolean matrix")
            self.prior_edges = mask

    def trunc_for(self, w: float) -> float:
        return 10.0 / w if self.truncation_horizon is None else float(self.truncation_horizon)


@dataclass
class EStats:
    """Sufficient statistics of one E-step, summed over sequences."""

    background: np.ndarray  # [u]    sum of p_ii over events at u
    triggered: np.ndarray  # [u, v] sum of p_ij over events i at u, j at v
    kernel_mass: np.ndarray  # [v]    sum over events j at v of int_0^{T - t_j} g
    total_time: float
    log_intensity: float  # sum of log D_i (D_i truncated when the E-step is)


@dataclass
class EMState:
    model: HawkesModel
    iter: int = 0
    penalized_nll: list = field(default_factory=list)
    log_likelihood: list = field(default_factory=list)
    max_param_delta: list = field(default_factory=list)
    converged: bool = False

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "penalized_nll", "max_param_delta"])
            for k, (obj, delta) in enumerate(zip(self.penalized_nll, self.max_param_delta)):
                writer.writerow([k, repr(float(obj)), repr(float(delta))])


@njit(cache=True)
def _estep_kernel(times, nodes, mu, A, w, trunc):
    # Window sums R_v = sum_{j < i, u_j = v, t_i - t_j <= trunc} g(t_i - t_j)
    # kept by the exponential recursion; events leaving the window are
    # subtracted, and a source with no event left in the window is reset to 0.
    n = times.size
    U = mu.size
    R = np.zeros(U)
    inside = np.zeros(U, dtype=np.int64)
    background = np.zeros(U)
    triggered = np.zeros((U, U))
    log_sum = 0.0
    t_prev = 0.0
    lo = 0
    for i in range(n):
        ti = times[i]
        decay = math.exp(-w * (ti - t_prev))
        for v in range(U):
            R[v] *= decay
        while lo < i and ti - times[lo] > trunc:
            v = nodes[lo]
            inside[v] -= 1
            if inside[v] == 0:
                R[v] = 0.0
            else:
                R[v] = max(R[v] - w * math.exp(-w * (ti - times[lo])), 0.0)
            lo += 1
        u = nodes[i]
        D = mu[u]
        for v in range(U):
            D += A[u, v] * R[v]
        if not D > 0.0:
            return background, triggered, -1.0, i
        background[u] += mu[u] / D
        for v in range(U):
            triggered[u, v] += A[u, v] * R[v] / D
        log_sum += math.log(D)
        R[u] += w
        inside[u] += 1
        t_prev = ti
    return background, triggered, log_sum, -1


class _Prepared:
    """Per-(sequences, w, trunc) caches reused across EM iterations."""

    def __init__(self, seqs, w: float, trunc: float):
        self.seqs = list(seqs)
        self.w = float(w)
        self.trunc = float(trunc)
        U = self.seqs[0].num_nodes
        self.U = U
        self.total_time = math.fsum(s.horizon for s in self.seqs)
        mass = [np.bincount(s.nodes, kernel_integral(w, s.horizon - s.times), minlength=U)
                for s in self.seqs]
        self.kernel_mass = _fsum_stack(mass, (U,))


def _fsum_stack(arrays, shape) -> np.ndarray:
    if not arrays:
        return np.zeros(shape)
    if len(arrays) == 1:
        return np.array(arrays[0], dtype=np.float64).reshape(shape)
    stacked = np.stack([np.asarray(a, dtype=np.float64).ravel() for a in arrays], axis=1)
    return np.array([math.fsum(row) for row in stacked]).reshape(shape)


def _prepare(seqs, w: float, trunc: float) -> _Prepared:
    if isinstance(seqs, EventSequence):
        seqs = [seqs]
    seqs = list(seqs)
    if not seqs:
        raise ValueError("need at least one event sequence")
    if len({s.num_nodes for s in seqs}) != 1:
        raise ValueError("all sequences must share the node set")
    return _Prepared(seqs, w, trunc)


def _estep_prepared(model: HawkesModel, prep: _Prepared) -> EStats:
    U = prep.U
    mu, A = model.mu, model.A
    bgs, trs, logs = [], [], []
    for c, seq in enumerate(prep.seqs):
        if len(seq) == 0:
            continue
        bg, tr, log_sum, bad = _estep_kernel(seq.times, seq.nodes, mu, A, model.w, prep.trunc)
        if bad >= 0:
            raise DegenerateModelError(f"zero intensity at event {bad} of sequence {c}")
        bgs.append(bg)
        trs.append(tr)
        logs.append(log_sum)
    return EStats(_fsum_stack(bgs, (U,)), _fsum_stack(trs, (U, U)), prep.kernel_mass.copy(),
                  prep.total_time, math.fsum(logs))


def e_step(model: HawkesModel, seqs, trunc: float | None = None) -> EStats:
    """Expected branching structure under ``model``.

    Only parents within ``trunc`` hours of a child are considered
    (default ``10 / w``; ``math.inf`` gives the exact E-step).
    """
    trunc = 10.0 / model.w if trunc is None else trunc
    if not trunc > 0:
        raise ValueError("trunc must be positive")
    return _estep_prepared(model, _prepare(seqs, model.w, trunc))


def responsibilities(model: HawkesModel, seq: EventSequence, trunc: float = math.inf) -> np.ndarray:
    """Dense ``P[i, j]`` (``P[i, i]`` = background) for small sequences."""
    n = len(seq)
    P = np.zeros((n, n))
    for i in range(n):
        u = seq.nodes[i]
        P[i, i] = model.mu[u]
        for j in range(i):
            dt = seq.times[i] - seq.times[j]
            if dt <= trunc:
                P[i, j] = model.A[u, seq.nodes[j]] * model.w * math.exp(-model.w * dt)
        D = P[i].sum()
        if not D > 0:
            raise DegenerateModelError(f"zero intensity at event {i}")
        P[i] /= D
    return P


def shrink(x, lam: float):
    """Soft threshold ``max(x - lam, 0)`` for nonnegative ``x``."""
    return np.maximum(np.asarray(x, dtype=np.float64) - lam, 0.0)


def m_step(stats: EStats, model: HawkesModel, l1_lambda: float = 0.01,
           prior_edges: np.ndarray | None = None, shrink_scale: str = "kernel_mass") -> HawkesModel:
    mu = stats.background / stats.total_time
    den = np.broadcast_to(stats.kernel_mass, model.A.shape)
    num = stats.triggered
    if np.any((den <= 0) & (num > 0)):
        raise DegenerateModelError("triggered mass with zero kernel mass")
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    A = np.sqrt(model.A * ratio)
    if shrink_scale == "absolute":
        A = shrink(A, l1_lambda)
    else:
        thresh = np.divide(l1_lambda, den, out=np.full_like(A, np.inf), where=den > 0)
        A = np.maximum(A - thresh, 0.0)
    if prior_edges is not None:
        A = np.where(prior_edges, A, 0.0)
    return HawkesModel(mu, A, model.w)


def initial_model(seqs, w: float, prior_edges: np.ndarray | None = None) -> HawkesModel:
    """Background from event counts, ``0.5 / U`` on every allowed edge."""
    if isinstance(seqs, EventSequence):
        seqs = [seqs]
    U = seqs[0].num_nodes
    counts = sum(s.counts() for s in seqs)
    mu = counts / math.fsum(s.horizon for s in seqs)
    A = np.full((U, U), 0.5 / U)
    if prior_edges is not None:
        A = np.where(prior_edges, A, 0.0)
    return HawkesModel(mu, A, w)


def _max_rel_change(old: HawkesModel, new: HawkesModel) -> float:
    a = np.concatenate([old.mu, old.A.ravel()])
    b = np.concatenate([new.mu, new.A.ravel()])
    return float(np.max(np.abs(b - a) / (np.abs(a) + 1e-12))) if a.size else 0.0


def _objective(stats: EStats, model: HawkesModel, l1_lambda: float):
    comp = model.mu.sum() * stats.total_time + float(model.A.sum(axis=0) @ stats.kernel_mass)
    ll = stats.log_intensity - comp
    return ll, -ll + l1_lambda * float(model.A.sum())


def fit(seqs, w: float, cfg: EMConfig | None = None, init: HawkesModel | None = None,
        _prep: _Prepared | None = None) -> EMState:
    """Run penalized EM for fixed kernel rate ``w``.

    The objective recorded per iterate uses the (possibly truncated) E-step
    intensities, so it is exact only when ``truncation_horizon`` is infinite.
    """
    cfg = cfg or EMConfig()
    prep = _prep or _prepare(seqs, w, cfg.trunc_for(w))
    U = prep.U
    mask = cfg.prior_edges
    if mask is not None and mask.shape != (U, U):
        raise ValueError(f"prior_edges must be {U}x{U}")
    model = init if init is not None else initial_model(prep.seqs, w, mask)
    if model.w != w:
        model = HawkesModel(model.mu, model.A, w)
    state = EMState(model)
    for k in range(cfg.max_iters):
        stats = _estep_prepared(model, prep)
        ll, obj = _objective(stats, model, cfg.l1_lambda)
        if not math.isfinite(obj):
            raise DivergenceError(f"non-finite objective at iteration {k}")
        new = m_step(stats, model, cfg.l1_lambda, mask, cfg.shrink_scale)
        delta = _max_rel_change(model, new)
        state.log_likelihood.append(ll)
        state.penalized_nll.append(obj)
        state.max_param_delta.append(delta)
        model = new
        state.iter = k + 1
        if delta < cfg.tol:
            state.converged = True
            break
    state.model = model
    log.debug("EM w=%g stopped after %d iterations (converged=%s)", w, state.iter, state.converged)
    return state


class GridSearchError(RuntimeError):
    pass


def grid_search_w(seqs, w_grid, cfg: EMConfig | None = None):
    """Fit at each kernel rate and pick the one with the largest log-likelihood.

    Returns ``(w_best, log_likelihoods, states)``; the likelihood is the exact
    unpenalized one evaluated at each fitted model. Ties go to the smaller w.
    """
    cfg = cfg or EMConfig()
    grid = [float(w) for w in w_grid]
    if not grid or min(grid) <= 0:
        raise ValueError("w_grid must be a nonempty list of positive rates")
    lls, states, errors = [], [], []
    for w in grid:
        try:
            state = fit(seqs, w, cfg)
            ll = log_likelihood(state.model, seqs)
        except (ArithmeticError, ValueError) as exc:
            errors.append(f"w={w}: {exc}")
            state, ll = None, float("nan")
        lls.append(ll)
        states.append(state)
    valid = [(ll, -w) for ll, w in zip(lls, grid) if not math.isnan(ll)]
    if not valid:
        raise GridSearchError("every fit failed: " + "; ".join(errors))
    _, neg_w = max(valid)
    return -neg_w, lls, states


def knn_mask(coords, k: int, include_self: bool = True) -> np.ndarray:
    """Symmetric k-nearest-neighbour edge mask from node coordinates."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    n = coords.shape[0]
    d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    k = min(k, n - 1)
    mask = np.zeros((n, n), dtype=bool)
    if k > 0:
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        mask[np.repeat(np.arange(n), k), nearest.ravel()] = True
    mask |= mask.T
    if include_self:
        np.fill_diagonal(mask, True)
    return mask


def build_stwg(model: HawkesModel, target_sparsity: float = 0.1, knn_init: int | None = None,
               coords=None) -> WeightedGraph:
    """Threshold the excitation matrix into a normalized directed graph.

    Keeps the ``ceil(target_sparsity * U (U - 1))`` largest positive
    off-diagonal entries (ties: larger value, then lower flat index) and
    divides them by ``A.max()``. An entry ``A[u, v]`` becomes edge ``v -> u``.
    With ``knn_init`` and ``coords`` only k-nearest-neighbour pairs qualify.
    """
    if not 0 < target_sparsity <= 1:
        raise ValueError("target_sparsity must lie in (0, 1]")
    A = model.A
    U = A.shape[0]
    cand = ~np.eye(U, dtype=bool)
    if knn_init is not None:
        if coords is None:
            raise ValueError("knn_init needs node coordinates")
        cand &= knn_mask(coords, knn_init, include_self=False)
    n_keep = math.ceil(target_sparsity * U * (U - 1) - 1e-9)
    flat = np.flatnonzero(cand.ravel() & (A.ravel() > 0))
    if flat.size == 0:
        warnings.warn("excitation matrix has no positive off-diagonal entry; empty graph",
                      RuntimeWarning)
        return WeightedGraph(U, [], [], [])
    order = np.lexsort((flat, -A.ravel()[flat]))
    kept = flat[order[:n_keep]]
    dst, src = np.divmod(kept, U)
    weight = A.ravel()[kept] / A.max()
    return WeightedGraph(U, src, dst, weight)
