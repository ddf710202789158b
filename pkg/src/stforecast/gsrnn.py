"""Graph-structured recurrent forecaster, per-class and per-node baselines.

Every node ``i`` of class ``k`` is predicted from three kinds of input:

* its own lag window, through the class input RNN;
* for each neighbour class ``l``, the weighted sum of its in-neighbours'
  lag windows, through the edge RNN of the ordered pair ``(k, l)``;
* both hidden sequences, concatenated per step as ``[own, l=0, ..., l=K-1]``
  (absent slots are zeros), through the node RNN and a linear head.

``JointModel`` (one cascade per class) and ``SingleNodeModel`` (one cascade
per node) share the data pipeline and trainer. Series are scaled per node by
the largest training value before they reach any network.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field

import numpy as np

from ._rng import make_rng
from .augment import cumulate_values, super_resolve_values
from .graph import WeightedGraph, load_graph, save_graph  # noqa: F401  (re-exported)
from .neural import (AdamState, CascadeNet, ConfigError, Dense, LstmStack, ShapeError,
                     TrainConfig, _decode_into, adam_step, check_lags, decode_state,
                     read_checkpoint, write_checkpoint)


class InputError(ValueError):
    pass


class RangeError(IndexError):
    pass


def partition_nodes(series, num_classes: int) -> np.ndarray:
    """Class labels by total count: class 0 holds the quietest nodes.

    Groups differ in size by at most one; the larger groups are the lower
    classes. Equal totals are ordered by node index.
    """
    values = np.asarray(getattr(series, "values", series), dtype=np.float64)
    totals = values.sum(axis=1) if values.ndim == 2 else values.ravel()
    n = totals.size
    if not 1 <= num_classes <= n:
        raise ConfigError(f"need 1 <= K <= {n} classes, got {num_classes}")
    order = np.lexsort((np.arange(n), totals))
    q, r = divmod(n, num_classes)
    labels = np.empty(n, dtype=np.int64)
    start = 0
    for k in range(num_classes):
        size = q + (1 if k < r else 0)
        labels[order[start:start + size]] = k
        start += size
    return labels


def lattice_graph(rows: int, cols: int, weight: float = 0.25, node_class=None) -> WeightedGraph:
    """4-neighbour grid, edges in both directions, nodes numbered row-major."""
    if rows < 1 or cols < 1:
        raise ConfigError("rows and cols must be >= 1")
    src, dst = [], []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    src.append(rr * cols + cc)
                    dst.append(i)
    return WeightedGraph(rows * cols, src, dst, np.full(len(src), float(weight)), node_class)


def pool_neighbors(graph: WeightedGraph, i: int, cls: int, X):
    """``sum_j w_ij X_j`` over in-neighbours ``j`` of ``i`` with class ``cls``.

    Args:
        graph: Graph carrying the node classes.
        i: Receiving node.
        cls: Class of the neighbours to pool.
        X: Per-node inputs, an array indexed by node or a mapping node -> vector.
    """
    src, w = graph.in_edges(i)
    keep = graph.node_class[src] == cls
    src, w = src[keep], w[keep]
    if isinstance(X, Mapping):
        missing = [int(j) for j in src if int(j) not in X]
        if missing:
            raise InputError(f"no input for neighbour(s) {missing} of node {i}")
        sample = np.asarray(next(iter(X.values()))) if X else np.zeros(1)
        get = lambda j: np.asarray(X[int(j)], dtype=np.float64)
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.shape[0] != graph.num_nodes:
            raise InputError(f"inputs cover {arr.shape[0]} nodes, graph has {graph.num_nodes}")
        sample = arr[0]
        get = lambda j: arr[j]
    out = np.zeros(np.shape(sample))
    for j, wj in zip(src, w):
        out = out + wj * get(j)
    return out


def pooling_matrices(graph: WeightedGraph, num_classes: int | None = None) -> np.ndarray:
    """``P[l, i, j] = w_ij`` when ``j`` has class ``l``, else 0."""
    K = num_classes or graph.num_classes
    W = graph.weight_matrix()
    P = np.zeros((K, graph.num_nodes, graph.num_nodes))
    for l in range(K):
        cols = graph.node_class == l
        P[l][:, cols] = W[:, cols]
    return P


class ForecastData:
    """Scaled working series and lag windows for a set of nodes.

    Args:
        raw: Counts ``[node, hour]``; a trailing partial day is dropped.
        period: Slots per day.
        train_days: Number of leading days used for training.
        graph: Graph with node classes; defaults to an edgeless single-class graph.
        augmented: Work on the super-resolved diurnal cumulative series.
        lags: Input lags on the working series.
        skip_nearest: Refuse lag 1.
        scale: Per-node scale; by default the largest training value (1 when 0).
        phase_features: Append the sine and cosine of each input step's
            position within the day to a node's own window.
    """

    def __init__(self, raw, period: int = 24, train_days: int | None = None,
                 graph: WeightedGraph | None = None, augmented: bool = True,
                 lags=tuple(range(2, 10)), skip_nearest: bool | None = None, scale=None,
                 phase_features: bool = True):
        raw = np.asarray(getattr(raw, "values", raw), dtype=np.float64)
        if raw.ndim == 1:
            raw = raw[None, :]
        if raw.ndim != 2:
            raise ShapeError("raw counts must be [node, hour]")
        if period < 2:
            raise ConfigError("period must be >= 2")
        days = raw.shape[1] // period
        if days < 2:
            raise ConfigError("need at least two whole days of data")
        self.raw = np.ascontiguousarray(raw[:, :days * period])
        self.period = int(period)
        self.days = days
        self.train_days = days - max(1, days // 5) if train_days is None else int(train_days)
        if not 1 <= self.train_days < days:
            raise ConfigError(f"train_days must lie in [1, {days - 1}]")
        U = self.raw.shape[0]
        self.graph = graph if graph is not None else WeightedGraph(U, [], [], [])
        if self.graph.num_nodes != U:
            raise ShapeError(f"graph has {self.graph.num_nodes} nodes, series has {U}")
        self.augmented = bool(augmented)
        if skip_nearest is None:
            skip_nearest = self.augmented
        self.lags = check_lags(lags, skip_nearest)
        self.skip_nearest = bool(skip_nearest)
        self.cdf = cumulate_values(self.raw, period)
        self.block = 2 * period - 1 if self.augmented else period
        self.work = super_resolve_values(self.cdf, period) if self.augmented else self.raw
        self.boundary = self.train_days * self.block
        if scale is None:
            scale = self.work[:, :self.boundary].max(axis=1)
            scale = np.where(scale > 0, scale, 1.0)
        self.scale = np.asarray(scale, dtype=np.float64)
        if self.scale.shape != (U,) or np.any(self.scale <= 0):
            raise ConfigError("scale must hold one positive value per node")
        self.norm = self.work / self.scale[:, None]
        K = self.graph.num_classes
        self.num_classes = K
        P = pooling_matrices(self.graph, K)
        self.pooled = P @ self.norm  # [class, node, step]
        self.has_neighbors = (P > 0).any(axis=2).T  # [node, class]
        self._lag_arr = np.asarray(self.lags)
        self.phase_features = bool(phase_features)
        steps = np.arange(self.work.shape[1])
        slot = (steps % self.block) / 2.0 if self.augmented else steps % self.block
        angle = 2.0 * np.pi * slot / period
        self._phase = np.stack([np.sin(angle), np.cos(angle)], axis=1)  # [step, 2]
        self.train_positions = np.arange(max(self.lags), self.boundary)
        if self.train_positions.size == 0:
            raise ConfigError("training range is shorter than the largest lag")

    @property
    def num_nodes(self) -> int:
        return self.raw.shape[0]

    @property
    def input_dim(self) -> int:
        return 3 if self.phase_features else 1

    @property
    def node_class(self) -> np.ndarray:
        return self.graph.node_class

    def position_of_hour(self, hours) -> np.ndarray:
        day, slot = np.divmod(np.asarray(hours, dtype=np.int64), self.period)
        return day * self.block + (2 * slot if self.augmented else slot)

    def _window(self, arr2d, nodes, pos) -> np.ndarray:
        idx = pos[:, None] - self._lag_arr[None, ::-1]  # oldest first
        return arr2d[nodes[:, None], idx][:, :, None]

    def own_seq(self, nodes, pos) -> np.ndarray:
        x = self._window(self.norm, nodes, pos)
        if not self.phase_features:
            return x
        idx = pos[:, None] - self._lag_arr[None, ::-1]
        return np.concatenate([x, self._phase[idx]], axis=2)

    def pooled_seq(self, cls, nodes, pos) -> np.ndarray:
        return self._window(self.pooled[cls], nodes, pos)

    def targets(self, nodes, pos) -> np.ndarray:
        return self.norm[nodes, pos]


class _GroupedNodeModel:
    """Shared plumbing: parameter naming, gradient collection, batched prediction."""

    kind = "base"

    def _modules(self) -> dict:
        raise NotImplementedError

    def params(self) -> dict:
        return {f"{m}.{n}": p for m, mod in self._modules().items() for n, p in mod.params().items()}

    def _grads_of(self, names) -> dict:
        mods = self._modules()
        out = {}
        for m in names:
            mod = mods[m]
            g = mod.grads() if callable(getattr(mod, "grads")) else mod.grads
            out.update({f"{m}.{n}": v for n, v in g.items()})
        return out

    def _zero_grads(self) -> None:
        for mod in self._modules().values():
            mod.zero_grad()

    def loss_and_grads(self, data: ForecastData, nodes, pos, train=False, rng=None, denom=None):
        """Summed squared error on the rows, and gradients of ``sse / denom``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        pos = np.asarray(pos, dtype=np.int64)
        self._zero_grads()
        pred, touched = self._forward(data, nodes, pos, train, rng)
        err = pred - data.targets(nodes, pos)
        denom = err.size if denom is None else denom
        self._backward(2.0 * err / denom)
        return float(err @ err), self._grads_of(touched), err

    def predict(self, data: ForecastData, nodes, pos, batch_size: int = 8192) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        pos = np.asarray(pos, dtype=np.int64)
        out = np.empty(nodes.size)
        for s in range(0, nodes.size, batch_size):
            out[s:s + batch_size] = self._forward(data, nodes[s:s + batch_size], pos[s:s + batch_size],
                                                  False, None)[0]
        return out


class GroupedCascade(_GroupedNodeModel):
    """One cascade per group of nodes (per class: joint training; per node: single-node)."""

    kind = "grouped"

    def __init__(self, group_of, sizes=(64, 128), dropout: float = 0.0, seed=0, residual: bool = False,
                 input_dim: int = 3):
        self.group_of = np.asarray(group_of, dtype=np.int64)
        self.sizes = [int(s) for s in sizes]
        self.dropout = float(dropout)
        self.residual = bool(residual)
        self.input_dim = int(input_dim)
        rng = make_rng(seed)
        self.nets = {int(g): CascadeNet(self.input_dim, self.sizes, self.dropout, rng, self.residual)
                     for g in np.unique(self.group_of)}
        self._cache = None

    def _modules(self) -> dict:
        return {f"net{g}": net for g, net in self.nets.items()}

    def _forward(self, data, nodes, pos, train, rng):
        if data.num_nodes != self.group_of.size:
            raise ShapeError(f"model covers {self.group_of.size} nodes, data has {data.num_nodes}")
        if data.input_dim != self.input_dim:
            raise ShapeError(f"model takes {self.input_dim} input features, data gives {data.input_dim}")
        pred = np.empty(nodes.size)
        groups = self.group_of[nodes]
        cache = []
        for g in np.unique(groups):
            sel = np.flatnonzero(groups == g)
            net = self.nets[int(g)]
            pred[sel] = net.forward(data.own_seq(nodes[sel], pos[sel]), train, rng)
            cache.append((int(g), sel))
        self._cache = cache
        return pred, [f"net{g}" for g, _ in cache]

    def _backward(self, dpred):
        for g, sel in self._cache:
            self.nets[g].backward(dpred[sel])

    def config(self) -> dict:
        return {"group_of": self.group_of.tolist(), "sizes": self.sizes, "dropout": self.dropout,
                "residual": self.residual, "input_dim": self.input_dim}


def JointModel(node_class, sizes=(64, 128), dropout: float = 0.0, seed=0,
               residual: bool = False, input_dim: int = 3) -> GroupedCascade:
    """One cascade shared by all nodes of a class."""
    return GroupedCascade(node_class, sizes, dropout, seed, residual, input_dim)


def SingleNodeModel(num_nodes: int, sizes=(64, 128), dropout: float = 0.0, seed=0,
                    residual: bool = False, input_dim: int = 3) -> GroupedCascade:
    """An independent cascade for every node."""
    return GroupedCascade(np.arange(num_nodes), sizes, dropout, seed, residual, input_dim)


@dataclass
class GsrnnConfig:
    input_sizes: tuple = (64,)
    edge_sizes: tuple = (64,)
    node_sizes: tuple = (128,)
    dropout: float = 0.2
    intra_class_edges: bool = True
    node_rnn: str = "class"  # or "node": a separate node RNN and head per node
    residual: bool = False  # add the node's newest input value to its prediction
    input_dim: int = 3  # own-window features: value, plus two phase channels when enabled

    def __post_init__(self):
        self.input_sizes = tuple(int(s) for s in self.input_sizes)
        self.edge_sizes = tuple(int(s) for s in self.edge_sizes)
        self.node_sizes = tuple(int(s) for s in self.node_sizes)
        if not (self.input_sizes and self.edge_sizes and self.node_sizes):
            raise ConfigError("every RNN needs at least one layer")
        if self.node_rnn not in ("class", "node"):
            raise ConfigError("node_rnn must be 'class' or 'node'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("input_sizes", "edge_sizes", "node_sizes"):
            d[k] = list(d[k])
        return d


class GsrnnModel(_GroupedNodeModel):
    """Input, edge and node RNNs wired by the graph's classes and edges.

    Args:
        graph: Directed weighted graph with node classes.
        cfg: Layer sizes and options.
        seed: Initialization seed.
    """

    kind = "gsrnn"

    def __init__(self, graph: WeightedGraph, cfg: GsrnnConfig | None = None, seed=0):
        self.graph = graph
        self.cfg = cfg = cfg or GsrnnConfig()
        K = graph.num_classes
        self.num_classes = K
        cls = graph.node_class
        present = sorted(int(k) for k in np.unique(cls))
        pairs = sorted({(int(cls[d]), int(cls[s])) for s, d in zip(graph.src, graph.dst)
                        if cfg.intra_class_edges or cls[d] != cls[s]})
        self.pairs = pairs
        rng = make_rng(seed)
        self.input_rnns = {k: LstmStack(cfg.input_dim, cfg.input_sizes, cfg.dropout, rng) for k in present}
        self.edge_rnns = {p: LstmStack(1, cfg.edge_sizes, cfg.dropout, rng) for p in pairs}
        self.block_widths = [cfg.input_sizes[-1]] + [cfg.edge_sizes[-1]] * K
        keys = present if cfg.node_rnn == "class" else list(range(graph.num_nodes))
        self.node_rnns = {g: LstmStack(sum(self.block_widths), cfg.node_sizes, cfg.dropout, rng) for g in keys}
        self.heads = {g: Dense(cfg.node_sizes[-1], rng) for g in keys}
        self._cache = None

    def _modules(self) -> dict:
        mods = {}
        mods.update({f"input{k}": m for k, m in self.input_rnns.items()})
        mods.update({f"edge{k}_{l}": m for (k, l), m in self.edge_rnns.items()})
        mods.update({f"node{g}": m for g, m in self.node_rnns.items()})
        mods.update({f"head{g}": m for g, m in self.heads.items()})
        return mods

    def _forward(self, data, nodes, pos, train, rng):
        if data.num_nodes != self.graph.num_nodes or data.num_classes != self.num_classes:
            raise ShapeError("data and model disagree on nodes or classes")
        if data.input_dim != self.cfg.input_dim:
            raise ShapeError(f"model takes {self.cfg.input_dim} input features, data gives {data.input_dim}")
        cls = self.graph.node_class
        pred = np.empty(nodes.size)
        touched = []
        cache = []
        for k in sorted(self.input_rnns):
            sel = np.flatnonzero(cls[nodes] == k)
            if sel.size == 0:
                continue
            nk, pk = nodes[sel], pos[sel]
            own = data.own_seq(nk, pk)
            blocks = [self.input_rnns[k].forward(own, train, rng)]
            touched.append(f"input{k}")
            edges = []
            for l in range(self.num_classes):
                mask = data.has_neighbors[nk, l] if (k, l) in self.edge_rnns else None
                if mask is None or not mask.any():
                    blocks.append(None)
                    continue
                h = self.edge_rnns[(k, l)].forward(data.pooled_seq(l, nk, pk), train, rng)
                m3 = mask[:, None, None].astype(np.float64)
                blocks.append(h * m3)
                edges.append((l, m3))
                touched.append(f"edge{k}_{l}")
            if self.cfg.node_rnn == "class":
                groups = [(k, slice(None))]
            else:
                groups = [(int(g), np.flatnonzero(nk == g)) for g in np.unique(nk)]
            for g, rsel in groups:
                sub = [b[rsel] if b is not None else None for b in blocks]
                h = self.node_rnns[g].forward(sub, train, rng, self.block_widths)
                out = self.heads[g].forward(h[:, -1])
                if self.cfg.residual:
                    out = out + own[rsel, -1, 0]
                if isinstance(rsel, slice):
                    pred[sel] = out
                else:
                    pred[sel[rsel]] = out
                touched += [f"node{g}", f"head{g}"]
            cache.append((k, sel, blocks, edges, groups))
        self._cache = cache
        return pred, touched

    def _backward(self, dpred):
        for k, sel, blocks, edges, groups in self._cache:
            dblocks = [np.zeros_like(b) if b is not None else None for b in blocks]
            for g, rsel in groups:
                idx = sel if isinstance(rsel, slice) else sel[rsel]
                dlast = self.heads[g].backward(dpred[idx])
                n = dlast.shape[0]
                dh = np.zeros((n, blocks[0].shape[1], dlast.shape[1]))
                dh[:, -1] = dlast
                dsub = self.node_rnns[g].backward(dh)
                for j, d in enumerate(dsub):
                    if d is not None:
                        dblocks[j][rsel] += d
            self.input_rnns[k].backward(dblocks[0])
            for l, m3 in edges:
                self.edge_rnns[(k, l)].backward(dblocks[1 + l] * m3)

    def copy_cascade(self, nets: Mapping) -> None:
        """Load per-class cascades whose layers are ``input_sizes + node_sizes``.

        Edge RNNs are left alone and the node RNN's edge-input rows are zeroed,
        so on an edgeless graph the model then computes exactly what the
        cascades compute.
        """
        n_in = len(self.cfg.input_sizes)
        H_in = self.cfg.input_sizes[-1]
        for g, node in self.node_rnns.items():
            k = g if self.cfg.node_rnn == "class" else int(self.graph.node_class[g])
            net = nets[k]
            if net.sizes != list(self.cfg.input_sizes) + list(self.cfg.node_sizes):
                raise ShapeError(f"cascade for class {k} has sizes {net.sizes}")
            for src, dst in zip(net.stack.layers[:n_in], self.input_rnns[k].layers):
                for name, p in dst.params().items():
                    p[...] = src.params()[name]
            for j, (src, dst) in enumerate(zip(net.stack.layers[n_in:], node.layers)):
                for name, p in dst.params().items():
                    if j == 0 and name == "Wx":
                        p[...] = 0.0
                        p[:H_in] = src.Wx
                    else:
                        p[...] = src.params()[name]
            self.heads[g].W[...] = net.head.W
            self.heads[g].b[...] = net.head.b

    def config(self) -> dict:
        return {"gsrnn": self.cfg.to_dict(), "graph": self.graph.to_dict()}


def _fractions(subsample, classes) -> dict:
    if subsample is None:
        return {k: 1.0 for k in classes}
    if isinstance(subsample, Mapping):
        fr = {int(k): float(v) for k, v in subsample.items()}
    elif np.ndim(subsample) == 0:
        fr = {k: float(subsample) for k in classes}
    else:
        fr = {k: float(v) for k, v in enumerate(subsample)}
    out = {}
    for k in classes:
        f = fr.get(k, 1.0)
        if not 0.0 < f <= 1.0:
            raise ConfigError(f"subsample fraction for class {k} must lie in (0, 1], got {f}")
        out[k] = f
    return out


def fit(model, data: ForecastData, cfg: TrainConfig, subsample=None, sampling: str = "uniform",
        nodes=None, log=None) -> list:
    """Train ``model`` on the training windows; returns the per-epoch mean loss.

    Args:
        model: ``GsrnnModel`` or ``GroupedCascade``, updated in place.
        data: Windows and targets.
        cfg: Optimizer schedule; ``cfg.seed`` drives sampling, shuffling and dropout.
        subsample: Fraction of each class's nodes drawn per epoch: one number,
            a per-class sequence or mapping, or ``None`` for all nodes.
        sampling: ``"uniform"`` or ``"error"`` (nodes drawn in proportion to
            their squared error in the previous epoch).
        nodes: Restrict training to these nodes.
        log: Optional callable ``log(epoch, loss)``.
    """
    if sampling not in ("uniform", "error"):
        raise ConfigError("sampling must be 'uniform' or 'error'")
    rng = make_rng(cfg.seed)
    node_set = np.arange(data.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    cls = data.node_class
    classes = sorted(int(k) for k in np.unique(cls[node_set]))
    frac = _fractions(subsample, classes)
    members = {k: node_set[cls[node_set] == k] for k in classes}
    positions = data.train_positions
    node_err = np.ones(data.num_nodes)
    params = model.params()
    state = AdamState()
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        chosen = []
        for k in classes:
            mem = members[k]
            n = max(1, math.ceil(frac[k] * mem.size))
            if n >= mem.size:
                chosen.append(mem)
                continue
            p = None
            if sampling == "error":
                p = node_err[mem] / node_err[mem].sum()
            chosen.append(np.sort(rng.choice(mem, n, replace=False, p=p)))
        sel = np.concatenate(chosen)
        row_node = np.repeat(sel, positions.size)
        row_pos = np.tile(positions, sel.size)
        R = row_node.size
        bs = cfg.batch_size or R
        order = rng.permutation(R) if bs < R else np.arange(R)
        total = 0.0
        sq = np.zeros(data.num_nodes)
        for s in range(0, R, bs):
            idx = order[s:s + bs]
            sse, grads, err = model.loss_and_grads(data, row_node[idx], row_pos[idx], True, rng, idx.size)
            adam_step(params, grads, state, cfg.lr_at(step, epoch), cfg.beta1, cfg.beta2, cfg.eps)
            np.add.at(sq, row_node[idx], err * err)
            total += sse
            step += 1
        history.append(total / R)
        node_err = np.where(sq > 0, sq, 1e-12) if sampling == "error" else node_err
        if log is not None:
            log(epoch, history[-1])
    model.optimizer_state = state
    return history


def fit_single_nodes(model: GroupedCascade, data: ForecastData, cfg: TrainConfig, log=None) -> list:
    """Train every per-node cascade on its own data with its own optimizer.

    Returns the per-epoch loss averaged over nodes.
    """
    curves = []
    for i in range(data.num_nodes):
        node_cfg = TrainConfig(**{**cfg.to_dict(), "seed": cfg.seed + 1000003 * (i + 1)})
        curves.append(fit(model, data, node_cfg, nodes=[i]))
    history = np.mean(np.asarray(curves), axis=0).tolist()
    if log is not None:
        for e, v in enumerate(history):
            log(e, v)
    return history


@dataclass
class ForecastRun:
    """One-step-ahead test predictions on both the cumulative and the count scale."""

    hours: np.ndarray
    boundary: int
    actual_pdf: np.ndarray  # [node, hour]
    actual_cdf: np.ndarray
    predicted_pdf: np.ndarray
    predicted_cdf: np.ndarray
    node_class: np.ndarray = field(default=None)

    def rmse(self, scale: str = "pdf", nodes=None) -> float:
        a, p = (self.actual_pdf, self.predicted_pdf) if scale == "pdf" else (self.actual_cdf, self.predicted_cdf)
        if nodes is not None:
            a, p = a[nodes], p[nodes]
        return float(np.sqrt(np.mean((a - p) ** 2)))

    def group_rmse(self, scale: str = "pdf") -> dict:
        out = {"all": self.rmse(scale)}
        if self.node_class is not None:
            for k in np.unique(self.node_class):
                out[f"class{k}"] = self.rmse(scale, np.flatnonzero(self.node_class == k))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "t", "actual", "actual_cdf", "predicted_cdf", "predicted_pdf"])
            for i in range(self.actual_pdf.shape[0]):
                for j, t in enumerate(self.hours):
                    writer.writerow([i, int(t), repr(float(self.actual_pdf[i, j])),
                                     repr(float(self.actual_cdf[i, j])),
                                     repr(float(self.predicted_cdf[i, j])),
                                     repr(float(self.predicted_pdf[i, j]))])

    @classmethod
    def read_csv(cls, path) -> "ForecastRun":
        rows = np.genfromtxt(path, delimiter=",", names=True)
        rows = np.atleast_1d(rows)
        nodes = rows["node"].astype(np.int64)
        hours = np.unique(rows["t"].astype(np.int64))
        U = int(nodes.max()) + 1 if nodes.size else 0
        grid = {}
        for name in ("actual", "actual_cdf", "predicted_cdf", "predicted_pdf"):
            g = np.full((U, hours.size), np.nan)
            g[nodes, np.searchsorted(hours, rows["t"].astype(np.int64))] = rows[name]
            grid[name] = g
        return cls(hours, int(hours[0]) if hours.size else 0, grid["actual"], grid["actual_cdf"],
                   grid["predicted_pdf"], grid["predicted_cdf"])


def _test_hours(data: ForecastData, start, horizon):
    first = data.train_days * data.period
    end = data.days * data.period
    start = first if start is None else int(start)
    horizon = end - start if horizon is None else int(horizon)
    if horizon < 1 or start < 0 or start + horizon > end:
        raise RangeError(f"requested hours [{start}, {start + horizon}) exceed the data [0, {end})")
    return np.arange(start, start + horizon)


def _previous_cdf(data: ForecastData, hours):
    prev = np.where(hours % data.period == 0, 0, hours - 1)
    return np.where((hours % data.period == 0)[None, :], 0.0, data.cdf[:, prev])


def _assemble(data, hours, pred_scaled) -> ForecastRun:
    prev = _previous_cdf(data, hours)
    if data.augmented:
        pred_cdf = pred_scaled
        pred_pdf = pred_cdf - prev
    else:
        pred_pdf = pred_scaled
        pred_cdf = prev + pred_pdf
    return ForecastRun(hours, data.train_days * data.period, data.raw[:, hours], data.cdf[:, hours],
                       pred_pdf, pred_cdf, data.node_class.copy())


def forecast(model, data: ForecastData, start: int | None = None, horizon: int | None = None) -> ForecastRun:
    """Rolling one-step-ahead predictions from observed history.

    Covers the test days by default. With augmented data the network predicts
    the cumulative count at each hour and the hourly count is that minus the
    observed cumulative count one hour earlier (the prediction itself at the
    first hour of a day).
    """
    hours = _test_hours(data, start, horizon)
    pos = data.position_of_hour(hours)
    if pos.min() < max(data.lags):
        raise RangeError("forecast starts before a full lag window is available")
    U = data.num_nodes
    nodes = np.repeat(np.arange(U), hours.size)
    pred = model.predict(data, nodes, np.tile(pos, U)).reshape(U, hours.size)
    return _assemble(data, hours, pred * data.scale[:, None])


class HistoricalAverage:
    """Mean of the training values sharing a slot of the period."""

    def __init__(self, series, period: int = 168, boundary: int | None = None):
        x = np.asarray(series, dtype=np.float64)
        boundary = x.size if boundary is None else int(boundary)
        if boundary < period:
            raise ConfigError("training range is shorter than one period")
        self.period = int(period)
        train = x[:boundary]
        slot = np.arange(boundary) % period
        self.means = np.bincount(slot, weights=train, minlength=period) / np.bincount(slot, minlength=period)

    def predict(self, t) -> np.ndarray:
        return self.means[np.asarray(t) % self.period]


def baseline_historical_average(series, period: int = 168, boundary: int | None = None) -> HistoricalAverage:
    return HistoricalAverage(series, period, boundary)


class KnnPredictor:
    """Mean successor of the ``k`` training windows closest to the recent history."""

    def __init__(self, series, k: int = 1, window: int = 8, boundary: int | None = None):
        x = np.asarray(series, dtype=np.float64)
        boundary = x.size if boundary is None else int(boundary)
        if k < 1 or window < 1:
            raise ConfigError("k and window must be >= 1")
        if boundary <= window:
            raise ConfigError("training range is shorter than the window")
        self.series = x
        self.k = int(k)
        self.window = int(window)
        succ = np.arange(window, boundary)
        self.library = x[succ[:, None] - np.arange(window, 0, -1)[None, :]]
        self.successors = x[succ]

    def predict(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.int64))
        if t.min() < self.window:
            raise RangeError("not enough history before the first target")
        out = np.empty(t.size)
        k = min(self.k, self.successors.size)
        for j, tt in enumerate(t):
            q = self.series[tt - self.window:tt]
            d = np.sum((self.library - q) ** 2, axis=1)
            nearest = np.argsort(d, kind="stable")[:k]
            out[j] = self.successors[nearest].mean()
        return out


def baseline_knn(series, k: int = 1, window: int = 8, boundary: int | None = None) -> KnnPredictor:
    return KnnPredictor(series, k, window, boundary)


def baseline_forecast(data: ForecastData, method: str = "ha", start=None, horizon=None,
                      period: int | None = None, k: int = 1, window: int = 8) -> ForecastRun:
    """HA or KNN on the hourly counts of every node, over the test hours."""
    hours = _test_hours(data, start, horizon)
    boundary = data.train_days * data.period
    pred = np.empty((data.num_nodes, hours.size))
    for i in range(data.num_nodes):
        if method == "ha":
            pred[i] = HistoricalAverage(data.raw[i], period or 7 * data.period, boundary).predict(hours)
        elif method == "knn":
            pred[i] = KnnPredictor(data.raw[i], k, window, boundary).predict(hours)
        else:
            raise ConfigError(f"unknown baseline {method!r}")
    prev = _previous_cdf(data, hours)
    return ForecastRun(hours, boundary, data.raw[:, hours], data.cdf[:, hours], pred, prev + pred,
                       data.node_class.copy())


def save_model(model, path, extra: dict | None = None) -> None:
    extra = dict(extra or {})
    write_checkpoint(path, model.kind, model.config(), model.params(),
                     getattr(model, "optimizer_state", None), extra)


def load_model(path):
    """Rebuild a ``GsrnnModel`` or ``GroupedCascade``; returns ``(model, extra)``."""
    doc = read_checkpoint(path)
    cfg = doc["config"]
    if doc["kind"] == "gsrnn":
        model = GsrnnModel(WeightedGraph.from_dict(cfg["graph"]), GsrnnConfig(**cfg["gsrnn"]))
    elif doc["kind"] == "grouped":
        model = GroupedCascade(cfg["group_of"], cfg["sizes"], cfg["dropout"], residual=cfg.get("residual", False),
                               input_dim=cfg.get("input_dim", 3))
    else:
        raise ConfigError(f"checkpoint holds a {doc['kind']} model")
    _decode_into(model.params(), doc["params"], str(path))
    model.optimizer_state = decode_state(doc.get("optimizer"))
    return model, doc.get("extra", {})
