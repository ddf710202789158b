"""LSTM cascade with a linear head, trained by BPTT and Adam, in plain numpy.

Everything runs in float64. Sequences are ``(batch, steps, features)`` with
the oldest step first. A layer's input can be given as several column blocks;
the input projection is then the sum of the per-block projections, and a
``None`` block stands for zeros and is skipped entirely. A layer fed only its
first block therefore computes exactly what a narrower layer holding the same
rows would.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._rng import make_rng

CHECKPOINT_FORMAT = "stforecast-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class StateError(RuntimeError):
    pass


class LstmLayer:
    """One LSTM layer; gates are packed as ``[input, forget, cell, output]``.

    Args:
        input_dim: Width of the input at each step.
        hidden_dim: Number of units.
        rng: Generator or seed used for the uniform initialization.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng=None):
        if input_dim < 1 or hidden_dim < 1:
            raise ConfigError("layer dimensions must be positive")
        rng = make_rng(0 if rng is None else rng)
        self.input_dim = int(input_dim)
        self.hidden_dim = H = int(hidden_dim)
        bound = 1.0 / math.sqrt(input_dim + H)
        self.Wx = rng.uniform(-bound, bound, (input_dim, 4 * H))
        self.Wh = rng.uniform(-bound, bound, (H, 4 * H))
        self.b = np.zeros(4 * H)
        self.b[H:2 * H] = 1.0
        self.grads = {k: np.zeros_like(v) for k, v in self.params().items()}
        self._cache = None

    def params(self) -> dict:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def _split(self, x, block_widths):
        if block_widths is None:
            return [x], [self.input_dim]
        if sum(block_widths) != self.input_dim:
            raise ShapeError(f"block widths {block_widths} do not sum to {self.input_dim}")
        if len(x) != len(block_widths):
            raise ShapeError("one input block per width is required")
        return list(x), list(block_widths)

    def forward(self, x, block_widths=None) -> np.ndarray:
        """Run the recurrence from zero state; returns hidden states ``(B, L, H)``.

        Args:
            x: Array ``(B, L, input_dim)``, or a list of blocks (arrays or
                ``None``) when ``block_widths`` is given.
            block_widths: Column widths of the blocks, summing to ``input_dim``.
        """
        blocks, widths = self._split(x, block_widths)
        present = [blk for blk in blocks if blk is not None]
        if not present:
            raise ShapeError("at least one input block must be present")
        B, L = present[0].shape[:2]
        if L < 1:
            raise ShapeError("empty sequence")
        H = self.hidden_dim
        zx = None
        off = 0
        flat = []
        for blk, w in zip(blocks, widths):
            if blk is not None:
                if blk.shape != (B, L, w):
                    raise ShapeError(f"input block has shape {blk.shape}, expected {(B, L, w)}")
                xb = blk.reshape(B * L, w)
                term = xb @ self.Wx[off:off + w]
                zx = term if zx is None else zx + term
                flat.append((xb, off, w))
            off += w
        zx = (zx + self.b).reshape(B, L, 4 * H)

        hs = np.empty((B, L + 1, H))
        cs = np.empty((B, L + 1, H))
        hs[:, 0] = 0.0
        cs[:, 0] = 0.0
        gates = np.empty((B, L, 4 * H))
        tcs = np.empty((B, L, H))
        Wh = self.Wh
        # sigmoid(z) = (1 + tanh(z / 2)) / 2, so one tanh pass serves all four gates
        half = np.full(4 * H, 0.5)
        half[2 * H:3 * H] = 1.0
        for t in range(L):
            z = zx[:, t] + hs[:, t] @ Wh
            z *= half
            gt = gates[:, t]
            np.tanh(z, out=gt)
            for sl in (gt[:, :2 * H], gt[:, 3 * H:]):
                sl *= 0.5
                sl += 0.5
            c = gt[:, H:2 * H] * cs[:, t] + gt[:, :H] * gt[:, 2 * H:3 * H]
            cs[:, t + 1] = c
            tc = tcs[:, t]
            np.tanh(c, out=tc)
            np.multiply(gt[:, 3 * H:], tc, out=hs[:, t + 1])
        out = hs[:, 1:]
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite LSTM activation")
        self._cache = (flat, widths, B, L, hs, cs, gates, tcs)
        return out

    def backward(self, dh_seq: np.ndarray):
        """Accumulate parameter gradients; returns the input gradient(s).

        The result mirrors the input of the last ``forward``: one array, or a
        list with ``None`` for the blocks that were absent.
        """
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        flat, widths, B, L, hs, cs, gates, tcs = self._cache
        H = self.hidden_dim
        if dh_seq.shape != (B, L, H):
            raise ShapeError(f"upstream gradient has shape {dh_seq.shape}, expected {(B, L, H)}")
        dZ = np.empty((B, L, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        WhT = self.Wh.T
        for t in range(L - 1, -1, -1):
            i = gates[:, t, :H]
            f = gates[:, t, H:2 * H]
            g = gates[:, t, 2 * H:3 * H]
            o = gates[:, t, 3 * H:]
            tc = tcs[:, t]
            dh = dh_seq[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dZ[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ WhT
        dZ2 = dZ.reshape(B * L, 4 * H)
        self.grads["Wh"] += hs[:, :-1].reshape(B * L, H).T @ dZ2
        self.grads["b"] += dZ2.sum(axis=0)
        dx_by_off = {}
        for xb, off, w in flat:
            self.grads["Wx"][off:off + w] += xb.T @ dZ2
            dx_by_off[off] = (dZ2 @ self.Wx[off:off + w].T).reshape(B, L, w)
        if len(widths) == 1 and flat:
            return dx_by_off[0]
        out, off = [], 0
        for w in widths:
            out.append(dx_by_off.get(off))
            off += w
        return out


class LstmStack:
    """Layers applied in sequence, with inverted dropout on each layer's output."""

    def __init__(self, input_dim: int, sizes, dropout: float = 0.0, rng=None):
        sizes = [int(s) for s in sizes]
        if not sizes:
            raise ConfigError("an LSTM stack needs at least one layer")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        rng = make_rng(0 if rng is None else rng)
        self.input_dim = int(input_dim)
        self.sizes = sizes
        self.dropout = float(dropout)
        dims = [self.input_dim] + sizes
        self.layers = [LstmLayer(dims[k], dims[k + 1], rng) for k in range(len(sizes))]
        self._masks = None

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> dict:
        return {f"lstm{k}.{n}": p for k, layer in enumerate(self.layers) for n, p in layer.params().items()}

    def grads(self) -> dict:
        return {f"lstm{k}.{n}": g for k, layer in enumerate(self.layers) for n, g in layer.grads.items()}

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def forward(self, x, train: bool = False, rng=None, block_widths=None) -> np.ndarray:
        masks = []
        h = x
        for k, layer in enumerate(self.layers):
            h = layer.forward(h, block_widths if k == 0 else None)
            if train and self.dropout > 0.0:
                if rng is None:
                    raise ConfigError("training with dropout needs an rng")
                keep = 1.0 - self.dropout
                mask = (rng.random(h.shape) < keep) / keep
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
        self._masks = masks
        return h

    def backward(self, dh: np.ndarray):
        if self._masks is None:
            raise StateError("backward called without a cached forward pass")
        for layer, mask in zip(reversed(self.layers), reversed(self._masks)):
            if mask is not None:
                dh = dh * mask
            dh = layer.backward(dh)
        return dh


class Dense:
    """Affine map from the last hidden state to one output."""

    def __init__(self, input_dim: int, rng=None):
        rng = make_rng(0 if rng is None else rng)
        bound = 1.0 / math.sqrt(input_dim)
        self.W = rng.uniform(-bound, bound, (input_dim, 1))
        self.b = np.zeros(1)
        self.grads = {"W": np.zeros_like(self.W), "b": np.zeros_like(self.b)}
        self._x = None

    def params(self) -> dict:
        return {"W": self.W, "b": self.b}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def forward(self, h_last: np.ndarray) -> np.ndarray:
        self._x = h_last
        return (h_last @ self.W)[:, 0] + self.b[0]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise StateError("backward called without a cached forward pass")
        self.grads["W"] += self._x.T @ dy[:, None]
        self.grads["b"] += dy.sum(keepdims=True)
        return dy[:, None] @ self.W.T


class CascadeNet:
    """Stacked LSTM layers followed by a linear head on the final hidden state.

    Args:
        input_dim: Features per step.
        sizes: Hidden widths from the first layer to the last.
        dropout: Dropout rate on every layer output during training.
        seed: Initialization seed.
        residual: Add the newest value of input feature 0 to the output, so
            the network models the change from the last observation.
    """

    def __init__(self, input_dim: int = 1, sizes=(64, 128), dropout: float = 0.0, seed=0,
                 residual: bool = False):
        rng = make_rng(seed)
        self.stack = LstmStack(input_dim, sizes, dropout, rng)
        self.head = Dense(self.stack.output_dim, rng)
        self.residual = bool(residual)
        self._last_steps = None

    @property
    def input_dim(self) -> int:
        return self.stack.input_dim

    @property
    def sizes(self) -> list:
        return list(self.stack.sizes)

    @property
    def dropout(self) -> float:
        return self.stack.dropout

    def params(self) -> dict:
        out = dict(self.stack.params())
        out.update({f"head.{n}": p for n, p in self.head.params().items()})
        return out

    def grads(self) -> dict:
        out = dict(self.stack.grads())
        out.update({f"head.{n}": g for n, g in self.head.grads.items()})
        return out

    def zero_grad(self) -> None:
        self.stack.zero_grad()
        self.head.zero_grad()

    def forward(self, x, train: bool = False, rng=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeError(f"expected input (batch, steps, {self.input_dim}), got {x.shape}")
        if x.shape[0] == 0 or x.shape[1] == 0:
            raise ShapeError("empty input")
        h = self.stack.forward(x, train, rng)
        self._last_steps = h.shape
        out = self.head.forward(h[:, -1])
        return out + x[:, -1, 0] if self.residual else out

    def backward(self, dy: np.ndarray) -> None:
        if self._last_steps is None:
            raise StateError("backward called without a cached forward pass")
        dh_last = self.head.backward(dy)
        dh = np.zeros(self._last_steps)
        dh[:, -1] = dh_last
        self.stack.backward(dh)

    def loss_and_grads(self, x, y, train: bool = False, rng=None):
        """Mean squared error and its gradient for one batch."""
        self.zero_grad()
        pred = self.forward(x, train, rng)
        y = np.asarray(y, dtype=np.float64)
        err = pred - y
        loss = float(np.mean(err * err))
        self.backward(2.0 * err / err.size)
        return loss, self.grads()

    def predict(self, x, batch_size: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.concatenate([self.forward(x[s:s + batch_size]) for s in range(0, len(x), batch_size)]) \
            if len(x) else np.zeros(0)

    def config(self) -> dict:
        return {"input_dim": self.input_dim, "sizes": self.sizes, "dropout": self.dropout,
                "residual": self.residual}


def mse(pred, target) -> float:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(d * d))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """Bias-corrected Adam update, in place, for every name present in ``grads``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name}")
        if params[name].shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match {name} {params[name].shape}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            v = state.v[name] = np.zeros_like(g)
        elif m.shape != g.shape:
            raise ShapeError(f"optimizer state for {name} has shape {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


@dataclass
class TrainConfig:
    """Optimizer schedule and input windowing.

    The step size at optimizer step ``s`` (0-based) in epoch ``e`` is
    ``learning_rate / (1 + decay * s) * 0.5 ** (e // halve_every)``.
    """

    learning_rate: float = 0.01
    decay: float = 1e-6
    halve_every: int | None = None
    epochs: int = 200
    seed: int = 0
    lags: tuple = tuple(range(2, 10))
    skip_nearest: bool = True
    batch_size: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.lags = tuple(int(p) for p in self.lags)
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.decay < 0:
            raise ConfigError("decay must be nonnegative")
        if self.halve_every is not None and self.halve_every < 1:
            raise ConfigError("halve_every must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        check_lags(self.lags, self.skip_nearest)

    def lr_at(self, step: int, epoch: int) -> float:
        lr = self.learning_rate / (1.0 + self.decay * step)
        if self.halve_every:
            lr *= 0.5 ** (epoch // self.halve_every)
        return lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lags"] = list(self.lags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training options: {sorted(extra)}")
        return cls(**d)


def check_lags(lags, skip_nearest: bool) -> tuple:
    lags = tuple(int(p) for p in lags)
    if not lags:
        raise ConfigError("lag set is empty")
    if min(lags) < 1:
        raise ConfigError("lags must be positive")
    if len(set(lags)) != len(lags):
        raise ConfigError("lags must be distinct")
    if skip_nearest and 1 in lags:
        raise ConfigError("skip_nearest excludes lag 1")
    return tuple(sorted(lags))


def make_windows(series, lags, skip_nearest: bool = True, start: int = 0, stop: int | None = None):
    """Lagged inputs and targets for every target index with a full history.

    Args:
        series: 1-D array or a single-node ``NodeSeries``.
        lags: Positive lags; inputs come out in ascending lag order.
        skip_nearest: Refuse lag 1 (on super-resolved data the nearest slot
            interpolates the target).
        start: Smallest target index considered.
        stop: One past the largest target index considered.

    Returns:
        ``(inputs, targets)`` with shapes ``(n, len(lags))`` and ``(n,)``.
    """
    lags = np.asarray(check_lags(lags, skip_nearest))
    values = getattr(series, "values", series)
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 1:
        raise ShapeError("make_windows takes one series")
    stop = x.size if stop is None else min(stop, x.size)
    t = np.arange(max(start, int(lags.max())), stop)
    return x[t[:, None] - lags[None, :]], x[t]


def as_sequence(inputs: np.ndarray) -> np.ndarray:
    """Lag matrix (ascending lag) to an oldest-first sequence ``(n, m, 1)``."""
    return np.ascontiguousarray(inputs[:, ::-1, None])


def train(net: CascadeNet, inputs, targets, cfg: TrainConfig, log=None) -> list:
    """Fit ``net`` on lag windows; returns the mean training loss of each epoch.

    Args:
        net: Network, updated in place.
        inputs: Lag matrix ``(n, m)`` from ``make_windows``.
        targets: Targets ``(n,)``.
        cfg: Optimizer settings; ``cfg.seed`` drives shuffling and dropout.
        log: Optional callable ``log(epoch, loss)``.
    """
    x = as_sequence(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64)
    if len(x) == 0 or len(x) != len(y):
        raise ShapeError("need a nonempty set of aligned windows")
    rng = make_rng(cfg.seed)
    state = AdamState()
    params = net.params()
    history = []
    step = 0
    n = len(x)
    bs = cfg.batch_size or n
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            loss, grads = net.loss_and_grads(x[idx], y[idx], True, rng)
            adam_step(params, grads, state, cfg.lr_at(step, epoch), cfg.beta1, cfg.beta2, cfg.eps)
            total += loss * len(idx)
            step += 1
        history.append(total / n)
        if log is not None:
            log(epoch, history[-1])
    return history


def gradient_check(net: CascadeNet, x, y, eps: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest relative gap between backprop and central differences.

    Each entry contributes ``|a - n| / max(|a|, |n|, floor)``; the network is
    evaluated without dropout. Central differences on an O(1) loss carry
    roundoff near 1e-11, so the floor keeps near-zero gradients from
    dominating.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, grads = net.loss_and_grads(x, y)
    analytic = {k: g.copy() for k, g in grads.items()}
    worst = 0.0
    for name, p in net.params().items():
        flat = p.reshape(-1)
        a = analytic[name].reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            up = mse(net.forward(x), y)
            flat[k] = old - eps
            down = mse(net.forward(x), y)
            flat[k] = old
            num = (up - down) / (2.0 * eps)
            rel = abs(a[k] - num) / max(abs(a[k]), abs(num), floor)
            worst = max(worst, rel)
    return worst


def _encode_params(params: dict) -> dict:
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.items()}


def _decode_into(params: dict, stored: dict, where: str) -> None:
    missing = set(params) - set(stored)
    extra = set(stored) - set(params)
    if missing or extra:
        raise ShapeError(f"{where}: parameter names differ (missing {sorted(missing)}, "
                         f"unexpected {sorted(extra)})")
    for name, p in params.items():
        rec = stored[name]
        if tuple(rec["shape"]) != p.shape:
            raise ShapeError(f"{where}: {name} has shape {tuple(rec['shape'])}, expected {p.shape}")
        p[...] = np.asarray(rec["data"], dtype=np.float64).reshape(p.shape)


def encode_state(state: AdamState | None) -> dict | None:
    if state is None:
        return None
    return {"t": state.t, "m": _encode_params(state.m), "v": _encode_params(state.v)}


def decode_state(d: dict | None) -> AdamState | None:
    if d is None:
        return None
    dec = lambda rec: {k: np.asarray(r["data"], dtype=np.float64).reshape(r["shape"]) for k, r in rec.items()}
    return AdamState(dec(d["m"]), dec(d["v"]), int(d["t"]))


def write_checkpoint(path, kind: str, config: dict, params: dict, optimizer: AdamState | None = None,
                     extra: dict | None = None) -> None:
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": kind,
           "config": config, "params": _encode_params(params),
           "optimizer": encode_state(optimizer), "extra": extra or {}}
    Path(path).write_text(json.dumps(doc))


def read_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')}")
    return doc


def save_cascade(net: CascadeNet, path, optimizer: AdamState | None = None) -> None:
    write_checkpoint(path, "cascade", net.config(), net.params(), optimizer)


def load_cascade(path) -> tuple[CascadeNet, AdamState | None]:
    doc = read_checkpoint(path)
    if doc["kind"] != "cascade":
        raise ConfigError(f"checkpoint holds a {doc['kind']} model, not a cascade")
    cfg = doc["config"]
    net = CascadeNet(cfg["input_dim"], cfg["sizes"], cfg["dropout"], residual=cfg.get("residual", False))
    _decode_into(net.params(), doc["params"], str(path))
    return net, decode_state(doc.get("optimizer"))
