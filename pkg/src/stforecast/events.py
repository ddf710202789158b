"""Timestamped events on a node set: data model, CSV ingestion and binning."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np


class DataError(ValueError):
    """Malformed or out-of-range input data."""


class Event(NamedTuple):
    time: float
    node: int


@dataclass(frozen=True)
class EventSequence:
    """Events on ``[0, horizon)`` sorted by time (stable, ties by node).

    Times and nodes are kept as parallel numpy arrays; iterate to get
    :class:`Event` tuples.
    """

    times: np.ndarray
    nodes: np.ndarray
    horizon: float
    num_nodes: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).ravel()
        nodes = np.asarray(self.nodes, dtype=np.int64).ravel()
        if times.shape != nodes.shape:
            raise DataError("times and nodes must have equal length")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DataError(f"horizon must be positive and finite, got {self.horizon}")
        if self.num_nodes < 1:
            raise DataError("num_nodes must be >= 1")
        if times.size:
            if not np.all(np.isfinite(times)) or times.min() < 0:
                raise DataError("event times must be finite and nonnegative")
            if times.max() >= self.horizon:
                raise DataError("event times must lie strictly before the horizon")
            if nodes.min() < 0 or nodes.max() >= self.num_nodes:
                raise DataError(f"node index out of range [0, {self.num_nodes})")
            order = np.lexsort((nodes, times))
            times, nodes = times[order], nodes[order]
        times.flags.writeable = False
        nodes.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "num_nodes", int(self.num_nodes))

    @classmethod
    def from_events(cls, events, horizon: float, num_nodes: int) -> "EventSequence":
        events = list(events)
        times = [float(e[0]) for e in events]
        nodes = [int(e[1]) for e in events]
        return cls(np.array(times, dtype=np.float64), np.array(nodes, dtype=np.int64),
                   horizon, num_nodes)

    def __len__(self) -> int:
        return int(self.times.size)

    def __iter__(self) -> Iterator[Event]:
        for t, u in zip(self.times.tolist(), self.nodes.tolist()):
            yield Event(t, u)

    @property
    def events(self) -> list[Event]:
        return list(self)

    def counts(self) -> np.ndarray:
        """Number of events per node."""
        return np.bincount(self.nodes, minlength=self.num_nodes)

    def restrict(self, t_end: float) -> "EventSequence":
        """Events strictly before ``t_end``, with horizon ``t_end``."""
        keep = self.times < t_end
        return EventSequence(self.times[keep], self.nodes[keep], t_end, self.num_nodes)


class SeriesState(str, enum.Enum):
    RAW = "raw"
    DIURNAL_CUMULATIVE = "diurnal_cumulative"
    SUPER_RESOLVED = "super_resolved"


@dataclass(frozen=True)
class NodeSeries:
    """Regular-interval per-node series, ``values[node, step]``.

    ``period`` is the number of raw steps per day; super-resolved series keep
    the raw period and use blocks of ``2 * period - 1`` steps.
    """

    values: np.ndarray
    bin_width: float = 1.0
    period: int = 24
    state: SeriesState = SeriesState.RAW
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, ndmin=2)
        if values.ndim != 2:
            raise DataError("values must be a 2-D array [node, step]")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "state", SeriesState(self.state))

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def block(self) -> int:
        """Steps per day block in the current state."""
        if self.state is SeriesState.SUPER_RESOLVED:
            return 2 * self.period - 1
        return self.period

    def with_values(self, values, state: SeriesState | None = None) -> "NodeSeries":
        return NodeSeries(values, self.bin_width, self.period,
                          self.state if state is None else state, dict(self.meta))


def _parse_float(text: str, lineno: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: cannot parse {what} {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"line {lineno}: {what} must be finite")
    return value


def load_events(path, num_nodes: int, horizon: float | None = None,
                bin_width: float = 1.0) -> EventSequence:
    """Read a ``time,node`` CSV.

    Unless ``horizon`` is given it is the largest event time rounded up to
    the next whole bin, so every event falls strictly inside ``[0, horizon)``.

    Raises:
        DataError: on a malformed row (message names the line) or a node
            index outside ``[0, num_nodes)``.
    """
    times, nodes = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["time", "node"]:
            raise DataError("line 1: expected header 'time,node'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise DataError(f"line {lineno}: expected 2 fields, got {len(row)}")
            t = _parse_float(row[0], lineno, "time")
            if t < 0:
                raise DataError(f"line {lineno}: negative time {t}")
            u = _parse_float(row[1], lineno, "node")
            if u != int(u):
                raise DataError(f"line {lineno}: node must be an integer, got {row[1]!r}")
            u = int(u)
            if not 0 <= u < num_nodes:
                raise DataError(f"line {lineno}: node {u} out of range [0, {num_nodes})")
            times.append(t)
            nodes.append(u)
    if horizon is None:
        if times:
            horizon = (math.floor(max(times) / bin_width) + 1) * bin_width
        else:
            horizon = bin_width
    return EventSequence(np.array(times, dtype=np.float64),
                         np.array(nodes, dtype=np.int64), horizon, num_nodes)


def save_events(seq: EventSequence, path) -> None:
    # repr() of a float is the shortest string that round-trips exactly
    with open(path, "w", newline="") as fh:
        fh.write("time,node\n")
        for t, u in zip(seq.times.tolist(), seq.nodes.tolist()):
            fh.write(f"{t!r},{u}\n")


def bin_counts(seq: EventSequence, bin_width: float = 1.0, period: int = 24) -> NodeSeries:
    """Count events per node in bins ``[k*w, (k+1)*w)`` covering the horizon."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    nbins = max(1, math.ceil(seq.horizon / bin_width - 1e-12))
    idx = np.floor(seq.times / bin_width).astype(np.int64)
    idx = np.minimum(idx, nbins - 1)
    values = np.zeros((seq.num_nodes, nbins))
    np.add.at(values, (seq.nodes, idx), 1.0)
    return NodeSeries(values, bin_width, period, SeriesState.RAW)


def save_series(series: NodeSeries, path) -> None:
    """Write ``t,node0,node1,...`` CSV preceded by a ``#state=`` comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"#state={series.state.value},period={series.period},"
                 f"bin_width={series.bin_width!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"node{u}" for u in range(series.num_nodes)])
        for k in range(series.length):
            writer.writerow([k] + [repr(float(v)) for v in series.values[:, k]])


def load_series(path, period: int | None = None) -> NodeSeries:
    state, meta_period, bin_width = SeriesState.RAW, 24, 1.0
    lines = Path(path).read_text().splitlines()
    first_line = 2
    if lines and lines[0].startswith("#"):
        first_line = 3
        for item in lines[0][1:].split(","):
            key, _, value = item.partition("=")
            key = key.strip()
            if key == "state":
                state = SeriesState(value.strip())
            elif key == "period":
                meta_period = int(value)
            elif key == "bin_width":
                bin_width = float(value)
        lines = lines[1:]
    reader = csv.reader(lines)
    header = next(reader, None)
    if not header or header[0] != "t":
        raise DataError("series CSV must start with a 't' column")
    rows = []
    for lineno, row in enumerate(reader, start=first_line):
        if not row:
            continue
        rows.append([_parse_float(c, lineno, "value") for c in row[1:]])
    values = np.array(rows, dtype=np.float64).T if rows else np.zeros((len(header) - 1, 0))
    return NodeSeries(values, bin_width, period or meta_period, state)
