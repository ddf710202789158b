"""Directed weighted graph with node classes, shared by inference and the GSRNN."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightedGraph:
    """Directed edges ``src -> dst`` with positive weights.

    An edge ``j -> i`` with weight ``w_ij`` means node ``j`` feeds node ``i``:
    it contributes ``w_ij * X_j`` to the pooled input of ``i``.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    node_class: np.ndarray | None = None

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        weight = np.asarray(self.weight, dtype=np.float64).ravel()
        n = int(self.num_nodes)
        if not (src.size == dst.size == weight.size):
            raise ValueError("src, dst and weight must have equal length")
        if src.size:
            if min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n:
                raise ValueError("edge endpoint out of range")
            if not np.all(weight > 0) or not np.all(np.isfinite(weight)):
                raise ValueError("edge weights must be positive and finite")
            keys = src * n + dst
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate directed edge")
        cls = np.zeros(n, dtype=np.int64) if self.node_class is None else \
            np.asarray(self.node_class, dtype=np.int64).ravel()
        if cls.size != n or (n and cls.min() < 0):
            raise ValueError("node_class must give a nonnegative label for every node")
        for name, arr in (("src", src), ("dst", dst), ("weight", weight), ("node_class", cls)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "num_nodes", n)

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    @property
    def num_classes(self) -> int:
        return int(self.node_class.max()) + 1 if self.num_nodes else 0

    def with_classes(self, node_class) -> "WeightedGraph":
        return WeightedGraph(self.num_nodes, self.src, self.dst, self.weight, node_class)

    def scaled(self, factor: float) -> "WeightedGraph":
        return WeightedGraph(self.num_nodes, self.src, self.dst, self.weight * factor, self.node_class)

    def weight_matrix(self) -> np.ndarray:
        """Dense ``W[i, j]`` = weight of edge ``j -> i`` (0 when absent)."""
        W = np.zeros((self.num_nodes, self.num_nodes))
        W[self.dst, self.src] = self.weight
        return W

    def in_edges(self, i: int):
        """(sources, weights) of edges ending at ``i``, ordered by source."""
        sel = np.flatnonzero(self.dst == i)
        order = np.argsort(self.src[sel], kind="stable")
        sel = sel[order]
        return self.src[sel], self.weight[sel]

    def to_dict(self) -> dict:
        edges = [{"src": int(s), "dst": int(d), "weight": float(w)}
                 for s, d, w in zip(self.src, self.dst, self.weight)]
        return {"num_nodes": self.num_nodes, "edges": edges,
                "classes": self.node_class.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightedGraph":
        edges = d.get("edges", [])
        classes = d.get("classes")
        n = d.get("num_nodes", len(classes) if classes else 0)
        return cls(n, [e["src"] for e in edges], [e["dst"] for e in edges],
                   [e["weight"] for e in edges], classes)


def save_graph(graph: WeightedGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph.to_dict(), fh, indent=1)


def load_graph(path) -> WeightedGraph:
    with open(path) as fh:
        return WeightedGraph.from_dict(json.load(fh))
