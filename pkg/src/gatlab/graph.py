"""Immutable directed graphs with a CSR in-neighbor index, plus noise injection.

An edge ``(j, i)`` points from ``j`` to ``i``; the neighborhood of ``i`` is the
set of sources of edges into ``i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractError, GraphError


def _readonly(arr):
    arr = np.ascontiguousarray(arr, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed graph whose edge arrays are stored in CSR (by destination) order.

    ``src[csr_offsets[i]:csr_offsets[i+1]]`` lists the in-neighbors of ``i``
    in ascending order; ``dst`` holds the matching destination of each edge.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    csr_offsets: np.ndarray

    @property
    def num_edges(self):
        return int(self.src.shape[0])

    @property
    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist()))

    @property
    def csr_targets(self):
        return self.src

    def neighbors(self, i):
        return self.src[self.csr_offsets[i]:self.csr_offsets[i + 1]]

    def in_degree(self):
        return np.diff(self.csr_offsets)

    def edge_set(self):
        return set(self.edges)

    def __eq__(self, other):
        return (
            isinstance(other, Graph)
            and self.num_nodes == other.num_nodes
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
        )

    def __hash__(self):
        return hash((self.num_nodes, self.src.tobytes(), self.dst.tobytes()))


def build_graph(num_nodes, edges):
    """Validate ``(src, dst)`` pairs and build the CSR index.

    Raises :class:`GraphError` on an out-of-range endpoint or a duplicate edge.
    """
    num_nodes = int(num_nodes)
    if num_nodes < 0:
        raise GraphError(f"num_nodes must be non-negative, got {num_nodes}")
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
        bad = arr[(arr < 0).any(axis=1) | (arr >= num_nodes).any(axis=1)][0]
        raise GraphError(f"edge {tuple(bad.tolist())} has an endpoint outside [0, {num_nodes})")
    src, dst = arr[:, 0], arr[:, 1]
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    if src.size > 1:
        dup = (src[1:] == src[:-1]) & (dst[1:] == dst[:-1])
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            raise GraphError(f"duplicate edge ({src[k]}, {dst[k]})")
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=num_nodes), out=offsets[1:])
    return Graph(num_nodes, _readonly(src), _readonly(dst), _readonly(offsets))


@dataclass(frozen=True)
class NoiseSpec:
    p: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ContractError(f"noise ratio must lie in [0, 1], got {self.p}")


def inject_noise(g, spec):
    """Add ``floor(|E| * p)`` uniformly sampled non-edges (never self-loops)."""
    count = int(math.floor(g.num_edges * spec.p))
    n = g.num_nodes
    existing = g.edge_set()
    non_loop_edges = sum(1 for s, d in existing if s != d)
    capacity = n * n - n - non_loop_edges
    if capacity < count:
        raise CapacityError(
            f"need {count} new edges but only {capacity} non-edges are available"
        )
    if count == 0:
        return g
    rng = np.random.default_rng(spec.seed)
    if count * 2 <= capacity:
        added = []
        seen = set(existing)
        while len(added) < count:
            s, d = (int(v) for v in rng.integers(0, n, size=2))
            if s == d or (s, d) in seen:
                continue
            seen.add((s, d))
            added.append((s, d))
    else:
        # dense regime: rejection would stall, enumerate the candidates instead
        candidates = [
            (s, d) for s in range(n) for d in range(n) if s != d and (s, d) not in existing
        ]
        picks = rng.choice(len(candidates), size=count, replace=False)
        added = [candidates[i] for i in picks]
    return build_graph(n, g.edges + added)


def bipartite_complete(k):
    """Queries ``0..k-1`` and keys ``k..2k-1``, every query-key pair in both directions."""
    if k < 1:
        raise ContractError(f"bipartite_complete needs k >= 1, got {k}")
    q = np.repeat(np.arange(k), k)
    key = np.tile(np.arange(k, 2 * k), k)
    edges = np.concatenate([np.stack([key, q], 1), np.stack([q, key], 1)])
    return build_graph(2 * k, edges)


@dataclass
class GraphRecord:
    """One line of the graph JSONL format."""

    graph: Graph
    node_attrs: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self):
        rec = {
            "num_nodes": self.graph.num_nodes,
            "edges": [list(e) for e in self.graph.edges],
            "node_attrs": self.node_attrs,
            "labels": self.labels,
        }
        rec.update(self.extra)
        return json.dumps(rec, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        rec = json.loads(line)
        try:
            graph = build_graph(rec.pop("num_nodes"), rec.pop("edges"))
        except KeyError as exc:
            raise GraphError(f"graph record is missing field {exc}") from None
        return cls(graph, rec.pop("node_attrs", []), rec.pop("labels", []), rec)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [GraphRecord.from_json(line) for line in fh if line.strip()]


def repeat_graph(g, copies):
    """Disjoint union of ``copies`` relabelled copies of ``g`` (CSR order kept)."""
    n, m = g.num_nodes, g.num_edges
    shift = (n * np.arange(copies, dtype=np.int64))[:, None]
    src = (g.src[None, :] + shift).reshape(-1)
    dst = (g.dst[None, :] + shift).reshape(-1)
    offsets = np.concatenate(
        [[0], (g.csr_offsets[1:][None, :] + (m * np.arange(copies))[:, None]).reshape(-1)]
    )
    return Graph(n * copies, _readonly(src), _readonly(dst), _readonly(offsets))
