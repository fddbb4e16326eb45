"""Incrementally built HNSW graph over global image descriptors.

Images are inserted one at a time as they arrive and can be queried at any
point for their most similar predecessors. Distances are Euclidean between
unit-norm descriptors, so every distance lies in [0, 2].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from ._hnsw_kernels import connect_kernel, search_layer_kernel
from .errors import CapacityError, InvalidArgumentError

DEFAULT_DIM = 256


def normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).ravel()
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise InvalidArgumentError("descriptor must be finite and non-zero")
    return v / norm


@dataclass(frozen=True)
class GlobalDescriptor:
    """Unit-norm image descriptor. Values are normalized on construction."""

    values: np.ndarray
    image_id: Hashable

    def __post_init__(self):
        object.__setattr__(self, "values", normalize(self.values))

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass
class HnswParams:
    max_elements: int = 10000
    ef_construction: int = 200
    max_connections: int = 16
    level_mult: float | None = None
    ef_search: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.max_connections < 2:
            raise InvalidArgumentError("max_connections must be >= 2")
        if self.level_mult is None:
            self.level_mult = 1.0 / math.log(self.max_connections)
        if self.ef_construction < self.max_connections:
            raise InvalidArgumentError("ef_construction must be >= max_connections")
        if self.ef_search < 1 or self.max_elements < 1 or self.level_mult < 0:
            raise InvalidArgumentError("invalid HNSW parameters")


def assign_layer(rng_draw: float, level_mult: float) -> int:
    """Top layer of a new node: floor(-ln(u) * m_L) for u in (0, 1]."""
    if not (0.0 < rng_draw <= 1.0):
        raise InvalidArgumentError(f"rng_draw must lie in (0, 1], got {rng_draw}")
    return int(math.floor(-math.log(rng_draw) * level_mult))


def exhaustive_query(descriptors, q, n: int):
    """Exact top-n by linear scan over (image_id, values) pairs or descriptors.

    Ties are broken by lower image_id.
    """
    items = [(d.image_id, d.values) if isinstance(d, GlobalDescriptor) else d
             for d in descriptors]
    if not items or n < 1:
        return []
    qv = q.values if isinstance(q, GlobalDescriptor) else normalize(q)
    ids = [i for i, _ in items]
    mat = np.stack([np.asarray(v, dtype=np.float64) for _, v in items])
    dists = np.sqrt(np.sum((mat - qv) ** 2, axis=1))
    return _top_sorted(ids, dists, n)


def _top_sorted(ids, dists, n):
    n = min(n, len(ids))
    if n < len(ids):
        # Everything at or below the n-th distance, then an exact sort.
        kth = np.partition(dists, n - 1)[n - 1]
        sel = np.nonzero(dists <= kth)[0]
    else:
        sel = np.arange(len(ids))
    order = sorted(sel, key=lambda k: (dists[k], ids[k]))[:n]
    return [(ids[k], float(dists[k])) for k in order]


class HnswIndex:
    """Multi-layer proximity graph supporting insert-while-query.

    Layer 0 allows up to 2 * max_connections neighbors per node, higher
    layers up to max_connections. All edges are kept bidirectional.
    """

    def __init__(self, dim: int = DEFAULT_DIM, params: HnswParams | None = None):
        if dim < 1:
            raise InvalidArgumentError("dim must be positive")
        self.dim = dim
        self.params = params or HnswParams()
        cap = self.params.max_elements
        self._data = np.zeros((cap, dim), dtype=np.float64)
        self._levels = np.zeros(cap, dtype=np.int64)
        self._links: list[np.ndarray] = []
        self._counts: list[np.ndarray] = []
        self._image_ids: list = []
        self._node_of: dict = {}
        self._visit = np.zeros(cap, dtype=np.int64)
        self._tag = 0
        self._rng = np.random.default_rng(self.params.seed)
        self.entry_point = -1
        self.top_layer = -1

    def __len__(self):
        return len(self._image_ids)

    def __contains__(self, image_id):
        return image_id in self._node_of

    @property
    def image_ids(self):
        return list(self._image_ids)

    def node_of(self, image_id) -> int:
        return self._node_of[image_id]

    def image_id_of(self, node: int):
        return self._image_ids[node]

    def vector(self, image_id) -> np.ndarray:
        return self._data[self._node_of[image_id]].copy()

    def level_of(self, image_id) -> int:
        return int(self._levels[self._node_of[image_id]])

    def width(self, layer: int) -> int:
        m = self.params.max_connections
        return 2 * m if layer == 0 else m

    def neighbors(self, image_id, layer: int) -> list:
        node = self._node_of[image_id]
        if layer > self._levels[node]:
            raise InvalidArgumentError(f"node not present at layer {layer}")
        row = self._links[layer][node, : self._counts[layer][node]]
        return [self._image_ids[k] for k in row]

    def _neighbor_nodes(self, node: int, layer: int) -> np.ndarray:
        return self._links[layer][node, : self._counts[layer][node]].copy()

    def _ensure_layers(self, top: int):
        cap = self.params.max_elements
        while len(self._links) <= top:
            layer = len(self._links)
            self._links.append(np.full((cap, self.width(layer)), -1, dtype=np.int64))
            self._counts.append(np.zeros(cap, dtype=np.int64))

    def _next_tag(self) -> int:
        self._tag += 1
        return self._tag

    def _coerce(self, q) -> np.ndarray:
        v = q.values if isinstance(q, GlobalDescriptor) else normalize(q)
        if v.shape[0] != self.dim:
            raise InvalidArgumentError(
                f"descriptor dimension {v.shape[0]} != index dimension {self.dim}")
        return v

    def search_layer(self, q, ep, ef: int, layer: int):
        """Greedy best-first search over one layer; `ep` are node ids. Returns (nodes, dists)."""
        ep = np.asarray(list(ep), dtype=np.int64)
        if ep.size == 0:
            raise InvalidArgumentError("entry set must be non-empty")
        if ef < 1:
            raise InvalidArgumentError("ef must be >= 1")
        if layer >= len(self._links) or np.any(self._levels[ep] < layer):
            raise InvalidArgumentError(f"entry node missing from layer {layer}")
        qv = self._coerce(q)
        return search_layer_kernel(self._data, self._links[layer], self._counts[layer],
                                   qv, ep, ef, self._visit, self._next_tag())

    def _greedy_descend(self, qv, ep, down_to: int):
        for layer in range(self.top_layer, down_to, -1):
            nodes, _ = search_layer_kernel(self._data, self._links[layer],
                                           self._counts[layer], qv, ep, 1,
                                           self._visit, self._next_tag())
            ep = nodes[:1]
        return ep

    def insert(self, q, image_id=None, layer: int | None = None) -> int:
        """Add one descriptor; returns the layer it was assigned to."""
        if isinstance(q, GlobalDescriptor) and image_id is None:
            image_id = q.image_id
        if image_id is None:
            raise InvalidArgumentError("image_id required")
        if image_id in self._node_of:
            raise InvalidArgumentError(f"image_id {image_id!r} already indexed")
        if len(self) >= self.params.max_elements:
            raise CapacityError(f"index full ({self.params.max_elements} elements)")
        qv = self._coerce(q)
        if layer is None:
            layer = assign_layer(1.0 - self._rng.random(), self.params.level_mult)
        node = len(self._image_ids)
        self._data[node] = qv
        self._levels[node] = layer
        self._image_ids.append(image_id)
        self._node_of[image_id] = node
        self._ensure_layers(layer)

        if self.entry_point < 0:
            self.entry_point, self.top_layer = node, layer
            return layer

        ep = np.array([self.entry_point], dtype=np.int64)
        ep = self._greedy_descend(qv, ep, layer)
        m = self.params.max_connections
        for li in range(min(self.top_layer, layer), -1, -1):
            nodes, _ = search_layer_kernel(self._data, self._links[li], self._counts[li],
                                           qv, ep, self.params.ef_construction,
                                           self._visit, self._next_tag())
            connect_kernel(self._data, self._links[li], self._counts[li], node,
                           nodes[:m].copy())
            ep = nodes
        if layer > self.top_layer:
            self.entry_point, self.top_layer = node, layer
        return layer

    def query_top_n(self, q, n: int, ef: int | None = None):
        """Approximate top-n as (image_id, distance), ascending."""
        if n < 1:
            raise InvalidArgumentError("n must be >= 1")
        if self.entry_point < 0:
            return []
        qv = self._coerce(q)
        ep = self._greedy_descend(qv, np.array([self.entry_point], dtype=np.int64), 0)
        ef = max(ef or self.params.ef_search, n)
        nodes, dists = search_layer_kernel(self._data, self._links[0], self._counts[0],
                                           qv, ep, ef, self._visit, self._next_tag())
        ids = [self._image_ids[k] for k in nodes]
        return _top_sorted(ids, dists, n)

    def exhaustive(self, q, n: int):
        """Linear-scan oracle over the indexed descriptors."""
        if len(self) == 0:
            return []
        qv = self._coerce(q)
        dists = np.sqrt(np.sum((self._data[: len(self)] - qv) ** 2, axis=1))
        return _top_sorted(self._image_ids, dists, n)

    def adjacency(self) -> dict:
        """{(image_id, layer): sorted neighbor ids}; used for invariant checks."""
        out = {}
        for node, iid in enumerate(self._image_ids):
            for li in range(int(self._levels[node]) + 1):
                out[(iid, li)] = sorted(self.neighbors(iid, li), key=repr)
        return out

    def _link(self, a, b, layer: int):
        """Add an undirected edge without pruning (graph construction in tests)."""
        na, nb = self._node_of[a], self._node_of[b]
        for x, y in ((na, nb), (nb, na)):
            c = self._counts[layer][x]
            if c >= self.width(layer):
                raise CapacityError("adjacency row full")
            self._links[layer][x, c] = y
            self._counts[layer][x] = c + 1

    def _add_isolated(self, q, image_id, layer: int = 0):
        """Place a node without connecting it (graph construction in tests)."""
        qv = self._coerce(q)
        node = len(self._image_ids)
        self._data[node] = qv
        self._levels[node] = layer
        self._image_ids.append(image_id)
        self._node_of[image_id] = node
        self._ensure_layers(layer)
        if self.entry_point < 0 or layer > self.top_layer:
            self.entry_point, self.top_layer = node, layer
        return node
