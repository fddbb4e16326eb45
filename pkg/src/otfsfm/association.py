"""Layered association tree around a new image and its per-image weights.

Layer 1 holds the images retrieved for the new (root) image, layer i+1 the
images retrieved for layer-i entries. Each image sits in the shallowest
layer that reaches it, reached through the parent whose accumulated
descriptor distance is smallest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable

S_MIN = 1e-6


class _Fixed:
    """Weight marker for cameras held constant during adjustment."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "FIXED"

    def __reduce__(self):
        return (_Fixed, ())


FIXED = _Fixed()


def is_fixed(weight) -> bool:
    return weight is FIXED


@dataclass(frozen=True)
class TreeEntry:
    image_id: Hashable
    layer: int
    parent: Hashable
    path_distances: tuple  # edge distances from the root down to this image
    s_min: float = S_MIN

    @property
    def path_sum(self) -> float:
        return float(sum(self.path_distances))

    @property
    def path_inverse_sum(self) -> float:
        return float(sum(1.0 / max(s, self.s_min) for s in self.path_distances))


@dataclass
class AssociationTree:
    root: Hashable
    depth: int
    fanout: int
    layers: list = field(default_factory=list)  # layers[i - 1] -> entries of layer i

    def entries(self):
        for layer in self.layers:
            yield from layer

    def image_ids(self) -> list:
        return [self.root] + [e.image_id for e in self.entries()]

    def layer_of(self, image_id) -> int:
        if image_id == self.root:
            return 0
        for e in self.entries():
            if e.image_id == image_id:
                return e.layer
        raise KeyError(image_id)

    def __len__(self):
        return 1 + sum(len(layer) for layer in self.layers)


@dataclass(frozen=True)
class ImageWeight:
    image_id: Hashable
    layer: int
    weight: object  # float or FIXED


def _id_key(x):
    return (0, x, "") if isinstance(x, (int, float)) else (1, 0, repr(x))


def build_tree(root_id, retrieve: Callable, depth: int = 4, fanout: int = 8,
               s_min: float = S_MIN) -> AssociationTree:
    """Breadth-first expansion of `retrieve` results up to `depth` layers.

    `retrieve(image_id)` returns (image_id, distance) pairs ordered by
    similarity; only the first `fanout` are expanded.
    """
    tree = AssociationTree(root_id, depth, fanout)
    placed = {root_id: ()}
    frontier = [(root_id, ())]
    for layer in range(1, depth + 1):
        best: dict = {}
        for parent, parent_path in frontier:
            for image_id, dist in list(retrieve(parent))[:fanout]:
                if image_id in placed:
                    continue
                path = parent_path + (float(dist),)
                key = (sum(path), _id_key(parent))
                cur = best.get(image_id)
                if cur is None or key < cur[0]:
                    best[image_id] = (key, parent, path)
        if not best:
            break
        entries = [TreeEntry(i, layer, p, path, s_min)
                   for i, (_, p, path) in best.items()]
        entries.sort(key=lambda e: (e.path_sum, _id_key(e.image_id)))
        tree.layers.append(entries)
        for e in entries:
            placed[e.image_id] = e.path_distances
        frontier = [(e.image_id, e.path_distances) for e in entries]
    return tree


def entry_weight(entry: TreeEntry, depth: int):
    if entry.layer == depth:
        return FIXED
    # Exponent zero on layer 1 yields exactly 1.
    return entry.path_inverse_sum ** (-(entry.layer - 1))


def compute_weights(tree: AssociationTree) -> list[ImageWeight]:
    out = [ImageWeight(tree.root, 0, 1.0)]
    for e in tree.entries():
        out.append(ImageWeight(e.image_id, e.layer, entry_weight(e, tree.depth)))
    return out
