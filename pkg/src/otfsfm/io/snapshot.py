"""Binary snapshot of an HnswIndex (version 1, little-endian).

    header
      4s   magic b"OFHN"
      u32  version (1)
      u32  D (descriptor dimension)
      u32  Max (max_connections; layer 0 allows 2 * Max)
      u32  ef_construction
      u32  ef_search
      f64  m_L (level multiplier)
      u64  max_elements
      u64  node count
      i64  entry point node (-1 when empty)
      i32  top layer (-1 when empty)
      u64  seed
      u8[16] PCG64 state, u8[16] PCG64 increment (128-bit little-endian)
      u32  has_uint32, u32 uinteger (buffered half-draw)
      u64  visit tag
    per node, in insertion order
      i64  image id
      u32  layer count (top layer + 1)
      f64[D] unit descriptor
      per layer: u32 neighbor count, i64[count] neighbor node indices

The generator state is included so an index restored mid-stream assigns the
same layers to later inserts as the original would have.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DatasetError
from ..retrieval import HnswIndex, HnswParams

MAGIC = b"OFHN"
VERSION = 1
_HEAD = struct.Struct("<4sIIIIIdQQqiQ16s16sIIQ")


def _u128(x: int) -> bytes:
    return int(x).to_bytes(16, "little")


def dumps(index: HnswIndex) -> bytes:
    p = index.params
    st = index._rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 generator state can be serialized")
    parts = [_HEAD.pack(MAGIC, VERSION, index.dim, p.max_connections, p.ef_construction,
                        p.ef_search, p.level_mult, p.max_elements, len(index),
                        index.entry_point, index.top_layer, p.seed,
                        _u128(st["state"]["state"]), _u128(st["state"]["inc"]),
                        st["has_uint32"], st["uinteger"], index._tag)]
    for node, iid in enumerate(index._image_ids):
        level = int(index._levels[node])
        parts.append(struct.pack("<qI", int(iid), level + 1))
        parts.append(index._data[node].astype("<f8").tobytes())
        for layer in range(level + 1):
            row = index._neighbor_nodes(node, layer)
            parts.append(struct.pack("<I", len(row)))
            parts.append(row.astype("<i8").tobytes())
    return b"".join(parts)


def loads(data: bytes) -> HnswIndex:
    try:
        return _loads(memoryview(data))
    except (struct.error, ValueError, IndexError) as exc:
        raise DatasetError(f"corrupt index snapshot: {exc}") from exc


def _loads(buf) -> HnswIndex:
    (magic, version, dim, m, efc, efs, ml, cap, n, ep, top, seed, s, inc, has32, uint,
     tag) = _HEAD.unpack_from(buf)
    if magic != MAGIC or version != VERSION:
        raise ValueError("bad magic or version")
    index = HnswIndex(dim, HnswParams(cap, efc, m, ml, efs, seed))
    index._rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int.from_bytes(s, "little"), "inc": int.from_bytes(inc, "little")},
        "has_uint32": has32, "uinteger": uint}
    off = _HEAD.size
    for node in range(n):
        iid, n_layers = struct.unpack_from("<qI", buf, off)
        off += 12
        vec = np.frombuffer(buf, "<f8", dim, off)
        off += 8 * dim
        index._data[node] = vec
        index._levels[node] = n_layers - 1
        index._image_ids.append(iid)
        index._node_of[iid] = node
        index._ensure_layers(n_layers - 1)
        for layer in range(n_layers):
            (c,) = struct.unpack_from("<I", buf, off)
            off += 4
            if c > index.width(layer):
                raise ValueError(f"node {node} exceeds the degree bound on layer {layer}")
            row = np.frombuffer(buf, "<i8", c, off)
            off += 8 * c
            index._links[layer][node, :c] = row
            index._counts[layer][node] = c
    if off != len(buf):
        raise ValueError(f"{len(buf) - off} trailing bytes")
    index.entry_point, index.top_layer, index._tag = ep, top, tag
    return index


def save(index: HnswIndex, path):
    Path(path).write_bytes(dumps(index))


def load(path) -> HnswIndex:
    return loads(Path(path).read_bytes())
