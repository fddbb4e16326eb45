import numpy as np
import pytest

from otfsfm.errors import DatasetError
from otfsfm.io import snapshot
from otfsfm.retrieval import HnswIndex, HnswParams


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_snapshot_round_trip_and_continuation(tmp_path):
    data = unit_rows(np.random.default_rng(0), 300, 16)
    a = HnswIndex(16, HnswParams(max_elements=300, seed=3))
    for i in range(200):
        a.insert(data[i], i)
    snapshot.save(a, tmp_path / "idx.bin")
    b = snapshot.load(tmp_path / "idx.bin")
    assert snapshot.dumps(b) == snapshot.dumps(a)
    assert a.adjacency() == b.adjacency()
    for i in range(200, 300):
        assert a.insert(data[i], i) == b.insert(data[i], i)
    assert a.adjacency() == b.adjacency()
    q = data[5]
    assert a.query_top_n(q, 10) == b.query_top_n(q, 10)


def test_empty_snapshot():
    a = HnswIndex(8, HnswParams(max_elements=10))
    b = snapshot.loads(snapshot.dumps(a))
    assert len(b) == 0 and b.entry_point == -1


def test_corrupt_snapshot():
    a = HnswIndex(8, HnswParams(max_elements=10))
    a.insert(np.ones(8), 1)
    data = snapshot.dumps(a)
    with pytest.raises(DatasetError):
        snapshot.loads(data[:-4])
    with pytest.raises(DatasetError):
        snapshot.loads(b"XXXX" + data[4:])
    with pytest.raises(DatasetError):
        snapshot.loads(data + b"\0")
