import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otfsfm.association import (FIXED, TreeEntry, build_tree, compute_weights, entry_weight,
                                is_fixed)


def graph_retriever(edges):
    def retrieve(i):
        return sorted(edges.get(i, []), key=lambda e: (e[1], e[0]))
    return retrieve


def test_root_and_first_layer_weights_are_one():
    edges = {0: [(1, 0.3), (2, 0.7)], 1: [(3, 0.2)], 2: [(4, 0.9)], 3: [(5, 0.1)]}
    tree = build_tree(0, graph_retriever(edges), depth=4, fanout=8)
    w = {x.image_id: x.weight for x in compute_weights(tree)}
    assert w[0] == 1.0
    assert w[1] == 1.0 and w[2] == 1.0


def test_worked_example_third_layer():
    # Path inverse sum 1/1 + 1/1 + 1/0.5 = 4, layer 3 -> 4 ** -2.
    e = TreeEntry(7, 3, 6, (1.0, 1.0, 0.5))
    assert entry_weight(e, depth=4) == 0.0625


def test_deepest_layer_is_fixed():
    edges = {0: [(1, 0.5)], 1: [(2, 0.5)], 2: [(3, 0.5)]}
    tree = build_tree(0, graph_retriever(edges), depth=3)
    w = {x.image_id: x.weight for x in compute_weights(tree)}
    assert is_fixed(w[3]) and w[3] is FIXED
    assert w[2] == pytest.approx((1 / 0.5 + 1 / 0.5) ** -1)


def test_shallowest_layer_and_cheapest_parent_win():
    # 3 is reachable at layer 2 from both 1 and 2; the cheaper path goes via 2.
    edges = {0: [(1, 0.1), (2, 0.2), (4, 0.3)], 1: [(3, 0.9), (4, 0.1)], 2: [(3, 0.1)]}
    tree = build_tree(0, graph_retriever(edges), depth=3)
    assert tree.layer_of(4) == 1
    e3 = next(e for e in tree.entries() if e.image_id == 3)
    assert e3.layer == 2 and e3.parent == 2
    assert e3.path_distances == (0.2, 0.1)


def test_fanout_limits_expansion():
    edges = {0: [(k, 0.1 * k) for k in range(1, 10)]}
    tree = build_tree(0, graph_retriever(edges), depth=2, fanout=3)
    assert [e.image_id for e in tree.layers[0]] == [1, 2, 3]


def test_zero_distance_is_clamped():
    e = TreeEntry(1, 2, 0, (0.0, 0.5))
    assert np.isfinite(entry_weight(e, depth=4))


@given(st.dictionaries(st.integers(0, 30), st.lists(
    st.tuples(st.integers(0, 30), st.floats(0.01, 2.0)), max_size=6), max_size=30),
    st.integers(1, 5), st.integers(1, 8))
@settings(max_examples=100)
def test_tree_properties(edges, depth, fanout):
    tree = build_tree(0, graph_retriever(edges), depth=depth, fanout=fanout)
    ids = tree.image_ids()
    assert len(ids) == len(set(ids))
    weights = compute_weights(tree)
    for x in weights:
        if x.layer == 0 or x.layer == 1:
            assert x.weight == 1.0 or (x.layer == depth and x.weight is FIXED)
        elif x.layer == depth:
            assert x.weight is FIXED
        else:
            assert 0 < x.weight < np.inf
    for e in tree.entries():
        assert len(e.path_distances) == e.layer
