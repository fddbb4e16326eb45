import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otfsfm.errors import InvalidArgumentError, SceneSpecError
from otfsfm.geometry import project_batch
from otfsfm.packet import SENTINEL_ID
from otfsfm.synthstream import (AgentSpec, OverlapOracle, SceneSpec, descriptor_set, generate,
                                make_descriptor, render_packets, two_agent_spec)


@pytest.fixture(scope="module")
def scene():
    return generate(SceneSpec(agents=[AgentSpec(24)], seed=3))


def test_generation_is_deterministic(scene):
    again = generate(SceneSpec(agents=[AgentSpec(24)], seed=3))
    assert np.array_equal(scene.points, again.points)
    for a, b in zip(render_packets(scene), render_packets(again)):
        assert a.identical(b)


def test_every_frame_sees_enough_points(scene):
    for f in scene.frames:
        assert len(f.visible) >= scene.spec.min_visible
        assert np.all(np.diff(f.visible) > 0)


def test_packets_follow_noise_model(scene):
    rng_sigma = []
    outliers = 0
    total = 0
    for p in render_packets(scene):
        f = scene.frame(p.frame_id)
        p.validate(scene.spec.descriptor_dim)
        good = p.oracle_ids != SENTINEL_ID
        uv, _ = project_batch(f.intrinsics.params, f.pose.R, f.pose.t,
                              scene.points[p.oracle_ids[good]])
        rng_sigma.append(p.keypoints[good] - uv)
        outliers += (~good).sum()
        total += len(good)
        assert set(p.oracle_ids[good]) <= set(f.visible.tolist())
    d = np.vstack(rng_sigma)
    assert abs(d.std() - 0.5) < 0.03
    assert abs(outliers / total - 0.1) < 0.02


def test_timestamp_order_and_unique_ids():
    scene = generate(two_agent_spec(20, 30))
    ts = [f.timestamp for f in scene.frames]
    assert ts == sorted(ts)
    assert [f.image_id for f in scene.frames] == list(range(50))
    assert {f.agent_id for f in scene.frames} == {0, 1}


def test_two_agent_overlap_only_late():
    scene = generate(two_agent_spec())
    oracle = OverlapOracle.from_scene(scene)
    a = [f.image_id for f in scene.frames_of(0)]
    b = [f.image_id for f in scene.frames_of(1)]
    early_b = b[: len(b) // 2]
    assert not any(oracle.true_overlap(i, j) for i in a for j in early_b)
    # Frames that have arrived by then share nothing at all.
    assert max(oracle.n_shared(i, j) for j in early_b for i in a if i < j) == 0
    late_b = b[-10:]
    assert sum(oracle.true_overlap(i, j) for i in a for j in late_b) >= 4


def test_descriptor_similarity_tracks_overlap(scene):
    oracle = OverlapOracle.from_scene(scene)
    desc = {p.frame_id: p.descriptor.astype(float) for p in render_packets(scene)}
    near = np.linalg.norm(desc[0] - desc[1])
    far = np.linalg.norm(desc[0] - desc[12])
    assert oracle.jaccard(0, 1) > oracle.jaccard(0, 12)
    assert near < far


def test_descriptor_set_is_unit_norm():
    d = descriptor_set(50, 64, seed=1)
    assert d.shape == (50, 64)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)


@given(st.lists(st.integers(0, 5000), min_size=1, max_size=50))
@settings(max_examples=30, deadline=None)
def test_make_descriptor_depends_only_on_the_set(ids):
    a = make_descriptor(ids, 32, seed=0)
    b = make_descriptor(list(reversed(ids)) + ids[:1], 32, seed=0)
    assert np.array_equal(a.values, b.values)


def test_invalid_specs():
    with pytest.raises(SceneSpecError):
        generate(SceneSpec(agents=[]))
    with pytest.raises(SceneSpecError):
        generate(SceneSpec(agents=[AgentSpec(3, radius=60.0)]))
    with pytest.raises(SceneSpecError):
        generate(SceneSpec(outlier_fraction=1.5))
    with pytest.raises(InvalidArgumentError):
        make_descriptor([], 8)
