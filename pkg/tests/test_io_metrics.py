import numpy as np
import pytest
from _builders import random_similarity

from otfsfm.engine import ImageRecord, PointRecord, Reconstruction
from otfsfm.errors import AlignmentError
from otfsfm.geometry import CameraIntrinsics
from otfsfm.io.metrics import evaluate, retrieval_precision_recall
from otfsfm.synthstream import AgentSpec, SceneSpec, generate

INTR = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


@pytest.fixture(scope="module")
def scene():
    return generate(SceneSpec(agents=[AgentSpec(12, 0, 90)]))


def as_reconstruction(scene, T=None, ids=None):
    rec = Reconstruction(cameras={0: INTR})
    for f in scene.frames:
        if ids is not None and f.image_id not in ids:
            continue
        pose = f.pose if T is None else T.apply_pose(f.pose)
        rec.images[f.image_id] = ImageRecord(0, pose, 0)
    rec.points[0] = PointRecord(np.zeros(3), {0: 0, 1: 0})
    return rec


def truth(scene):
    return {f.image_id: f.pose for f in scene.frames}


def test_identity_gives_zero_errors(scene):
    m = evaluate(as_reconstruction(scene), truth(scene))
    assert m.mrd_deg == pytest.approx(0.0, abs=1e-6)
    assert m.ate == pytest.approx(0.0, abs=1e-9)
    assert m.n_aligned == 12 and m.mtl == 2.0


@pytest.mark.parametrize("seed", range(3))
def test_gauge_is_absorbed(scene, seed):
    T = random_similarity(np.random.default_rng(seed))
    m = evaluate(as_reconstruction(scene, T), truth(scene))
    assert m.mrd_deg == pytest.approx(0.0, abs=1e-6)
    assert m.ate == pytest.approx(0.0, abs=1e-8)
    assert abs(m.alignments[0].scale * T.scale - 1) < 1e-9


def test_perturbed_pose_is_measured(scene):
    rec = as_reconstruction(scene)
    rec.images[5].pose = rec.images[5].pose.retract([0, 0, np.radians(2.0), 0, 0, 0])
    m = evaluate(rec, truth(scene))
    assert m.rotation_errors_deg[5] == pytest.approx(2.0, abs=0.1)


def test_too_few_common_images(scene):
    with pytest.raises(AlignmentError):
        evaluate(as_reconstruction(scene, ids={0, 1}), truth(scene))


def test_retrieval_precision_recall():
    shared = np.array([[0, 60, 0, 80],
                       [60, 0, 70, 0],
                       [0, 70, 0, 0],
                       [80, 0, 0, 0]])
    cands = {0: [], 1: [0], 2: [1, 0], 3: [2]}
    p, r = retrieval_precision_recall(cands, shared, top_n=2)
    # Precision over images 1, 2, 3: 1, 1/2, 0; recall over images with truth: 1, 1, 0.
    assert p == pytest.approx((1 + 0.5 + 0) / 3)
    assert r == pytest.approx((1 + 1 + 0) / 3)
