import copy

import numpy as np
import pytest
from _builders import INTR, random_similarity, truth_submap

from otfsfm.association import FIXED
from otfsfm.errors import InsufficientDataError, InvalidArgumentError
from otfsfm.geometry import Pose, SimilarityTransform, project_batch
from otfsfm.rotation import rotation_angle
from otfsfm.submap import (LedgerEntry, MergeConfig, MergeFailed, SharedImageLedger,
                           SharedRecord, SharedView, Submap, SubmapRegistry, _merge,
                           build_problem, estimate_merge_transform, filter_observations,
                           global_adjust, local_adjust, record_shared_image, seam_weights)
from otfsfm.synthstream import AgentSpec, SceneSpec, generate


def duplicated(sm, T, submap_id=1):
    """Copy of `sm` expressed in another gauge: coordinates mapped through T."""
    dup = copy.deepcopy(sm)
    dup.submap_id = submap_id
    dup.transform(T)
    return dup


def shared_entry(ids):
    entry = LedgerEntry((0, 1))
    for i in ids:
        entry.records[i] = SharedRecord(i)
    return entry


def transform_errors(est, T):
    return np.degrees(rotation_angle(est.R @ T.R.T)), abs(est.scale / T.scale - 1)


def test_duplicated_submap_transform_recovered_exactly():
    sm, _ = truth_submap(10, 50)
    rng = np.random.default_rng(0)
    T = random_similarity(rng)
    src = duplicated(sm, T.inverse())
    est = estimate_merge_transform(src, sm, shared_entry(sm.image_ids[:5]))
    rot, scale = transform_errors(est.transform, T)
    assert rot < 1e-6 and scale < 1e-9
    assert len(est.inlier_images) == 5


def test_corrupted_shared_points_still_recover_transform():
    sm, _ = truth_submap(10, 50, sigma=0.5)
    rng = np.random.default_rng(1)
    T = random_similarity(rng)
    src = duplicated(sm, T.inverse())
    shared = sm.image_ids[2:8]
    pids = sorted({p for i in shared for p in src.image_points[i].values()})
    bad = rng.choice(pids, int(0.3 * len(pids)), replace=False)
    for p in bad:
        src.tracks[p].xyz = src.tracks[p].xyz + rng.normal(0, 3.0, 3)
    est = estimate_merge_transform(src, sm, shared_entry(shared))
    rot, scale = transform_errors(est.transform, T)
    assert rot < 0.5 and scale < 0.01


def test_collinear_camera_centers_fail():
    rng = np.random.default_rng(2)
    X = rng.uniform([-3, -2, 8], [3, 2, 12], (80, 3))
    sm = Submap(0)
    for k, x in enumerate((-1.0, 0.0, 1.0, 2.0)):
        pose = Pose(np.array([1.0, 0, 0, 0]), np.array([-x, 0.0, 0.0]))
        uv, _ = project_batch(INTR.params, pose.R, pose.t, X)
        sm.add_image(k, pose, INTR, 0, uv)
    for j in range(len(X)):
        sm.add_track(j, X[j], {k: j for k in range(4)})
    src = duplicated(sm, random_similarity(rng))
    with pytest.raises(MergeFailed):
        estimate_merge_transform(src, sm, shared_entry([0, 1, 2, 3]))


def test_too_few_shared_images():
    sm, _ = truth_submap(6, 30)
    with pytest.raises(InsufficientDataError):
        estimate_merge_transform(duplicated(sm, SimilarityTransform.identity()), sm,
                                 shared_entry([0, 1]))


def test_badly_registered_shared_image_is_an_outlier():
    sm, _ = truth_submap(10, 50)
    T = random_similarity(np.random.default_rng(3))
    src = duplicated(sm, T.inverse())
    bad = sm.image_ids[2]
    src.poses[bad] = src.poses[bad].retract([0.3, -0.3, 0.1, 0, 0, 0])
    est = estimate_merge_transform(src, sm, shared_entry(sm.image_ids[:6]))
    assert bad not in est.inlier_images
    assert len(est.inlier_images) == 5
    rot, scale = transform_errors(est.transform, T)
    assert rot < 1e-6 and scale < 1e-9


def test_ledger_set_semantics_and_trigger():
    ledger = SharedImageLedger(3)
    assert not ledger.record(10, 1, 0)
    assert not ledger.record(10, 0, 1)  # same image, same unordered pair
    assert ledger.entry(0, 1).n_shared == 1
    assert not ledger.record(11, 0, 1)
    ledger, flag = record_shared_image(ledger, 12, 0, 1)
    assert flag
    assert ledger.triggered() == [(0, 1)]
    ledger.entry(0, 1).dirty = False
    assert ledger.triggered() == []
    ledger.record(12, 0, 1)
    assert ledger.triggered() == []  # a repeat is not new evidence
    ledger.record(13, 0, 1)
    assert ledger.triggered() == [(0, 1)]
    assert ledger.pairs_of(1) == [(0, 1)]
    with pytest.raises(InvalidArgumentError):
        ledger.record(1, 2, 2)


def test_ledger_keeps_first_view():
    ledger = SharedImageLedger()
    v1 = SharedView(Pose.identity(), {}, np.zeros((0, 2)), INTR)
    v2 = SharedView(Pose.identity(), {1: 2}, np.zeros((0, 2)), INTR)
    ledger.record(5, 0, 1, v1, 1)
    ledger.record(5, 0, 1, v2, 1)
    assert ledger.entry(0, 1).records[5].views[1] is v1


def split_scene(T, n=14, overlap=(4, 8)):
    """Submap 0 holds frames < overlap[1]; submap 1 the rest in gauge T.

    Frames in the overlap range are members of submap 0 and carry a view
    into submap 1. Point ids in submap 1 are offset by 100000.
    """
    scene = generate(SceneSpec(agents=[AgentSpec(n, 0.0, 70.0)], seed=4))
    frames = scene.frames
    kps = {}
    for f in frames:
        uv, _ = project_batch(f.intrinsics.params, f.pose.R, f.pose.t, scene.points[f.visible])
        kps[f.image_id] = uv

    def build(sid, members, gauge, offset):
        sm = Submap(sid)
        for i in members:
            sm.add_image(i, gauge.apply_pose(frames[i].pose), INTR, 0, kps[i])
        obs = {}
        for i in members:
            for kp, p in enumerate(frames[i].visible):
                obs.setdefault(int(p), {})[i] = kp
        for p, o in sorted(obs.items()):
            if len(o) >= 2:
                sm.add_track(p + offset, gauge.apply_points(scene.points[p]), o)
        return sm

    a = build(0, range(overlap[1]), SimilarityTransform.identity(), 0)
    b = build(1, range(overlap[1], n), T, 100000)
    ledger_views = {}
    for i in range(*overlap):
        k2p = {kp: int(p) + 100000 for kp, p in enumerate(frames[i].visible)
               if int(p) + 100000 in b.tracks}
        ledger_views[i] = SharedView(T.apply_pose(frames[i].pose), k2p, kps[i], INTR)
    return a, b, ledger_views


def test_registry_fuses_on_third_shared_image():
    T = random_similarity(np.random.default_rng(5))
    a, b, views = split_scene(T)
    reg = SubmapRegistry(MergeConfig(), None)
    reg.submaps = {0: a, 1: b}
    reg._next_submap = 2
    n_before = a.n_images + b.n_images
    pts_before = len(a.tracks) + len(b.tracks)
    ids = sorted(views)
    assert not reg.ledger.record(ids[0], 0, 1, views[ids[0]], 1)
    assert reg.fuse_all() == 0
    assert not reg.ledger.record(ids[1], 0, 1, views[ids[1]], 1)
    assert reg.ledger.record(ids[2], 0, 1, views[ids[2]], 1)
    assert reg.fuse_all() == 1
    assert len(reg) == 1
    merged = next(iter(reg.submaps.values()))
    merged.check_invariants()
    assert merged.n_images == n_before
    assert len(merged.tracks) < pts_before  # duplicated points were unified
    ev = reg.events[0]
    assert ev.direction == "smaller_into_larger"
    assert (ev.source, ev.reference) == (1, 0)
    # Source (gauge T) maps into the reference (identity gauge) through T^-1.
    rot, scale = transform_errors(ev.transform, T.inverse())
    assert rot < 1e-4 and scale < 1e-6
    assert merged.mean_error() < 1e-3


def test_merge_unifies_only_doubly_linked_points():
    T = random_similarity(np.random.default_rng(6))
    a, b, views = split_scene(T)
    entry = LedgerEntry((0, 1))
    ids = sorted(views)
    entry.records[ids[0]] = SharedRecord(ids[0], {1: views[ids[0]]})
    est = estimate_merge_transform(b, a, _full_entry(views))
    merged, unified = _merge(b, a, est.transform, entry, refine=False)
    # With one shared image every link has count 1: nothing may be unified.
    assert unified == {}
    merged.check_invariants()


def _full_entry(views):
    entry = LedgerEntry((0, 1))
    for i, v in views.items():
        entry.records[i] = SharedRecord(i, {1: v})
    return entry


def test_local_adjust_keeps_fixed_and_reduces_error():
    sm, _ = truth_submap(8, 40, sigma=0.5)
    rng = np.random.default_rng(7)
    truth = dict(sm.poses)
    for i in sm.image_ids[4:]:
        sm.poses[i] = sm.poses[i].retract(rng.normal(0, 0.002, 6))
    before = sm.mean_error()
    weights = {i: 1.0 for i in sm.image_ids[4:]}
    weights[sm.image_ids[0]] = FIXED
    rep = local_adjust(sm, weights)
    assert rep is not None
    assert sm.mean_error() < before
    for i in sm.image_ids[:4]:
        assert sm.poses[i] is truth[i]


def test_build_problem_adds_observers_as_fixed():
    sm, _ = truth_submap(6, 30)
    prob, images, pids = build_problem(sm, {sm.image_ids[-1]: 1.0})
    fixed = [c.image_id for c in prob.cameras if c.weight is FIXED]
    assert set(images) == set(fixed) | {sm.image_ids[-1]}
    assert len(fixed) >= 1
    prob.validate()


def test_filter_and_global_adjust():
    sm, _ = truth_submap(6, 30, sigma=0.5)
    img = sm.image_ids[2]
    kp, pid = next(iter(sorted(sm.image_points[img].items())))
    sm.keypoints[img][kp] += 50.0
    assert filter_observations(sm, [img], 4.0) >= 1
    assert img not in sm.tracks.get(pid, sm.tracks[next(iter(sm.tracks))]).observations \
        or pid not in sm.tracks
    sm.check_invariants()
    anchor = sm.poses[sm.anchor]
    rep = global_adjust(sm)
    assert sm.poses[sm.anchor] is anchor
    assert rep.rms() < 0.8


def test_seam_weights_rings():
    sm, _ = truth_submap(24, 240)
    w = seam_weights(sm, [sm.image_ids[0]], depth=2)
    assert w[sm.image_ids[0]] == 1.0
    fixed = [i for i, v in w.items() if v is FIXED]
    assert fixed and len(w) < sm.n_images
    free = [i for i, v in w.items() if v is not FIXED]
    # Every FIXED image is covisible with some free one.
    assert all(any(sm.covisibility(f).get(i, 0) >= 15 for i in free) for f in fixed)


def test_submap_mutation_rules():
    sm = Submap(0)
    sm.add_image(0, Pose.identity(), INTR, 0, np.zeros((3, 2)))
    sm.add_image(1, Pose.identity(), INTR, 0, np.zeros((3, 2)))
    with pytest.raises(InvalidArgumentError):
        sm.add_image(0, Pose.identity(), INTR, 0, np.zeros((3, 2)))
    with pytest.raises(InvalidArgumentError):
        sm.add_track(0, np.zeros(3), {0: 0})
    sm.add_track(0, np.zeros(3), {0: 0, 1: 0})
    with pytest.raises(InvalidArgumentError):
        sm.add_track(1, np.zeros(3), {0: 0, 1: 1})
    assert not sm.add_observation(0, 0, 2)
    sm.remove_observation(0, 1)
    assert 0 not in sm.tracks and sm.image_points[0] == {}
    sm.check_invariants()
