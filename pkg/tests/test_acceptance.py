"""The ten acceptance criteria, each with its tolerance and runtime limit.

Every test records a one-line verdict that the terminal summary prints.
"""
import time
from contextlib import contextmanager

import numpy as np
import pytest
from _builders import INTR, random_packet, random_problem, random_reconstruction, \
    random_similarity, truth_submap
from conftest import ACCEPTANCE
from test_bundle import fd_jacobians
from test_submap import duplicated, shared_entry, transform_errors

from otfsfm.association import FIXED, TreeEntry, build_tree, compute_weights, entry_weight
from otfsfm.bundle import (LmConfig, dense_normal_equations, evaluate, lm_step_schur,
                           solve_weighted_local)
from otfsfm.engine import Engine, EngineConfig
from otfsfm.geometry import estimate_similarity_umeyama
from otfsfm.io import export, wire
from otfsfm.io.metrics import evaluate as evaluate_metrics
from otfsfm.retrieval import HnswIndex, HnswParams
from otfsfm.rotation import rotation_angle
from otfsfm.submap import estimate_merge_transform
from otfsfm.synthstream import (AgentSpec, OverlapOracle, SceneSpec, descriptor_set, generate,
                                render_packets, two_agent_spec)

SCENE_DIAMETER = 100.0
# ef_search is not one of the fixed index parameters; 64 is the library default.
EF_SEARCH = 64


@contextmanager
def criterion(number, limit_s, already_s=0.0):
    """Record PASS/FAIL for a criterion, including its runtime limit.

    `already_s` is time spent for this criterion before the block, such as
    engine runs done by a shared fixture.
    """
    state = {"detail": ""}
    t0 = time.perf_counter() - already_s
    try:
        yield state
    except BaseException as exc:
        ACCEPTANCE[number] = (False, f"{state['detail']} ({type(exc).__name__}: {exc})".strip())
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed <= limit_s
    ACCEPTANCE[number] = (ok, f"{state['detail']} [{elapsed:.1f}s / {limit_s:.0f}s]")
    assert ok, f"criterion {number} took {elapsed:.1f}s, limit {limit_s}s"


def test_c01_hnsw_recall_matches_exhaustive():
    with criterion(1, 30) as c:
        data = descriptor_set(5100, 256, seed=1)
        base, queries = data[:5000], data[5000:]
        index = HnswIndex(256, HnswParams(max_elements=5000, ef_construction=200,
                                          max_connections=16, ef_search=EF_SEARCH, seed=1))
        for i, v in enumerate(base):
            index.insert(v, i)
        recall = []
        for q in queries:
            got = {i for i, _ in index.query_top_n(q, 30)}
            truth = {i for i, _ in index.exhaustive(q, 30)}
            recall.append(len(got & truth) / 30)
        r = float(np.mean(recall))
        c["detail"] = f"mean top-30 recall {r:.4f} (need >= 0.95)"
        assert r >= 0.95


def _op_times(index, data, start, n_ops):
    """Mean seconds per (insert + query) and per exhaustive query at the current size."""
    t_ins = t_q = t_ex = 0.0
    for k in range(n_ops):
        v = data[start + k]
        t0 = time.perf_counter()
        index.query_top_n(v, 30)
        t1 = time.perf_counter()
        index.exhaustive(v, 30)
        t2 = time.perf_counter()
        index.insert(v, start + k)
        t3 = time.perf_counter()
        t_q, t_ex, t_ins = t_q + t1 - t0, t_ex + t2 - t1, t_ins + t3 - t2
    return (t_ins + t_q) / n_ops, t_ex / n_ops


def test_c02_hnsw_latency_stays_flat():
    with criterion(2, 60) as c:
        n_ops = 200
        data = descriptor_set(8000 + n_ops, 256, seed=2)
        index = HnswIndex(256, HnswParams(max_elements=8000 + n_ops, ef_construction=200,
                                          max_connections=16, ef_search=EF_SEARCH, seed=2))
        index.insert(data[0], 0)
        index.query_top_n(data[0], 30)  # compile kernels outside the timed region
        for i in range(1, 1000):
            index.insert(data[i], i)
        # The timed ops at N=1000 also insert, so the build resumes at 1000 + n_ops.
        h1, e1 = _op_times(index, data, 1000, n_ops)
        for i in range(1000 + n_ops, 8000):
            index.insert(data[i], i)
        h8, e8 = _op_times(index, data, 8000, n_ops)
        c["detail"] = (f"hnsw insert+query x{h8 / h1:.2f} (need <= 3), "
                       f"exhaustive x{e8 / e1:.2f} (need >= 5)")
        assert h8 <= 3 * h1 and e8 >= 5 * e1


def test_c03_jacobians_match_central_differences():
    with criterion(3, 5) as c:
        rng = np.random.default_rng(3)
        worst, n = 0.0, 0
        while n < 100:
            prob = random_problem(rng, 3, 10, perturb=1.0)
            ev = evaluate(prob)
            for k in rng.choice(prob.n_residuals, 10, replace=False):
                cam = prob.cameras[prob.cam_index[k]]
                X = prob.points[prob.point_index[k]].xyz
                Jc, Jp = fd_jacobians(INTR.params, cam.pose.R, cam.pose.t, X)
                A = np.hstack([ev.J_c[k], ev.J_p[k]])
                B = np.hstack([Jc, Jp])
                worst = max(worst, np.max(np.abs(A - B)) / np.max(np.abs(B)))
                n += 1
        c["detail"] = f"max relative error {worst:.2e} over {n} blocks (need <= 1e-4)"
        assert worst <= 1e-4


def test_c04_schur_step_equals_dense_step():
    with criterion(4, 10) as c:
        rng = np.random.default_rng(4)
        worst = 0.0
        for k in range(50):
            n_cams, n_pts = int(rng.integers(2, 5)), int(rng.integers(5, 16))
            weights = [FIXED] + list(rng.uniform(0.05, 1.0, n_cams - 1))
            prob = random_problem(rng, n_cams, n_pts, sigma=1.0, perturb=1.0, weights=weights)
            lam = 10.0 ** rng.uniform(-4, 1)
            weighted = bool(k % 2)
            A, b = dense_normal_equations(prob, lam, weighted)
            x = np.linalg.solve(A, b)
            s = lm_step_schur(prob, lam, weighted)
            s = np.concatenate([s.delta_c.ravel(), s.delta_p.ravel()])
            worst = max(worst, np.linalg.norm(s - x) / np.linalg.norm(x))
        c["detail"] = f"max relative step difference {worst:.2e} (need <= 1e-8)"
        assert worst <= 1e-8


def test_c05_weight_limits():
    with criterion(5, 5) as c:
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(20):
            prob = random_problem(rng, 4, 12, sigma=0.5, perturb=1.0)
            a = lm_step_schur(prob, 1e-3, weighted=True)
            b = lm_step_schur(prob, 1e-3, weighted=False)
            a = np.concatenate([a.delta_c.ravel(), a.delta_p.ravel()])
            b = np.concatenate([b.delta_c.ravel(), b.delta_p.ravel()])
            worst = max(worst, np.max(np.abs(a - b)))
        assert worst <= 1e-10

        prob = random_problem(rng, 5, 20, sigma=0.5, perturb=1.0,
                              weights=[FIXED, 1.0, 0.25, 0.0625, FIXED])
        out, _ = solve_weighted_local(prob, LmConfig(max_iterations=20))
        for j in (0, 4):
            assert out.cameras[j].pose.rotation.tobytes() == prob.cameras[j].pose.rotation.tobytes()
            assert out.cameras[j].pose.translation.tobytes() == \
                prob.cameras[j].pose.translation.tobytes()
        assert out.cameras[1].pose.translation.tobytes() != prob.cameras[1].pose.translation.tobytes()

        def retrieve(i):
            return {0: [(1, 0.3), (2, 0.8)], 1: [(3, 0.5)], 3: [(4, 0.5)]}.get(i, [])

        w = {e.image_id: e.weight for e in compute_weights(build_tree(0, retrieve, depth=4))}
        assert w[0] == 1.0
        assert w[1] == 1.0 and w[2] == 1.0
        assert entry_weight(TreeEntry(7, 3, 6, (1.0, 1.0, 0.5)), depth=4) == 0.0625
        c["detail"] = (f"unit-weight step diff {worst:.1e} (need <= 1e-10); FIXED bit-exact; "
                       "weights root=1, layer1=1, 4^-2=0.0625")


def test_c06_similarity_recovery():
    with criterion(6, 10) as c:
        rng = np.random.default_rng(6)
        worst_s = worst_r = 0.0
        for _ in range(100):
            T = random_similarity(rng)
            src = rng.normal(0, 10, (int(rng.integers(3, 50)), 3))
            est = estimate_similarity_umeyama(src, T.apply_points(src))
            worst_s = max(worst_s, abs(est.scale / T.scale - 1))
            worst_r = max(worst_r, rotation_angle(est.R @ T.R.T))
        assert worst_s <= 1e-9 and worst_r <= 1e-7

        sm, _ = truth_submap(10, 50, sigma=0.5)
        T = random_similarity(rng)
        src = duplicated(sm, T.inverse())
        shared = sm.image_ids[2:8]
        pids = sorted({p for i in shared for p in src.image_points[i].values()})
        for p in rng.choice(pids, int(0.3 * len(pids)), replace=False):
            src.tracks[p].xyz = src.tracks[p].xyz + rng.normal(0, 3.0, 3)
        res = estimate_merge_transform(src, sm, shared_entry(shared))
        rot, scale = transform_errors(res.transform, T)
        c["detail"] = (f"noiseless scale {worst_s:.1e}, rotation {worst_r:.1e} rad; "
                       f"30% corrupted: {rot:.3f} deg, {100 * scale:.3f}% scale")
        assert rot <= 0.5 and scale <= 0.01


def _ground_truth_transform(event, scene):
    """True sim(3) taking the source gauge into the reference gauge."""
    def to_truth(centers):
        ids = list(centers)
        return estimate_similarity_umeyama(np.array([centers[i] for i in ids]),
                                           np.array([scene.frame(i).pose.center for i in ids]))

    return to_truth(event.reference_centers).inverse().compose(to_truth(event.source_centers))


@pytest.mark.slow
def test_c07_two_agent_merge():
    with criterion(7, 180) as c:
        scene = generate(two_agent_spec())
        oracle = OverlapOracle.from_scene(scene)
        agent0 = [f.image_id for f in scene.frames_of(0)]
        bridging = [f.image_id for f in scene.frames_of(1)
                    if any(oracle.true_overlap(f.image_id, a) for a in agent0)]
        assert len(bridging) >= 4
        engine = Engine(EngineConfig())
        _, report = engine.run(render_packets(scene))
        peak = max(report.submap_timeline)
        errs = []
        for e in engine.registry.events:
            G = _ground_truth_transform(e, scene)
            errs.append(transform_errors(e.transform, G))
        rot = max(r for r, _ in errs) if errs else float("nan")
        scale = max(s for _, s in errs) if errs else float("nan")
        c["detail"] = (f"peak {peak} submaps, final {report.n_submaps}, {len(engine.registry.events)} merge(s), "
                       f"transform error {rot:.3f} deg / {100 * scale:.3f}% scale")
        assert peak >= 2 and report.n_submaps == 1
        assert errs and rot <= 0.5 and scale <= 0.01


@pytest.fixture(scope="module")
def single_agent_runs():
    """Two identically seeded 150-frame runs; the first also serves criterion 8."""
    scene = generate(SceneSpec(agents=[AgentSpec(150)], sigma_px=0.5, outlier_fraction=0.1))
    runs = []
    for _ in range(2):
        t0 = time.perf_counter()
        engine = Engine(EngineConfig(seed=0))
        rec, report = engine.run(render_packets(scene))
        runs.append((engine, rec, report, time.perf_counter() - t0))
    return scene, runs


@pytest.mark.slow
def test_c08_single_agent_replay(single_agent_runs):
    scene, runs = single_agent_runs
    engine, rec, report, elapsed = runs[0]
    with criterion(8, 300, elapsed) as c:
        m = evaluate_metrics(rec, {f.image_id: f.pose for f in scene.frames},
                             engine.keypoints, per_submap=True)
        c["detail"] = (f"registered {100 * report.registered_fraction:.1f}%, "
                       f"MRE {m.mre:.3f} px, ATE {m.ate:.4f} "
                       f"({100 * m.ate / SCENE_DIAMETER:.3f}% of diameter), "
                       f"MRD {m.mrd_deg:.3f} deg, {report.mean_frame_time:.2f} s/frame")
        assert report.registered_fraction >= 0.95
        assert m.mre <= 1.5
        assert m.ate <= 0.01 * SCENE_DIAMETER
        assert m.mrd_deg <= 0.5
        # Well under a 2-3 s capture cadence.
        assert report.mean_frame_time <= 1.0


@pytest.mark.slow
def test_c09_determinism(single_agent_runs):
    _, runs = single_agent_runs
    with criterion(9, 600, runs[0][3] + runs[1][3]) as c:
        a, b = (export.dumps(r[1]) for r in runs)
        c["detail"] = f"exports identical: {a == b} ({len(a)} bytes)"
        assert a == b


def test_c10_round_trips():
    with criterion(10, 10) as c:
        rng = np.random.default_rng(10)
        for k in range(1000):
            p = random_packet(rng, frame_id=k)
            data = wire.encode_frame(p)
            mtype, back, used = wire.decode_message(data)
            assert mtype == wire.MSG_FRAME and used == len(data)
            assert back.identical(p) and wire.encode_frame(back) == data
        worst = 0.0
        for _ in range(10):
            rec, kps = random_reconstruction(rng)
            text = export.dumps(rec)
            back = export.loads(text)
            assert export.dumps(back) == text
            r0, r1 = export.residuals(rec, kps), export.residuals(back, kps)
            # Points behind a camera give inf residuals; those must match by position.
            fin = np.isfinite(r0)
            assert np.array_equal(fin, np.isfinite(r1))
            worst = max(worst, float(np.max(np.abs(r0[fin] - r1[fin]), initial=0.0)))
        c["detail"] = f"1000 packets and 10 exports bitwise; residual drift {worst:.1e}"
        assert worst <= 1e-9
