"""The on-the-fly loop: one frame is fully processed before the next.

For every fly-in frame: retrieve similar predecessors from the HNSW index,
insert the frame, match and verify against the candidates, register into
existing submaps (or pool the frame and try to seed a new submap),
triangulate new tracks, run the weighted local bundle adjustment over the
frame's association tree and fuse submaps that share enough images.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .association import FIXED, build_tree, compute_weights, is_fixed
from .bundle import LmConfig
from .errors import (InsufficientDataError, InvalidArgumentError, RegistrationFailed,
                     TriangulationRejected)
from .geometry import (Pose, max_triangulation_angle, pnp_ransac, triangulate_dlt,
                       triangulate_multiview_ransac, two_view_verify)
from .packet import SENTINEL_ID, FramePacket
from .retrieval import HnswIndex, HnswParams
from .submap import (MergeConfig, SharedView, SubmapRegistry, filter_observations,
                     global_adjust, local_adjust)

log = logging.getLogger(__name__)

__all__ = ["FramePacket", "EngineConfig", "Engine", "OracleMatcher", "DescriptorMatcher",
           "FrameRecord", "FinalReport", "Reconstruction", "ImageRecord", "PointRecord"]


# --------------------------------------------------------------------------
# Matchers


class OracleMatcher:
    """Matches keypoints through the synthetic ground-truth point ids.

    Outlier keypoints (sentinel ids) are paired with each other in order,
    which mimics the wrong matches a descriptor matcher lets through.
    `mismatch_rate` additionally re-pairs a fraction of true matches at random.
    """

    def __init__(self, mismatch_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= mismatch_rate < 1.0:
            raise InvalidArgumentError("mismatch_rate must lie in [0, 1)")
        self.mismatch_rate = mismatch_rate
        self.seed = seed

    def __call__(self, a: FramePacket, b: FramePacket):
        if a.oracle_ids is None or b.oracle_ids is None:
            raise InvalidArgumentError("oracle matcher needs oracle ids on both frames")
        ida, idb = a.oracle_ids, b.oracle_ids
        _, ia, ib = np.intersect1d(ida, idb, assume_unique=False, return_indices=True)
        keep = ida[ia] != SENTINEL_ID
        ia, ib = ia[keep], ib[keep]
        oa = np.nonzero(ida == SENTINEL_ID)[0]
        ob = np.nonzero(idb == SENTINEL_ID)[0]
        k = min(len(oa), len(ob))
        ia = np.concatenate([ia, oa[:k]])
        ib = np.concatenate([ib, ob[:k]])
        if self.mismatch_rate > 0 and len(ia) > 1:
            rng = np.random.default_rng([self.seed, a.frame_id, b.frame_id])
            bad = np.nonzero(rng.random(len(ia)) < self.mismatch_rate)[0]
            ib = ib.copy()
            ib[bad] = ib[rng.permutation(bad)] if len(bad) > 1 else ib[bad]
        order = np.argsort(ia, kind="stable")
        return ia[order], ib[order]


class DescriptorMatcher:
    """Mutual nearest neighbours on keypoint descriptors with a ratio test."""

    def __init__(self, ratio: float = 0.8):
        self.ratio = ratio

    def __call__(self, a: FramePacket, b: FramePacket):
        if a.keypoint_descriptors is None or b.keypoint_descriptors is None:
            raise InvalidArgumentError("descriptor matcher needs keypoint descriptors")
        da = a.keypoint_descriptors.astype(np.float64)
        db = b.keypoint_descriptors.astype(np.float64)
        if len(da) < 2 or len(db) < 2:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        d2 = (np.sum(da**2, 1)[:, None] + np.sum(db**2, 1)[None, :] - 2 * da @ db.T)
        d2 = np.maximum(d2, 0)
        nn = np.argsort(d2, axis=1)[:, :2]
        best = d2[np.arange(len(da)), nn[:, 0]]
        second = d2[np.arange(len(da)), nn[:, 1]]
        back = np.argmin(d2, axis=0)
        ia = np.arange(len(da))
        ok = (back[nn[:, 0]] == ia) & (best < self.ratio**2 * second)
        return ia[ok], nn[ok, 0]


# --------------------------------------------------------------------------
# Configuration and records


@dataclass
class EngineConfig:
    descriptor_dim: int = 256
    top_n: int = 30
    tree_depth: int = 4
    tree_fanout: int = 8
    n_si: int = 3
    min_inliers: int = 50
    epipolar_threshold_px: float = 2.0
    pnp_threshold_px: float = 4.0
    pnp_min_inliers: int = 12
    triangulation_threshold_px: float = 4.0
    min_triangulation_angle_deg: float = 2.0
    init_min_median_angle_deg: float = 2.0
    init_min_tracks: int = 30
    huber_delta: float | None = 2.0
    outlier_threshold_px: float = 4.0
    local_iterations: int = 25
    global_iterations: int = 100
    global_ba: str | int = "final"  # "final" or K for every K registered frames
    hnsw: HnswParams = field(default_factory=HnswParams)
    merge: MergeConfig = field(default_factory=MergeConfig)
    seed: int = 0

    def __post_init__(self):
        if self.top_n < 1 or self.tree_depth < 1 or self.tree_fanout < 1:
            raise InvalidArgumentError("retrieval/tree sizes must be positive")
        if self.global_ba != "final" and not (isinstance(self.global_ba, int)
                                              and self.global_ba > 0):
            raise InvalidArgumentError("global_ba must be 'final' or a positive int")
        if self.merge.n_si != self.n_si:
            self.merge = MergeConfig(self.n_si, self.merge.min_ior, self.merge.max_re,
                                     self.merge.num_trials, self.merge.seed)

    def local_lm(self) -> LmConfig:
        return LmConfig(max_iterations=self.local_iterations)

    def global_lm(self) -> LmConfig:
        return LmConfig(max_iterations=self.global_iterations)


@dataclass
class FrameRecord:
    image_id: int
    agent_id: int
    status: str  # registered | pooled | rejected | seeded
    submap_id: int | None = None
    n_candidates: int = 0
    n_verified: int = 0
    n_pnp_inliers: int = 0
    shared_with: list = field(default_factory=list)
    local_mean_error: float | None = None
    n_submaps: int = 0
    wall_time: float = 0.0
    candidates: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["candidates"] = [int(c) for c in self.candidates]
        return d


@dataclass
class ImageRecord:
    agent_id: int
    pose: Pose
    submap_id: int


@dataclass
class PointRecord:
    xyz: np.ndarray
    observations: dict  # image id -> keypoint index


@dataclass
class Reconstruction:
    cameras: dict = field(default_factory=dict)  # agent id -> CameraIntrinsics
    images: dict = field(default_factory=dict)   # image id -> ImageRecord
    points: dict = field(default_factory=dict)   # point id -> PointRecord

    @property
    def n_submaps(self) -> int:
        return len({r.submap_id for r in self.images.values()})


@dataclass
class FinalReport:
    n_frames: int = 0
    n_registered: int = 0
    n_submaps: int = 0
    submap_sizes: list = field(default_factory=list)
    n_points: int = 0
    mre: float = 0.0        # mean reprojection error before the final global BA
    mfre: float = 0.0       # mean reprojection error after it
    amre: float = 0.0       # average of per-frame local-BA mean errors
    mtl: float = 0.0
    mean_frame_time: float = 0.0
    max_frame_time: float = 0.0
    submap_timeline: list = field(default_factory=list)
    merge_events: list = field(default_factory=list)

    @property
    def registered_fraction(self) -> float:
        return self.n_registered / self.n_frames if self.n_frames else 0.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["registered_fraction"] = self.registered_fraction
        return d


# --------------------------------------------------------------------------
# Engine


class Engine:
    def __init__(self, config: EngineConfig | None = None, matcher=None):
        self.config = config or EngineConfig()
        self.matcher = matcher or OracleMatcher(seed=self.config.seed)
        self.index = HnswIndex(self.config.descriptor_dim, self.config.hnsw)
        self.registry = SubmapRegistry(self.config.merge, self.config.local_lm())
        self.packets: dict = {}
        self.keypoints: dict = {}
        self.pool: list = []
        self.pair_matches: dict = {}  # (a, b) with a < b -> (kp_a, kp_b, TwoViewResult)
        self.neighbors: dict = {}     # image -> set of verified partners
        self.records: list = []
        self._frames_since_global = 0

    # -- helpers ----------------------------------------------------------

    def _seed(self, *parts) -> int:
        return int(np.random.SeedSequence([self.config.seed, *parts]).generate_state(1)[0])

    def _matches(self, a, b):
        """(kp_a, kp_b) verified inlier matches between images a and b, or None."""
        if a < b:
            m = self.pair_matches.get((a, b))
            return None if m is None else (m[0], m[1])
        m = self.pair_matches.get((b, a))
        return None if m is None else (m[1], m[0])

    def submap_of(self, image_id):
        return self.registry.submap_of(image_id)

    @property
    def n_registered(self) -> int:
        return sum(sm.n_images for sm in self.registry.submaps.values())

    # -- pipeline ----------------------------------------------------------

    def process_frame(self, packet: FramePacket) -> FrameRecord:
        t0 = time.perf_counter()
        img = packet.frame_id
        rec = FrameRecord(img, packet.agent_id, "rejected")
        try:
            packet.validate(self.config.descriptor_dim)
            if img in self.packets:
                raise InvalidArgumentError(f"duplicate frame id {img}")
        except InvalidArgumentError as exc:
            rec.message = str(exc)
            rec.wall_time = time.perf_counter() - t0
            self.records.append(rec)
            log.warning("rejected frame %s: %s", img, exc)
            return rec
        self.registry.frame_index = len(self.records)
        self.packets[img] = packet
        self.keypoints[img] = packet.keypoints.astype(np.float64)
        self.neighbors[img] = set()

        desc = packet.global_descriptor()
        cands = self.index.query_top_n(desc, self.config.top_n) if len(self.index) else []
        self.index.insert(desc, img)
        rec.candidates = [c for c, _ in cands]
        rec.n_candidates = len(cands)

        for c, _ in cands:
            if self._verify(img, c):
                rec.n_verified += 1

        res = self._register(img)
        if res is not None:
            sm, n_inl, shared = res
            rec.status, rec.submap_id, rec.n_pnp_inliers = "registered", sm.submap_id, n_inl
            rec.shared_with = shared
            rec.local_mean_error = self._after_registration(img)
            self._retry_pool()
        else:
            self.pool.append(img)
            rec.status = "pooled"
            seeded = self._initialize_from_pool()
            if seeded is not None:
                if img in seeded.poses:
                    rec.status, rec.submap_id = "seeded", seeded.submap_id
                self._retry_pool()

        self.registry.fuse_all()
        self._maybe_global()
        sm = self.submap_of(img)
        if sm is not None:
            rec.submap_id = sm.submap_id
        rec.n_submaps = len(self.registry)
        rec.wall_time = time.perf_counter() - t0
        self.records.append(rec)
        return rec

    def _verify(self, a, b) -> bool:
        pa, pb = self.packets[a], self.packets[b]
        ia, ib = self.matcher(pa, pb)
        if len(ia) <= self.config.min_inliers:
            return False
        try:
            tv = two_view_verify(self.keypoints[a][ia], self.keypoints[b][ib], pa.intrinsics,
                                 pb.intrinsics, self.config.epipolar_threshold_px,
                                 self.config.min_inliers, seed=self._seed(1, a, b))
        except InsufficientDataError:
            return False
        # Degenerate (homography-explained) pairs still carry good matches for
        # registration; they are only barred from seeding a submap.
        if tv.n_inliers <= self.config.min_inliers:
            return False
        inl = tv.inliers
        if a < b:
            self.pair_matches[(a, b)] = (ia[inl], ib[inl], tv)
        else:
            self.pair_matches[(b, a)] = (ib[inl], ia[inl], _swap(tv))
        self.neighbors[a].add(b)
        self.neighbors[b].add(a)
        return True

    def _correspondences(self, img, sm):
        """Voted 2D-3D links {keypoint of img: point id} from verified partners in sm."""
        votes: dict = {}
        for c in sorted(self.neighbors[img]):
            if c not in sm.poses:
                continue
            kp_i, kp_c = self._matches(img, c)
            ip = sm.image_points[c]
            for ki, kc in zip(kp_i.tolist(), kp_c.tolist()):
                pid = ip.get(kc)
                if pid is not None:
                    d = votes.setdefault(ki, {})
                    d[pid] = d.get(pid, 0) + 1
        return {ki: max(sorted(d), key=lambda p: d[p]) for ki, d in sorted(votes.items())}

    def _submap_order(self, img) -> list:
        counts: dict = {}
        for c in self.neighbors[img]:
            sm = self.submap_of(c)
            if sm is not None:
                counts[sm.submap_id] = counts.get(sm.submap_id, 0) + 1
        subs = [self.registry.submaps[s] for s in counts]
        return sorted(subs, key=lambda s: (-counts[s.submap_id], -s.n_images, s.submap_id))

    def _pnp(self, img, sm):
        links = self._correspondences(img, sm)
        if len(links) < max(self.config.pnp_min_inliers, 6):
            return None
        kps = np.array(list(links))
        pids = [links[k] for k in kps.tolist()]
        X = np.array([sm.tracks[p].xyz for p in pids])
        try:
            res = pnp_ransac(self.keypoints[img][kps], X, self.packets[img].intrinsics,
                             self.config.pnp_threshold_px,
                             min_inliers=self.config.pnp_min_inliers,
                             seed=self._seed(2, img, sm.submap_id))
        except (RegistrationFailed, InsufficientDataError):
            return None
        inl = res.inliers
        kp_to_point = {int(k): p for k, p, ok in zip(kps.tolist(), pids, inl) if ok}
        return res.pose, kp_to_point

    def _register(self, img):
        """Register into every reachable submap; the first success owns the image."""
        owner, n_inl, shared = None, 0, []
        packet = self.packets[img]
        for sm in self._submap_order(img):
            out = self._pnp(img, sm)
            if out is None:
                continue
            pose, kp_to_point = out
            if owner is None:
                owner, n_inl = sm, len(kp_to_point)
                sm.add_image(img, pose, packet.intrinsics, packet.agent_id, self.keypoints[img])
                for kp, pid in kp_to_point.items():
                    sm.add_observation(pid, img, kp)
            else:
                view = SharedView(pose, kp_to_point, self.keypoints[img], packet.intrinsics)
                self.registry.ledger.record(img, owner.submap_id, sm.submap_id, view,
                                            sm.submap_id)
                shared.append(sm.submap_id)
        if owner is None:
            return None
        return owner, n_inl, shared

    def _after_registration(self, img):
        sm = self.submap_of(img)
        self._triangulate(img, sm)
        return self._local_ba(img, sm)

    def _triangulate(self, img, sm) -> int:
        """New tracks from unassigned keypoints of img matched into sm images."""
        groups: dict = {}
        for c in sorted(self.neighbors[img]):
            if c not in sm.poses:
                continue
            kp_i, kp_c = self._matches(img, c)
            used_i, used_c = sm.image_points[img], sm.image_points[c]
            for ki, kc in zip(kp_i.tolist(), kp_c.tolist()):
                if ki in used_i:
                    continue
                pid = used_c.get(kc)
                g = groups.setdefault(ki, {"obs": {}, "pids": {}})
                if pid is None:
                    g["obs"][c] = kc
                else:
                    g["pids"][pid] = g["pids"].get(pid, 0) + 1
        added = 0
        claimed: dict = {}
        for ki in sorted(groups):
            g = groups[ki]
            if g["pids"]:
                # Matched to an existing point that PnP did not accept: try
                # extending that track if the reprojection agrees.
                pid = max(sorted(g["pids"]), key=lambda p: g["pids"][p])
                self._extend(sm, img, ki, pid)
                continue
            obs = {img: ki}
            for c, kc in sorted(g["obs"].items()):
                if (c, kc) not in claimed:
                    obs[c] = kc
            if len(obs) < 2:
                continue
            ids = sorted(obs)
            views = [(sm.poses[i], sm.intrinsics[i], self.keypoints[i][obs[i]]) for i in ids]
            try:
                tr = triangulate_multiview_ransac(
                    views, self.config.triangulation_threshold_px,
                    self.config.min_triangulation_angle_deg, seed=self._seed(3, img, ki))
            except (TriangulationRejected, InsufficientDataError):
                continue
            keep = {i: obs[i] for i, ok in zip(ids, tr.inliers) if ok}
            if img not in keep or len(keep) < 2:
                continue
            if any(kp in sm.image_points[i] for i, kp in keep.items()):
                continue
            sm.add_track(self.registry.new_point_id(), tr.xyz, keep)
            for i, kp in keep.items():
                claimed[(i, kp)] = True
            added += 1
        return added

    def _extend(self, sm, img, kp, pid) -> bool:
        tr = sm.tracks.get(pid)
        if tr is None or img in tr.observations or kp in sm.image_points[img]:
            return False
        pose = sm.poses[img]
        Xc = pose.transform(tr.xyz)
        if Xc[2] <= 0:
            return False
        intr = sm.intrinsics[img]
        uv = np.array([intr.fx * Xc[0] / Xc[2] + intr.cx, intr.fy * Xc[1] / Xc[2] + intr.cy])
        if np.linalg.norm(uv - self.keypoints[img][kp]) > self.config.pnp_threshold_px:
            return False
        return sm.add_observation(pid, img, kp)

    def _retrieve_in(self, sm):
        """Association-tree retrieval restricted to registered images of sm."""
        fan = self.config.tree_fanout
        over = min(len(self.index), max(4 * fan, self.config.top_n))

        def retrieve(image_id):
            q = self.index.vector(image_id)
            out = []
            for other, d in self.index.query_top_n(q, over):
                if other != image_id and other in sm.poses:
                    out.append((other, d))
                    if len(out) == fan:
                        break
            return out
        return retrieve

    def _local_ba(self, img, sm):
        tree = build_tree(img, self._retrieve_in(sm), self.config.tree_depth,
                          self.config.tree_fanout)
        weights = {w.image_id: w.weight for w in compute_weights(tree)}
        local_adjust(sm, weights, self.config.local_lm(), self.config.huber_delta)
        free = [i for i, w in weights.items() if not is_fixed(w)]
        filter_observations(sm, free, self.config.outlier_threshold_px)
        err = sm.reprojection_errors(free)
        return float(np.mean(err)) if len(err) else None

    def _retry_pool(self):
        """Register pooled frames that now have verified partners in a submap."""
        progress = True
        while progress and self.pool:
            progress = False
            for p in list(self.pool):
                if not any(self.submap_of(c) is not None for c in self.neighbors[p]):
                    continue
                res = self._register(p)
                if res is None:
                    continue
                self.pool.remove(p)
                self._after_registration(p)
                progress = True

    # -- seeding ------------------------------------------------------------

    def initialize_submap(self):
        """Seed a submap from the best verified pair in the pool, or return None."""
        return self._initialize_from_pool()

    def _initialize_from_pool(self):
        pooled = set(self.pool)
        cands = []
        for (a, b), (ka, kb, tv) in self.pair_matches.items():
            if a in pooled and b in pooled and tv.accepted:
                cands.append((-tv.n_inliers, a, b))
        for _, a, b in sorted(cands):
            sm = self._seed_pair(a, b)
            if sm is not None:
                return sm
        return None

    def _seed_pair(self, a, b):
        ka, kb, tv = self.pair_matches[(a, b)]
        pa, pb = self.packets[a], self.packets[b]
        pose_a = Pose.identity()
        pose_b = Pose.from_rt(tv.R, tv.t / np.linalg.norm(tv.t))
        xa, xb = self.keypoints[a][ka], self.keypoints[b][kb]
        angles, pts = [], []
        ca, cb = pose_a.center, pose_b.center
        for k in range(len(ka)):
            try:
                X = triangulate_dlt([pose_a, pose_b], [pa.intrinsics, pb.intrinsics],
                                    [xa[k], xb[k]])
            except TriangulationRejected:
                continue
            if pose_a.transform(X)[2] <= 0 or pose_b.transform(X)[2] <= 0:
                continue
            angles.append(max_triangulation_angle(X, np.array([ca, cb])))
            pts.append((k, X))
        if not angles or np.degrees(np.median(angles)) < self.config.init_min_median_angle_deg:
            return None
        thr = self.config.triangulation_threshold_px
        guard = np.radians(self.config.min_triangulation_angle_deg)
        good = []
        for (k, X), ang in zip(pts, angles):
            if ang < guard:
                continue
            ea = _reproj(pa.intrinsics, pose_a, X, xa[k])
            eb = _reproj(pb.intrinsics, pose_b, X, xb[k])
            if ea < thr and eb < thr:
                good.append((k, X))
        if len(good) < self.config.init_min_tracks:
            return None
        sm = self.registry.new_submap()
        sm.add_image(a, pose_a, pa.intrinsics, pa.agent_id, self.keypoints[a])
        sm.add_image(b, pose_b, pb.intrinsics, pb.agent_id, self.keypoints[b])
        for k, X in good:
            sm.add_track(self.registry.new_point_id(), X, {a: int(ka[k]), b: int(kb[k])})
        global_adjust(sm, LmConfig(max_iterations=20), self.config.huber_delta)
        filter_observations(sm, [a, b], self.config.outlier_threshold_px)
        self.pool.remove(a)
        self.pool.remove(b)
        log.info("seeded submap %d from (%d, %d) with %d tracks", sm.submap_id, a, b,
                 len(sm.tracks))
        return sm

    # -- global adjustment ---------------------------------------------------

    def _maybe_global(self):
        k = self.config.global_ba
        if k == "final":
            return
        self._frames_since_global += 1
        if self._frames_since_global >= k:
            self._frames_since_global = 0
            for sid in sorted(self.registry.submaps):
                global_adjust(self.registry.submaps[sid], self.config.global_lm(),
                              self.config.huber_delta)

    def finalize(self):
        """Last fuse pass and a global BA per submap; returns (Reconstruction, report)."""
        for entry in self.registry.ledger.entries.values():
            if entry.n_shared >= self.registry.ledger.n_si:
                entry.dirty = True
        self.registry.fuse_all()
        report = FinalReport(n_frames=len(self.records))
        subs = [self.registry.submaps[s] for s in sorted(self.registry.submaps)]
        errs = [sm.reprojection_errors() for sm in subs]
        all_e = np.concatenate(errs) if errs else np.zeros(0)
        report.mre = float(np.mean(all_e)) if len(all_e) else 0.0
        for sm in subs:
            if sm.n_images >= 2:
                global_adjust(sm, self.config.global_lm(), self.config.huber_delta)
                filter_observations(sm, sm.image_ids, self.config.outlier_threshold_px)
        errs = [sm.reprojection_errors() for sm in subs]
        all_e = np.concatenate(errs) if errs else np.zeros(0)
        report.mfre = float(np.mean(all_e)) if len(all_e) else 0.0
        report.n_registered = sum(sm.n_images for sm in subs)
        report.n_submaps = len(subs)
        report.submap_sizes = [sm.n_images for sm in subs]
        report.n_points = sum(len(sm.tracks) for sm in subs)
        lengths = [len(t) for sm in subs for t in sm.tracks.values()]
        report.mtl = float(np.mean(lengths)) if lengths else 0.0
        local = [r.local_mean_error for r in self.records if r.local_mean_error is not None]
        report.amre = float(np.mean(local)) if local else 0.0
        times = [r.wall_time for r in self.records]
        report.mean_frame_time = float(np.mean(times)) if times else 0.0
        report.max_frame_time = float(np.max(times)) if times else 0.0
        report.submap_timeline = [r.n_submaps for r in self.records]
        report.merge_events = [e.to_dict() for e in self.registry.events]
        return self.reconstruction(), report

    def reconstruction(self) -> Reconstruction:
        rec = Reconstruction()
        for sid in sorted(self.registry.submaps):
            sm = self.registry.submaps[sid]
            for img in sm.image_ids:
                agent = sm.agents[img]
                rec.cameras.setdefault(agent, sm.intrinsics[img])
                rec.images[img] = ImageRecord(agent, sm.poses[img], sid)
            for pid in sorted(sm.tracks):
                tr = sm.tracks[pid]
                rec.points[pid] = PointRecord(tr.xyz.copy(), dict(sorted(tr.observations.items())))
        rec.cameras = dict(sorted(rec.cameras.items()))
        rec.images = dict(sorted(rec.images.items()))
        rec.points = dict(sorted(rec.points.items()))
        return rec

    def run(self, packets):
        for p in packets:
            self.process_frame(p)
        return self.finalize()


def _reproj(intr, pose, X, px) -> float:
    Xc = pose.transform(X)
    if Xc[2] <= 0:
        return np.inf
    uv = np.array([intr.fx * Xc[0] / Xc[2] + intr.cx, intr.fy * Xc[1] / Xc[2] + intr.cy])
    return float(np.linalg.norm(uv - px))


def _swap(tv):
    """Two-view result seen from the other image (x_a = R^T x_b - R^T t)."""
    from .geometry import TwoViewResult

    R = None if tv.R is None else tv.R.T
    t = None if tv.t is None else -tv.R.T @ tv.t
    F = None if tv.F is None else tv.F.T
    H = None
    if tv.H is not None:
        H = np.linalg.inv(tv.H)
    return TwoViewResult(tv.status, tv.inliers, R, t, F, H, tv.n_homography_inliers)
