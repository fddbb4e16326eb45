"""Submaps, shared images between them, and RANSAC similarity merging.

Every registered image belongs to exactly one submap. When an image also
registers into a second submap, that registration (pose in the other frame
plus the keypoint-to-point links it used) is stored in a SharedImageLedger.
Once a pair has N_si shared images a merge transform is estimated from them
and the smaller submap is folded into the larger one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .association import FIXED, is_fixed
from .bundle import BACamera, BAPoint, BAProblem, LmConfig, solve_weighted_local
from .errors import (DegenerateSampleError, InsufficientDataError, InvalidArgumentError)
from .geometry import (CameraIntrinsics, Pose, SimilarityTransform, Track,
                       estimate_similarity_umeyama, is_degenerate_configuration,
                       project_batch)
from .rotation import log_so3


class Submap:
    """One self-consistent reconstruction.

    `keypoints` holds each member image's pixel array; `image_points` maps
    (image, keypoint index) to the point id it observes.
    """

    def __init__(self, submap_id: int, created: int = 0):
        self.submap_id = submap_id
        self.created = created
        self.poses: dict = {}
        self.intrinsics: dict = {}
        self.agents: dict = {}
        self.keypoints: dict = {}
        self.tracks: dict = {}
        self.image_points: dict = {}
        self.anchor = None

    def __repr__(self):
        return (f"Submap(id={self.submap_id}, images={len(self.poses)}, "
                f"points={len(self.tracks)})")

    @property
    def n_images(self) -> int:
        return len(self.poses)

    @property
    def image_ids(self) -> list:
        return sorted(self.poses)

    @property
    def agent_ids(self) -> set:
        return set(self.agents.values())

    def __contains__(self, image_id):
        return image_id in self.poses

    # -- mutation -------------------------------------------------------

    def add_image(self, image_id, pose: Pose, intrinsics: CameraIntrinsics, agent_id,
                  keypoints):
        if image_id in self.poses:
            raise InvalidArgumentError(f"image {image_id} already registered")
        self.poses[image_id] = pose
        self.intrinsics[image_id] = intrinsics
        self.agents[image_id] = agent_id
        self.keypoints[image_id] = np.asarray(keypoints, dtype=float).reshape(-1, 2)
        self.image_points[image_id] = {}
        if self.anchor is None:
            self.anchor = image_id

    def add_track(self, point_id, xyz, observations: dict) -> Track:
        if point_id in self.tracks:
            raise InvalidArgumentError(f"point {point_id} exists")
        if len(observations) < 2:
            raise InvalidArgumentError("track needs >= 2 observations")
        for img, kp in observations.items():
            if kp in self.image_points[img]:
                raise InvalidArgumentError(f"keypoint {kp} of image {img} already used")
        tr = Track(point_id, xyz, dict(observations))
        self.tracks[point_id] = tr
        for img, kp in observations.items():
            self.image_points[img][kp] = point_id
        return tr

    def add_observation(self, point_id, image_id, kp: int) -> bool:
        tr = self.tracks[point_id]
        if image_id in tr.observations or kp in self.image_points[image_id]:
            return False
        tr.observations[image_id] = kp
        self.image_points[image_id][kp] = point_id
        return True

    def remove_observation(self, point_id, image_id):
        """Drop one observation; the track is deleted once it has < 2."""
        tr = self.tracks[point_id]
        kp = tr.observations.pop(image_id)
        del self.image_points[image_id][kp]
        if len(tr.observations) < 2:
            self.remove_track(point_id)

    def remove_track(self, point_id):
        tr = self.tracks.pop(point_id)
        for img, kp in tr.observations.items():
            self.image_points[img].pop(kp, None)

    def transform(self, T: SimilarityTransform):
        """Map the whole submap through T in place."""
        for img, pose in self.poses.items():
            self.poses[img] = T.apply_pose(pose)
        for tr in self.tracks.values():
            tr.xyz = T.apply_points(tr.xyz)

    # -- queries ----------------------------------------------------------

    def observation_arrays(self):
        """(image ids, point ids, pixels) over every observation, in a fixed order."""
        imgs, pids, px = [], [], []
        for pid in sorted(self.tracks):
            tr = self.tracks[pid]
            for img in sorted(tr.observations):
                imgs.append(img)
                pids.append(pid)
                px.append(self.keypoints[img][tr.observations[img]])
        return imgs, pids, np.asarray(px, dtype=float).reshape(-1, 2)

    def reprojection_errors(self, image_ids=None) -> np.ndarray:
        imgs, pids, px = self.observation_arrays()
        if image_ids is not None:
            keep = set(image_ids)
            sel = [k for k, i in enumerate(imgs) if i in keep]
            imgs = [imgs[k] for k in sel]
            pids = [pids[k] for k in sel]
            px = px[sel]
        if not imgs:
            return np.zeros(0)
        K = np.array([self.intrinsics[i].params for i in imgs])
        R = np.array([self.poses[i].R for i in imgs])
        t = np.array([self.poses[i].t for i in imgs])
        X = np.array([self.tracks[p].xyz for p in pids])
        uv, z = project_batch(K, R, t, X)
        err = np.linalg.norm(uv - px, axis=1)
        return np.where(z > 0, err, np.inf)

    def rms(self) -> float:
        e = self.reprojection_errors()
        return float(np.sqrt(np.mean(e**2))) if len(e) else 0.0

    def mean_error(self) -> float:
        e = self.reprojection_errors()
        return float(np.mean(e)) if len(e) else 0.0

    def mean_track_length(self) -> float:
        if not self.tracks:
            return 0.0
        return float(np.mean([len(t) for t in self.tracks.values()]))

    def covisibility(self, image_id) -> dict:
        """{other image: number of shared points}."""
        out: dict = {}
        for pid in self.image_points[image_id].values():
            for other in self.tracks[pid].observations:
                if other != image_id:
                    out[other] = out.get(other, 0) + 1
        return out

    def check_invariants(self):
        for pid, tr in self.tracks.items():
            assert len(tr.observations) >= 2, f"track {pid} too short"
            for img, kp in tr.observations.items():
                assert img in self.poses, f"track {pid} references unregistered {img}"
                assert self.image_points[img].get(kp) == pid, f"index mismatch {img}:{kp}"
        for img, m in self.image_points.items():
            for kp, pid in m.items():
                assert self.tracks[pid].observations.get(img) == kp


# --------------------------------------------------------------------------
# Bundle adjustment over a submap


def build_problem(submap: Submap, weights: dict, huber_delta: float | None = None,
                  include_observers: bool = True):
    """BA problem over the images in `weights` (image -> weight or FIXED).

    Points observed by at least one non-FIXED camera are free. With
    `include_observers`, other member images observing those points enter
    as FIXED cameras so their measurements still constrain the points.
    Returns (problem, image order, point order).
    """
    free_imgs = {i for i, w in weights.items() if not is_fixed(w)}
    pids = sorted({pid for i in free_imgs for pid in submap.image_points[i].values()})
    cam_w = dict(weights)
    if include_observers:
        for pid in pids:
            for img in submap.tracks[pid].observations:
                cam_w.setdefault(img, FIXED)
    images = sorted(cam_w)
    cidx = {img: k for k, img in enumerate(images)}
    cameras = [BACamera(img, submap.poses[img], submap.intrinsics[img], cam_w[img])
               for img in images]
    points, ci, pi, meas = [], [], [], []
    for pid in pids:
        tr = submap.tracks[pid]
        obs = [(img, kp) for img, kp in sorted(tr.observations.items()) if img in cidx]
        if len(obs) < 2:
            continue
        j = len(points)
        points.append(BAPoint(pid, tr.xyz.copy()))
        for img, kp in obs:
            ci.append(cidx[img])
            pi.append(j)
            meas.append(submap.keypoints[img][kp])
    problem = BAProblem(cameras, points, ci, pi, np.asarray(meas).reshape(-1, 2),
                        huber_delta)
    return problem, images, [p.point_id for p in points]


def write_back(submap: Submap, problem: BAProblem):
    for cam in problem.cameras:
        if not is_fixed(cam.weight):
            submap.poses[cam.image_id] = cam.pose
    for pt in problem.points:
        if not pt.fixed:
            submap.tracks[pt.point_id].xyz = np.asarray(pt.xyz, dtype=float).copy()


def filter_observations(submap: Submap, image_ids, max_error: float) -> int:
    """Remove observations in `image_ids` whose reprojection exceeds max_error."""
    removed = 0
    for img in sorted(image_ids):
        if img not in submap.poses:
            continue
        items = sorted(submap.image_points[img].items())
        if not items:
            continue
        kps = np.array([kp for kp, _ in items])
        pids = [pid for _, pid in items]
        X = np.array([submap.tracks[p].xyz for p in pids])
        pose = submap.poses[img]
        uv, z = project_batch(submap.intrinsics[img].params, pose.R, pose.t, X)
        err = np.linalg.norm(uv - submap.keypoints[img][kps], axis=1)
        for k in np.nonzero((err > max_error) | (z <= 0))[0]:
            if pids[k] in submap.tracks and img in submap.tracks[pids[k]].observations:
                submap.remove_observation(pids[k], img)
                removed += 1
    return removed


def local_adjust(submap: Submap, weights: dict, config: LmConfig | None = None,
                 huber_delta: float | None = 2.0):
    """Weighted local BA on `submap` in place. Returns the LM report or None."""
    weights = dict(weights)
    if not any(not is_fixed(w) for w in weights.values()):
        return None
    problem, images, _ = build_problem(submap, weights, huber_delta)
    if not problem.points:
        return None
    if all(not is_fixed(c.weight) for c in problem.cameras):
        # No constant camera in reach: hold the submap anchor (or the oldest
        # camera) so the local problem keeps the submap's gauge.
        hold = submap.anchor if submap.anchor in images else images[0]
        for c in problem.cameras:
            if c.image_id == hold:
                c.weight = FIXED
        if all(is_fixed(c.weight) for c in problem.cameras):
            return None
    _drop_unconstrained(problem)
    if not problem.points:
        return None
    refined, report = solve_weighted_local(problem, config)
    write_back(submap, refined)
    return report


def _drop_unconstrained(problem: BAProblem):
    """Remove points whose residual blocks no longer meet the free-point rule."""
    fixed_cam = np.array([is_fixed(c.weight) for c in problem.cameras])
    keep = []
    for j in range(len(problem.points)):
        cams = problem.cam_index[problem.point_index == j]
        if len(set(cams.tolist())) >= 2 and not fixed_cam[cams].all():
            keep.append(j)
    if len(keep) == len(problem.points):
        return
    remap = {j: k for k, j in enumerate(keep)}
    mask = np.isin(problem.point_index, keep)
    problem.points = [problem.points[j] for j in keep]
    problem.cam_index = problem.cam_index[mask]
    problem.point_index = np.array([remap[j] for j in problem.point_index[mask]], np.int64)
    problem.measured = problem.measured[mask]


def global_adjust(submap: Submap, config: LmConfig | None = None,
                  huber_delta: float | None = None):
    """All cameras free except the anchor."""
    weights = {img: 1.0 for img in submap.poses}
    if submap.anchor is not None:
        weights[submap.anchor] = FIXED
    if len(weights) < 2:
        return None
    problem, _, _ = build_problem(submap, weights, huber_delta, include_observers=False)
    _drop_unconstrained(problem)
    if not problem.points:
        return None
    from .bundle import solve

    refined, report = solve(problem, config or LmConfig())
    write_back(submap, refined)
    return report


# --------------------------------------------------------------------------
# Shared images


@dataclass
class SharedView:
    """An image's registration into a submap it is not a member of."""

    pose: Pose
    kp_to_point: dict
    keypoints: np.ndarray
    intrinsics: CameraIntrinsics


@dataclass
class SharedRecord:
    image_id: object
    views: dict = field(default_factory=dict)  # submap id -> SharedView (external only)


@dataclass
class LedgerEntry:
    pair: tuple
    records: dict = field(default_factory=dict)  # image id -> SharedRecord
    dirty: bool = False

    @property
    def n_shared(self) -> int:
        return len(self.records)


@dataclass
class MergeConfig:
    n_si: int = 3
    min_ior: float = 0.25
    max_re: float = 8.0
    num_trials: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.n_si < 3 or not (0 < self.min_ior <= 1) or self.max_re <= 0 \
                or self.num_trials < 1:
            raise InvalidArgumentError("invalid merge configuration")


def _pair(a, b) -> tuple:
    if a == b:
        raise InvalidArgumentError("a shared image needs two distinct submaps")
    return (a, b) if a < b else (b, a)


class SharedImageLedger:
    def __init__(self, n_si: int = 3):
        self.n_si = n_si
        self.entries: dict = {}

    def entry(self, a, b) -> LedgerEntry | None:
        return self.entries.get(_pair(a, b))

    def record(self, image_id, submap_a, submap_b, view: SharedView | None = None,
               view_submap=None) -> bool:
        """Record `image_id` as shared; returns the merge-trigger flag.

        `view` is the registration into `view_submap` (the submap the image
        is not a member of). Re-recording an image keeps the first view.
        """
        key = _pair(submap_a, submap_b)
        entry = self.entries.setdefault(key, LedgerEntry(key))
        rec = entry.records.get(image_id)
        if rec is None:
            rec = SharedRecord(image_id)
            entry.records[image_id] = rec
            entry.dirty = True
        if view is not None and view_submap not in rec.views:
            rec.views[view_submap] = view
        return entry.n_shared >= self.n_si

    def triggered(self) -> list:
        return sorted(k for k, e in self.entries.items() if e.n_shared >= self.n_si and e.dirty)

    def pairs_of(self, submap_id) -> list:
        return sorted(k for k in self.entries if submap_id in k)


def record_shared_image(ledger: SharedImageLedger, image_id, submap_a, submap_b,
                        view: SharedView | None = None, view_submap=None):
    flag = ledger.record(image_id, submap_a, submap_b, view, view_submap)
    return ledger, flag


def _view_in(submap: Submap, rec: SharedRecord):
    """(pose, kp->point, keypoints, intrinsics) of a shared image in `submap`."""
    img = rec.image_id
    if img in submap.poses:
        return (submap.poses[img], submap.image_points[img], submap.keypoints[img],
                submap.intrinsics[img])
    v = rec.views.get(submap.submap_id)
    if v is None:
        return None
    return v.pose, v.kp_to_point, v.keypoints, v.intrinsics


@dataclass
class _SharedData:
    image_id: object
    pose_s: Pose
    pose_r: Pose
    intr: CameraIntrinsics
    pixels: np.ndarray  # (k, 2) common keypoints
    X_s: np.ndarray     # (k, 3) their points in the source frame
    X_r: np.ndarray     # (k, 3) their points in the reference frame
    pid_s: list
    pid_r: list
    depth_s: float
    depth_r: float


def _shared_data(source: Submap, reference: Submap, entry: LedgerEntry) -> list:
    out = []
    for img in sorted(entry.records):
        rec = entry.records[img]
        vs, vr = _view_in(source, rec), _view_in(reference, rec)
        if vs is None or vr is None:
            continue
        common = sorted(set(vs[1]) & set(vr[1]))
        common = [kp for kp in common if vs[1][kp] in source.tracks
                  and vr[1][kp] in reference.tracks]
        kps = vs[2] if img in source.poses else vr[2]
        pid_s = [vs[1][kp] for kp in common]
        pid_r = [vr[1][kp] for kp in common]
        X_s = np.array([source.tracks[p].xyz for p in pid_s]).reshape(-1, 3)
        X_r = np.array([reference.tracks[p].xyz for p in pid_r]).reshape(-1, 3)

        def depth(pose, X):
            if len(X) == 0:
                return 1.0
            return float(np.median(np.abs(pose.transform(X)[:, 2])))

        out.append(_SharedData(img, vs[0], vr[0], vs[3],
                               kps[np.asarray(common, dtype=int)].reshape(-1, 2),
                               X_s, X_r, pid_s, pid_r, depth(vs[0], X_s), depth(vr[0], X_r)))
    return out


def _anchor_points(d: _SharedData, frame: str) -> np.ndarray:
    """Camera center plus a point one median depth along the optical axis."""
    pose, depth = (d.pose_s, d.depth_s) if frame == "s" else (d.pose_r, d.depth_r)
    return np.array([pose.center, pose.center + depth * pose.axis])


def _score(T: SimilarityTransform, data: list, config: MergeConfig):
    """Per shared image: boolean inlier mask over its common points."""
    Tinv = T.inverse()
    masks = []
    for d in data:
        if len(d.pixels) == 0:
            masks.append(np.zeros(0, bool))
            continue
        kp = d.intr.params
        # re12: source point carried into the reference frame.
        uv1, z1 = project_batch(kp, d.pose_r.R, d.pose_r.t, T.apply_points(d.X_s))
        # re21: reference point carried back into the source frame.
        uv2, z2 = project_batch(kp, d.pose_s.R, d.pose_s.t, Tinv.apply_points(d.X_r))
        e1 = np.linalg.norm(uv1 - d.pixels, axis=1)
        e2 = np.linalg.norm(uv2 - d.pixels, axis=1)
        masks.append((z1 > 0) & (z2 > 0) & (e1 <= config.max_re) & (e2 <= config.max_re))
    return masks


def _inlier_images(masks, config: MergeConfig) -> np.ndarray:
    return np.array([len(m) > 0 and m.mean() >= config.min_ior for m in masks], bool)


@dataclass
class MergeEstimate:
    transform: SimilarityTransform
    inlier_images: list
    n_shared: int
    trials: int
    n_point_pairs: int


class MergeFailed(Exception):
    pass


def estimate_merge_transform(source: Submap, reference: Submap, entry: LedgerEntry,
                             config: MergeConfig | None = None,
                             degeneracy_tol: float = 1e-6) -> MergeEstimate:
    """Similarity mapping `source` coordinates into `reference` coordinates.

    Each trial samples three shared images whose camera centers are not
    collinear, fits T to their centers and depth-scaled viewing axes, and
    counts shared images whose common points reproject within max_re in
    both directions for at least min_ior of the points. The best hypothesis
    is refit on the inlier point pairs.
    """
    config = config or MergeConfig()
    data = _shared_data(source, reference, entry)
    if len(entry.records) < 3 or len(data) < 3:
        raise InsufficientDataError("need >= 3 shared images")
    rng = np.random.default_rng(config.seed)
    n = len(data)
    best = None
    for _ in range(config.num_trials):
        idx = np.sort(rng.choice(n, 3, replace=False))
        cs = np.array([data[k].pose_s.center for k in idx])
        cr = np.array([data[k].pose_r.center for k in idx])
        if is_degenerate_configuration(cs, degeneracy_tol) or \
                is_degenerate_configuration(cr, degeneracy_tol):
            continue
        src = np.vstack([_anchor_points(data[k], "s") for k in idx])
        dst = np.vstack([_anchor_points(data[k], "r") for k in idx])
        try:
            T = estimate_similarity_umeyama(src, dst, degeneracy_tol)
        except (DegenerateSampleError, InsufficientDataError):
            continue
        masks = _score(T, data, config)
        inl = _inlier_images(masks, config)
        key = (int(inl.sum()), int(sum(m.sum() for m in masks)))
        if best is None or key > best[0]:
            best = (key, T, masks, inl)
    if best is None or best[0][0] < 3:
        raise MergeFailed("fewer than 3 inlier shared images")
    _, T, masks, inl = best
    # Refit on every inlier point pair of the inlier images, then rescore.
    for _ in range(2):
        src = np.vstack([data[k].X_s[masks[k]] for k in range(n) if inl[k]])
        dst = np.vstack([data[k].X_r[masks[k]] for k in range(n) if inl[k]])
        try:
            T_new = estimate_similarity_umeyama(src, dst, degeneracy_tol)
        except (DegenerateSampleError, InsufficientDataError):
            break
        new_masks = _score(T_new, data, config)
        new_inl = _inlier_images(new_masks, config)
        if new_inl.sum() < inl.sum():
            break
        T, masks, inl = T_new, new_masks, new_inl
    if inl.sum() < 3:
        raise MergeFailed("fewer than 3 inlier shared images after refit")
    n_pairs = int(sum(masks[k].sum() for k in range(n) if inl[k]))
    return MergeEstimate(T, [data[k].image_id for k in range(n) if inl[k]], n,
                         config.num_trials, n_pairs)


# --------------------------------------------------------------------------
# Merging


@dataclass
class MergeEvent:
    source: int
    reference: int
    direction: str  # "smaller_into_larger" or "larger_into_smaller"
    n_inlier_images: int
    n_shared: int
    transform: SimilarityTransform
    frame_index: int = -1
    source_centers: dict = field(default_factory=dict, repr=False)
    reference_centers: dict = field(default_factory=dict, repr=False)
    rms_before: tuple = (0.0, 0.0)
    rms_after: float = 0.0

    def to_dict(self) -> dict:
        T = self.transform
        return {"source": self.source, "reference": self.reference,
                "direction": self.direction, "n_inlier_images": self.n_inlier_images,
                "n_shared": self.n_shared, "frame_index": self.frame_index,
                "scale": T.scale, "rotation_wxyz": T.rotation.tolist(),
                "translation": T.translation.tolist(),
                "rms_before": list(self.rms_before), "rms_after": self.rms_after}


def seam_weights(submap: Submap, roots, depth: int = 2, min_shared: int = 15) -> dict:
    """Covisibility rings around `roots`: rings < depth free, ring `depth` FIXED."""
    weights = {r: 1.0 for r in roots if r in submap.poses}
    frontier = list(weights)
    for ring in range(1, depth + 1):
        nxt = []
        for img in frontier:
            for other, n in sorted(submap.covisibility(img).items()):
                if n >= min_shared and other not in weights:
                    weights[other] = FIXED if ring == depth else 1.0
                    nxt.append(other)
        frontier = nxt
    return weights


def merge(source: Submap, reference: Submap, T: SimilarityTransform, entry: LedgerEntry,
          refine: bool = True, lm: LmConfig | None = None) -> Submap:
    """Fold `source` into `reference` (mutated and returned)."""
    return _merge(source, reference, T, entry, refine, lm)[0]


def _merge(source, reference, T, entry, refine=True, lm=None):
    shared = sorted(entry.records) if entry is not None else []
    # Links (source point, reference point) evidenced by shared images.
    links: dict = {}
    for img in shared:
        rec = entry.records[img]
        vs, vr = _view_in(source, rec), _view_in(reference, rec)
        if vs is None or vr is None:
            continue
        for kp in sorted(set(vs[1]) & set(vr[1])):
            key = (vs[1][kp], vr[1][kp])
            if key[0] in source.tracks and key[1] in reference.tracks:
                links[key] = links.get(key, 0) + 1

    source.transform(T)
    for img in source.image_ids:
        pose = source.poses[img]
        rec = entry.records.get(img) if entry is not None else None
        if rec is not None and reference.submap_id in rec.views:
            pose = rec.views[reference.submap_id].pose  # reference frame wins
        reference.add_image(img, pose, source.intrinsics[img], source.agents[img],
                            source.keypoints[img])
    for pid in sorted(source.tracks):
        tr = source.tracks[pid]
        reference.tracks[pid] = tr
        for img, kp in tr.observations.items():
            reference.image_points[img][kp] = pid

    # Unify duplicates linked by >= 2 shared observations.
    unified = {}
    for (ps, pr), count in sorted(links.items()):
        if count < 2 or ps not in reference.tracks or pr not in reference.tracks or ps == pr:
            continue
        src_tr = reference.tracks[ps]
        dst_tr = reference.tracks[pr]
        for img, kp in sorted(src_tr.observations.items()):
            del reference.image_points[img][kp]
            if img in dst_tr.observations:
                continue
            dst_tr.observations[img] = kp
            reference.image_points[img][kp] = pr
        del reference.tracks[ps]
        unified[ps] = pr

    if refine and shared:
        roots = [i for i in shared if i in reference.poses]
        weights = seam_weights(reference, roots)
        local_adjust(reference, weights, lm or LmConfig(max_iterations=15))
    return reference, unified


class SubmapRegistry:
    """Live submaps plus the ledger, with pairwise recursive fusion."""

    def __init__(self, config: MergeConfig | None = None, lm: LmConfig | None = None):
        self.config = config or MergeConfig()
        self.lm = lm
        self.submaps: dict = {}
        self.ledger = SharedImageLedger(self.config.n_si)
        self.events: list = []
        self.failures: list = []
        self._next_submap = 0
        self._next_point = 0
        self.frame_index = -1

    def __len__(self):
        return len(self.submaps)

    def new_submap(self) -> Submap:
        sm = Submap(self._next_submap, created=self._next_submap)
        self.submaps[sm.submap_id] = sm
        self._next_submap += 1
        return sm

    def new_point_id(self) -> int:
        self._next_point += 1
        return self._next_point - 1

    def submap_of(self, image_id):
        for sm in self.submaps.values():
            if image_id in sm.poses:
                return sm
        return None

    def by_size(self) -> list:
        return sorted(self.submaps.values(), key=lambda s: (-s.n_images, s.submap_id))

    def _try(self, source: Submap, reference: Submap, entry: LedgerEntry):
        try:
            return estimate_merge_transform(source, reference, entry, self.config)
        except (MergeFailed, InsufficientDataError):
            return None

    def attempt_fuse(self, pair) -> bool:
        entry = self.ledger.entry(*pair)
        if entry is None or any(p not in self.submaps for p in pair):
            return False
        a, b = (self.submaps[p] for p in pair)
        small, large = sorted((a, b), key=lambda s: (s.n_images, s.submap_id))
        est = self._try(small, large, entry)
        direction = "smaller_into_larger"
        source, reference = small, large
        if est is None:
            est = self._try(large, small, entry)
            direction = "larger_into_smaller"
            source, reference = large, small
        entry.dirty = False
        if est is None:
            self.failures.append((pair, self.frame_index))
            return False
        event = MergeEvent(source.submap_id, reference.submap_id, direction,
                           len(est.inlier_images), est.n_shared, est.transform,
                           self.frame_index,
                           {i: p.center for i, p in source.poses.items()},
                           {i: p.center for i, p in reference.poses.items()},
                           (source.rms(), reference.rms()))
        merged, unified = _merge(source, reference, est.transform, entry, lm=self.lm)
        event.rms_after = merged.rms()
        self.events.append(event)
        del self.submaps[source.submap_id]
        self._rekey(source.submap_id, reference.submap_id, est.transform, unified)
        return True

    def _rekey(self, gone, kept, T: SimilarityTransform, unified: dict):
        """Move ledger entries of a merged-away submap onto the survivor."""
        for key in self.ledger.pairs_of(gone):
            entry = self.ledger.entries.pop(key)
            other = key[0] if key[1] == gone else key[1]
            if other == kept:
                continue
            for img, rec in sorted(entry.records.items()):
                if gone in rec.views:
                    v = rec.views.pop(gone)
                    rec.views[kept] = SharedView(T.apply_pose(v.pose), v.kp_to_point,
                                                 v.keypoints, v.intrinsics)
                new_entry = self.ledger.entries.setdefault(_pair(kept, other),
                                                           LedgerEntry(_pair(kept, other)))
                if img not in new_entry.records:
                    new_entry.records[img] = rec
                    new_entry.dirty = True
        # Views must point at live tracks: follow unified ids, drop dead ones.
        for key in self.ledger.pairs_of(kept):
            for rec in self.ledger.entries[key].records.values():
                v = rec.views.get(kept)
                if v is not None:
                    sm = self.submaps[kept]
                    v.kp_to_point = {k: unified.get(p, p) for k, p in v.kp_to_point.items()
                                     if unified.get(p, p) in sm.tracks}

    def fuse_all(self) -> int:
        """Fuse triggered pairs until none is left; returns the number of merges."""
        merges = 0
        while True:
            pairs = self.ledger.triggered()
            if not pairs:
                return merges
            progressed = False
            for pair in pairs:
                if self.attempt_fuse(pair):
                    merges += 1
                    progressed = True
                    break
            if not progressed:
                return merges


def attempt_fuse(registry: SubmapRegistry, pair) -> SubmapRegistry:
    registry.attempt_fuse(pair)
    return registry


def rotation_error_deg(Ra, Rb) -> float:
    return math.degrees(float(np.linalg.norm(log_so3(Ra @ Rb.T))))
