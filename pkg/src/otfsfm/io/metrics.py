"""Evaluation of a reconstruction against ground truth.

Reconstructions are only defined up to a similarity transform, so pose
errors are measured after aligning estimated camera centers onto the true
ones. Each submap has its own gauge and is aligned separately.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..engine import Reconstruction
from ..errors import AlignmentError, DegenerateSampleError
from ..geometry import SimilarityTransform, estimate_similarity_umeyama
from ..rotation import rotation_angle
from .export import residuals


@dataclass
class MetricsReport:
    n_images: int = 0
    n_points: int = 0
    n_submaps: int = 0
    n_aligned: int = 0
    mre: float | None = None       # mean reprojection error (px), needs keypoints
    mtl: float = 0.0               # mean track length
    mrd_deg: float = 0.0           # mean rotation discrepancy after alignment
    ate: float = 0.0               # RMS camera-center error after alignment
    alignments: dict = field(default_factory=dict)  # submap id -> SimilarityTransform
    rotation_errors_deg: dict = field(default_factory=dict)
    center_errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_images": self.n_images, "n_points": self.n_points, "n_submaps": self.n_submaps,
            "n_aligned": self.n_aligned, "mre": self.mre, "mtl": self.mtl,
            "mrd_deg": self.mrd_deg, "ate": self.ate,
            "alignments": {str(k): {"scale": T.scale, "rotation": T.rotation.tolist(),
                                    "translation": T.translation.tolist()}
                           for k, T in self.alignments.items()},
        }


def align_cameras(est_poses: dict, true_poses: dict, degeneracy_tol: float = 1e-8):
    """Sim(3) mapping estimated centers onto true centers over common ids."""
    common = sorted(set(est_poses) & set(true_poses))
    if len(common) < 3:
        raise AlignmentError(f"only {len(common)} common registered images, need 3")
    src = np.array([est_poses[i].center for i in common])
    dst = np.array([true_poses[i].center for i in common])
    try:
        return estimate_similarity_umeyama(src, dst, degeneracy_tol), common
    except DegenerateSampleError as exc:
        raise AlignmentError(f"camera centers degenerate: {exc}") from exc


def pose_errors(est_poses: dict, true_poses: dict, T: SimilarityTransform, ids):
    """(rotation errors in degrees, center errors) per id after applying T."""
    rot, ctr = {}, {}
    for i in ids:
        p = T.apply_pose(est_poses[i])
        g = true_poses[i]
        rot[i] = float(np.degrees(rotation_angle(g.R @ p.R.T)))
        ctr[i] = float(np.linalg.norm(p.center - g.center))
    return rot, ctr


def evaluate(rec: Reconstruction, true_poses: dict, keypoints: dict | None = None,
             per_submap: bool = True) -> MetricsReport:
    """MRE/MTL from the reconstruction; MRD/ATE after sim(3) alignment.

    Raises AlignmentError when no submap (or, with per_submap=False, the
    whole export) shares at least 3 images with the ground truth.
    """
    rep = MetricsReport(n_images=len(rec.images), n_points=len(rec.points),
                        n_submaps=rec.n_submaps)
    lengths = [len(p.observations) for p in rec.points.values()]
    rep.mtl = float(np.mean(lengths)) if lengths else 0.0
    if keypoints is not None:
        r = residuals(rec, keypoints)
        rep.mre = float(np.mean(r)) if len(r) else 0.0

    groups: dict = {}
    for iid, img in rec.images.items():
        key = img.submap_id if per_submap else 0
        groups.setdefault(key, {})[iid] = img.pose
    last_error = None
    for sid in sorted(groups):
        try:
            T, common = align_cameras(groups[sid], true_poses)
        except AlignmentError as exc:
            last_error = exc
            continue
        rep.alignments[sid] = T
        rot, ctr = pose_errors(groups[sid], true_poses, T, common)
        rep.rotation_errors_deg.update(rot)
        rep.center_errors.update(ctr)
    if not rep.alignments:
        raise last_error or AlignmentError("no registered images")
    rep.n_aligned = len(rep.rotation_errors_deg)
    rep.mrd_deg = float(np.mean(list(rep.rotation_errors_deg.values())))
    rep.ate = float(np.sqrt(np.mean(np.square(list(rep.center_errors.values())))))
    return rep


def retrieval_precision_recall(candidates: dict, shared: np.ndarray, top_n: int,
                               min_shared: int = 50, order=None):
    """Mean precision and recall of retrieved candidates against true overlap.

    `candidates` maps an image id to the ids retrieved when it arrived;
    `shared` is the (n, n) co-visible point count matrix indexed by image
    id. Only images that arrived earlier count as retrievable. Recall uses
    min(#true predecessors, top_n) as the denominator so a perfect top-n
    list scores 1.
    """
    order = list(order if order is not None else sorted(candidates))
    seen: list = []
    precisions, recalls = [], []
    for i in order:
        truth = {j for j in seen if shared[i, j] > min_shared}
        got = list(candidates.get(i, []))
        if got:
            precisions.append(sum(j in truth for j in got) / len(got))
        if truth:
            recalls.append(sum(j in truth for j in got) / min(len(truth), top_n))
        seen.append(i)
    p = float(np.mean(precisions)) if precisions else 1.0
    r = float(np.mean(recalls)) if recalls else 1.0
    return p, r
