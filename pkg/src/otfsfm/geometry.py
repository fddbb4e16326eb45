"""Pinhole camera model and the multi-view estimators used by the engine.

Poses map world to camera: x_cam = R @ X + t. All RANSAC routines take an
explicit seed and batch their hypotheses, so results are reproducible and
the inner loops stay in numpy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (BehindCameraError, DegenerateSampleError, InsufficientDataError,
                     InvalidArgumentError, RegistrationFailed, TriangulationRejected)
from .rotation import (canonical_quat, exp_so3, matrix_to_quat, nearest_rotation,
                       quat_to_matrix, skew)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidArgumentError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def params(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])

    def normalize(self, pixels) -> np.ndarray:
        """Pixels (n, 2) to normalized image coordinates (n, 2)."""
        p = np.asarray(pixels, dtype=float).reshape(-1, 2)
        return np.column_stack([(p[:, 0] - self.cx) / self.fx, (p[:, 1] - self.cy) / self.fy])

    def contains(self, pixel, margin: float = 0.0) -> bool:
        u, v = pixel
        return (-margin <= u <= self.width + margin) and (-margin <= v <= self.height + margin)


@dataclass(frozen=True)
class Pose:
    """World-to-camera rotation (unit quaternion w, x, y, z) and translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        if q.shape != (4,) or not np.all(np.isfinite(q)) or np.linalg.norm(q) == 0:
            raise InvalidArgumentError("rotation must be a finite non-zero quaternion")
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidArgumentError("translation must be finite")
        object.__setattr__(self, "rotation", canonical_quat(q))
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(matrix_to_quat(R), t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def look_at(cls, center, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at `center` with its optical axis (+z) towards `target`."""
        center = np.asarray(center, dtype=float)
        z = np.asarray(target, dtype=float) - center
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [1.0, 0.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.vstack([x, y, z])
        return cls.from_rt(R, -R @ center)

    @cached_property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return self.translation

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.translation

    @property
    def axis(self) -> np.ndarray:
        """Viewing direction (+z of the camera) in world coordinates."""
        return self.R[2].copy()

    def transform(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.R.T + self.translation

    def relative_to(self, other: "Pose") -> tuple[np.ndarray, np.ndarray]:
        """(R, t) mapping `other`'s camera frame into this camera's frame."""
        R = self.R @ other.R.T
        return R, self.translation - R @ other.translation

    def retract(self, delta) -> "Pose":
        """Apply a 6-vector increment: rotation left-multiplied, translation added."""
        delta = np.asarray(delta, dtype=float)
        return Pose.from_rt(exp_so3(delta[:3]) @ self.R, self.translation + delta[3:])


@dataclass
class Observation:
    image_id: int
    keypoint_index: int
    pixel: np.ndarray
    point_id: int | None = None


@dataclass
class Track:
    """3D point with its image observations {image_id: keypoint_index}."""

    point_id: int
    xyz: np.ndarray
    observations: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(3)

    def __len__(self):
        return len(self.observations)


@dataclass(frozen=True)
class SimilarityTransform:
    """p' = scale * R @ p + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidArgumentError("scale must be positive")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", canonical_quat(self.rotation))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_srt(cls, s, R, t) -> "SimilarityTransform":
        return cls(s, matrix_to_quat(R), t)

    @cached_property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        """3x4 matrix [sR | t]."""
        return np.hstack([self.scale * self.R, self.translation[:, None]])

    def inverse(self) -> "SimilarityTransform":
        Rinv = self.R.T
        return SimilarityTransform.from_srt(1.0 / self.scale, Rinv,
                                            -(Rinv @ self.translation) / self.scale)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self after other."""
        return SimilarityTransform.from_srt(
            self.scale * other.scale, self.R @ other.R,
            self.scale * self.R @ other.translation + self.translation)

    def apply_points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.scale * (p @ self.R.T) + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        # Camera center moves like a point; the frame rotates by R.
        R_new = pose.R @ self.R.T
        c_new = self.apply_points(pose.center)
        return Pose.from_rt(R_new, -R_new @ c_new)


def apply_similarity(T: SimilarityTransform, element):
    """Map a point array, Pose or Track through T (tracks are copied)."""
    if isinstance(element, Pose):
        return T.apply_pose(element)
    if isinstance(element, Track):
        return Track(element.point_id, T.apply_points(element.xyz), dict(element.observations))
    return T.apply_points(element)


# --------------------------------------------------------------------------
# Projection


def project(intrinsics: CameraIntrinsics, pose: Pose, xyz) -> np.ndarray:
    Xc = pose.transform(np.asarray(xyz, dtype=float).reshape(3))
    if Xc[2] <= 0:
        raise BehindCameraError(f"point has non-positive depth {Xc[2]:.3g}")
    return np.array([intrinsics.fx * Xc[0] / Xc[2] + intrinsics.cx,
                     intrinsics.fy * Xc[1] / Xc[2] + intrinsics.cy])


def backproject(intrinsics: CameraIntrinsics, pose: Pose, pixel):
    """Ray (origin, unit direction) in world coordinates through `pixel`."""
    xn = intrinsics.normalize(pixel)[0]
    d = pose.R.T @ np.array([xn[0], xn[1], 1.0])
    return pose.center, d / np.linalg.norm(d)


def project_batch(kparams, R, t, X, jacobians: bool = False):
    """Per-row projection with optional analytic Jacobians.

    kparams (n, 4) or (4,) as fx, fy, cx, cy; R (n, 3, 3) or (3, 3);
    t (n, 3) or (3,); X (n, 3). Returns uv (n, 2), depth (n,) and, when
    requested, J_cam (n, 2, 6) for the increment (rotation, translation)
    and J_pt (n, 2, 3).
    """
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    kparams = np.broadcast_to(np.asarray(kparams, dtype=float), (len(X), 4))
    R = np.broadcast_to(np.asarray(R, dtype=float), (len(X), 3, 3))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(X), 3))
    RX = np.einsum("nij,nj->ni", R, X)
    Xc = RX + t
    z = Xc[:, 2]
    safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    fx, fy, cx, cy = kparams.T
    uv = np.column_stack([fx * Xc[:, 0] / safe_z + cx, fy * Xc[:, 1] / safe_z + cy])
    if not jacobians:
        return uv, z
    n = len(X)
    Jproj = np.zeros((n, 2, 3))
    Jproj[:, 0, 0] = fx / safe_z
    Jproj[:, 0, 2] = -fx * Xc[:, 0] / safe_z**2
    Jproj[:, 1, 1] = fy / safe_z
    Jproj[:, 1, 2] = -fy * Xc[:, 1] / safe_z**2
    # d(Xc)/d(omega) = -[R X]x for the left increment exp(omega) R.
    neg_skew = np.zeros((n, 3, 3))
    neg_skew[:, 0, 1], neg_skew[:, 0, 2] = RX[:, 2], -RX[:, 1]
    neg_skew[:, 1, 0], neg_skew[:, 1, 2] = -RX[:, 2], RX[:, 0]
    neg_skew[:, 2, 0], neg_skew[:, 2, 1] = RX[:, 1], -RX[:, 0]
    J_cam = np.concatenate([Jproj @ neg_skew, Jproj], axis=2)
    J_pt = Jproj @ R
    return uv, z, J_cam, J_pt


def reprojection_errors(intrinsics: CameraIntrinsics, pose: Pose, X, pixels) -> np.ndarray:
    """Pixel distances; points behind the camera get +inf."""
    uv, z = project_batch(intrinsics.params, pose.R, pose.t, X)
    err = np.linalg.norm(uv - np.asarray(pixels, dtype=float).reshape(-1, 2), axis=1)
    return np.where(z > 0, err, np.inf)


# --------------------------------------------------------------------------
# Two-view verification


def _hartley(p):
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return np.column_stack([(p - c) * s, np.ones(len(p))]), T


def _sample_indices(rng, n, k, size):
    return np.argpartition(rng.random((size, n)), k - 1, axis=1)[:, :k]


def _fundamental_from(x1n, x2n, T1, T2):
    """Batched normalized 8-point; x1n, x2n (..., m, 3) homogeneous."""
    a = x2n[..., :, :, None] * x1n[..., :, None, :]
    A = a.reshape(*a.shape[:-2], 9)
    _, _, Vt = np.linalg.svd(A)
    F = Vt[..., -1, :].reshape(*A.shape[:-2], 3, 3)
    U, S, Vt = np.linalg.svd(F)
    S[..., 2] = 0.0
    F = U @ (S[..., :, None] * Vt)
    F = T2.T @ F @ T1
    norm = np.linalg.norm(F.reshape(*F.shape[:-2], 9), axis=-1)
    return F / norm[..., None, None]


def _sampson(F, x1h, x2h):
    """Sampson distance squared (pixels^2) for models F (k, 3, 3)."""
    Fx1 = x1h @ F.swapaxes(1, 2)
    Ftx2 = x2h @ F
    num = np.sum(x2h * Fx1, axis=2) ** 2
    den = Fx1[..., 0] ** 2 + Fx1[..., 1] ** 2 + Ftx2[..., 0] ** 2 + Ftx2[..., 1] ** 2
    return num / np.maximum(den, 1e-300)


def _homography_from(x1n, x2n, T1, T2):
    x, y = x1n[..., 0], x1n[..., 1]
    u, v = x2n[..., 0], x2n[..., 1]
    zeros, ones = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -ones, zeros, zeros, zeros, u * x, u * y, u], axis=-1)
    r2 = np.stack([zeros, zeros, zeros, -x, -y, -ones, v * x, v * y, v], axis=-1)
    A = np.concatenate([r1, r2], axis=-2)
    _, _, Vt = np.linalg.svd(A)
    H = Vt[..., -1, :].reshape(*A.shape[:-2], 3, 3)
    return np.linalg.inv(T2) @ H @ T1


def _transfer_error(H, x1h, x2):
    p = x1h @ H.swapaxes(1, 2)
    w = p[..., 2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    return (p[..., 0] / w - x2[:, 0]) ** 2 + (p[..., 1] / w - x2[:, 1]) ** 2


def _ransac_model(solver, errfn, x1n, x2n, T1, T2, x1h, x2h, m, thr2, rng, max_hyp,
                  batch=64, confidence=0.999):
    n = len(x1h)
    best_count, model, inl = -1, None, np.zeros(n, bool)
    needed, done = max_hyp, 0
    while done < min(needed, max_hyp):
        k = min(batch, max_hyp - done)
        idx = _sample_indices(rng, n, m, k)
        done += k
        models = solver(x1n[idx], x2n[idx], T1, T2)
        models = models[np.all(np.isfinite(models.reshape(len(models), -1)), axis=1)]
        if len(models) == 0:
            continue
        err = errfn(models, x1h, x2h)
        counts = (err < thr2).sum(axis=1)
        b = int(np.argmax(counts))
        if counts[b] > best_count:
            best_count, model, inl = int(counts[b]), models[b], err[b] < thr2
            w = best_count / n
            needed = done if w >= 1.0 else int(np.ceil(np.log(1 - confidence) / np.log(1 - w**m)))
    if model is None:
        return None, inl
    # Local refit on the consensus set until it stops growing.
    for _ in range(3):
        if inl.sum() < m:
            break
        refit = solver(x1n[inl][None], x2n[inl][None], T1, T2)
        if not np.all(np.isfinite(refit)):
            break
        new_inl = errfn(refit, x1h, x2h)[0] < thr2
        if new_inl.sum() < inl.sum():
            break
        model, grew = refit[0], new_inl.sum() > inl.sum()
        inl = new_inl
        if not grew:
            break
    return model, inl


def triangulate_pair(P1, P2, x1, x2):
    """Linear triangulation of normalized points x1, x2 (n, 2); returns (n, 3)."""
    x1 = np.asarray(x1, float).reshape(-1, 2)
    x2 = np.asarray(x2, float).reshape(-1, 2)
    A = np.stack([x1[:, 0:1] * P1[2] - P1[0], x1[:, 1:2] * P1[2] - P1[1],
                  x2[:, 0:1] * P2[2] - P2[0], x2[:, 1:2] * P2[2] - P2[1]], axis=1)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[:, -1, :]
    w = np.where(np.abs(Xh[:, 3]) < 1e-300, 1e-300, Xh[:, 3])
    return Xh[:, :3] / w[:, None]


def decompose_essential(E, x1n, x2n):
    """Pick (R, t) from E maximizing the number of points in front of both cameras."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    best = None
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for t in (U[:, 2], -U[:, 2]):
            P2 = np.hstack([R, t[:, None]])
            X = triangulate_pair(P1, P2, x1n, x2n)
            z1 = X[:, 2]
            z2 = (X @ R.T + t)[:, 2]
            good = int(np.sum((z1 > 0) & (z2 > 0)))
            if best is None or good > best[0]:
                best = (good, R, t)
    return best[1], best[2], best[0]


@dataclass
class TwoViewResult:
    status: str  # "verified", "degenerate" or "rejected"
    inliers: np.ndarray
    R: np.ndarray | None = None
    t: np.ndarray | None = None
    F: np.ndarray | None = None
    H: np.ndarray | None = None
    n_homography_inliers: int = 0

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())

    @property
    def accepted(self) -> bool:
        return self.status == "verified"

    @property
    def degenerate(self) -> bool:
        return self.status == "degenerate"


def two_view_verify(pts_a, pts_b, intr_a: CameraIntrinsics, intr_b: CameraIntrinsics,
                    threshold_px: float = 2.0, min_inliers: int = 50,
                    homography_ratio: float = 0.9, n_hypotheses: int = 256,
                    seed: int = 0) -> TwoViewResult:
    """Epipolar RANSAC with a competing homography fit.

    The relative pose maps camera a into camera b: x_b = R x_a + t, |t| = 1.
    A pair is accepted only with more than `min_inliers` epipolar inliers and
    when the homography does not explain at least `homography_ratio` of them.
    """
    p1 = np.asarray(pts_a, dtype=float).reshape(-1, 2)
    p2 = np.asarray(pts_b, dtype=float).reshape(-1, 2)
    if len(p1) != len(p2):
        raise InvalidArgumentError("correspondence arrays differ in length")
    if len(p1) < 8:
        raise InsufficientDataError(f"need >= 8 correspondences, got {len(p1)}")
    rng = np.random.default_rng(seed)
    x1n, T1 = _hartley(p1)
    x2n, T2 = _hartley(p2)
    x1h = np.column_stack([p1, np.ones(len(p1))])
    x2h = np.column_stack([p2, np.ones(len(p2))])
    thr2 = threshold_px**2

    F, inl = _ransac_model(_fundamental_from, _sampson, x1n, x2n, T1, T2, x1h, x2h,
                           8, thr2, rng, n_hypotheses)
    if F is None or inl.sum() < 8:
        return TwoViewResult("rejected", np.zeros(len(p1), bool))
    H, h_inl = _ransac_model(_homography_from, lambda H, a, b: _transfer_error(H, a, p2),
                             x1n, x2n, T1, T2, x1h, x2h, 4, thr2, rng, n_hypotheses)
    n_h = int(h_inl.sum()) if H is not None else 0

    E = intr_b.K.T @ F @ intr_a.K
    U, _, Vt = np.linalg.svd(E)
    E = U @ np.diag([1.0, 1.0, 0.0]) @ Vt
    # Cheirality voting on an evenly spaced subset keeps this step cheap.
    sub = np.nonzero(inl)[0]
    sub = sub[np.linspace(0, len(sub) - 1, min(len(sub), 100)).astype(int)]
    R, t, _ = decompose_essential(E, intr_a.normalize(p1[sub]), intr_b.normalize(p2[sub]))

    n_f = int(inl.sum())
    if n_f <= min_inliers:
        status = "rejected"
    elif n_h >= homography_ratio * n_f:
        status = "degenerate"
    else:
        status = "verified"
    return TwoViewResult(status, inl, R, t, F, H, n_h)


# --------------------------------------------------------------------------
# Absolute pose


def _dlt_pose_batch(xn, X):
    """Batched 6-point DLT camera matrix; xn (k, 6, 2), X (k, 6, 3)."""
    c = X.mean(axis=1, keepdims=True)
    s = np.sqrt(3.0) / np.maximum(np.sqrt(((X - c) ** 2).sum(axis=2)).mean(axis=1), 1e-12)
    Xs = (X - c) * s[:, None, None]
    Xh = np.concatenate([Xs, np.ones(Xs.shape[:2] + (1,))], axis=2)
    zeros = np.zeros_like(Xh)
    r1 = np.concatenate([Xh, zeros, -xn[..., 0:1] * Xh], axis=2)
    r2 = np.concatenate([zeros, Xh, -xn[..., 1:2] * Xh], axis=2)
    A = np.concatenate([r1, r2], axis=1)
    _, _, Vt = np.linalg.svd(A)
    P = Vt[:, -1, :].reshape(-1, 3, 4)
    # Undo the point normalization: P_world = P_norm @ T3.
    T3 = np.zeros((len(X), 4, 4))
    T3[:, 0, 0] = T3[:, 1, 1] = T3[:, 2, 2] = s
    T3[:, :3, 3] = -s[:, None] * c[:, 0, :]
    T3[:, 3, 3] = 1.0
    P = P @ T3
    M = P[:, :, :3]
    sign = np.sign(np.linalg.det(M))
    sign[sign == 0] = 1.0
    P = P * sign[:, None, None]
    U, S, Vt = np.linalg.svd(P[:, :, :3])
    D = np.ones((len(X), 3))
    D[:, 2] = np.sign(np.linalg.det(U @ Vt))
    R = U @ (D[:, :, None] * Vt)
    scale = S.mean(axis=1)
    t = P[:, :, 3] / np.maximum(scale, 1e-300)[:, None]
    return R, t


def refine_pose(pixels, points, intrinsics: CameraIntrinsics, pose: Pose,
                iterations: int = 15) -> Pose:
    """Levenberg-Marquardt on reprojection error with points held fixed."""
    pixels = np.asarray(pixels, float).reshape(-1, 2)
    points = np.asarray(points, float).reshape(-1, 3)
    kp = intrinsics.params
    lam = 1e-4

    def cost_of(p):
        uv, z = project_batch(kp, p.R, p.t, points)
        return float(np.sum((uv - pixels) ** 2)) if np.all(z > 0) else np.inf

    cost = cost_of(pose)
    for _ in range(iterations):
        uv, z, Jc, _ = project_batch(kp, pose.R, pose.t, points, jacobians=True)
        r = (uv - pixels).reshape(-1)
        J = Jc.reshape(-1, 6)
        A = J.T @ J
        g = J.T @ r
        A_d = A + lam * np.diag(np.diag(A))
        try:
            delta = -np.linalg.solve(A_d, g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        cand = pose.retract(delta)
        new_cost = cost_of(cand)
        if new_cost < cost:
            rel = (cost - new_cost) / max(cost, 1e-300)
            pose, cost, lam = cand, new_cost, lam * 0.1
            if rel < 1e-12 or np.linalg.norm(delta) < 1e-14:
                break
        else:
            lam *= 10
            if lam > 1e12:
                break
    return pose


@dataclass
class PnPResult:
    pose: Pose
    inliers: np.ndarray
    iterations: int

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())


def pnp_ransac(pixels, points, intrinsics: CameraIntrinsics, threshold_px: float = 4.0,
               max_iters: int = 1000, min_inliers: int = 12, confidence: float = 0.999,
               seed: int = 0, batch: int = 64) -> PnPResult:
    """RANSAC over 6-point DLT hypotheses followed by LM refinement on inliers."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pixels)
    if n != len(points):
        raise InvalidArgumentError("pixel and point arrays differ in length")
    if n < 6:
        raise InsufficientDataError(f"need >= 6 2D-3D correspondences, got {n}")
    rng = np.random.default_rng(seed)
    xn = intrinsics.normalize(pixels)
    kp = intrinsics.params
    thr = threshold_px
    best_count, best_R, best_t = -1, None, None
    needed = max_iters
    done = 0
    while done < min(needed, max_iters):
        k = min(batch, max_iters - done)
        idx = _sample_indices(rng, n, 6, k)
        R, t = _dlt_pose_batch(xn[idx], points[idx])
        done += k
        Xc = np.einsum("kij,nj->kni", R, points) + t[:, None, :]
        z = Xc[..., 2]
        safe = np.where(z > 1e-12, z, 1e-12)
        u = kp[0] * Xc[..., 0] / safe + kp[2]
        v = kp[1] * Xc[..., 1] / safe + kp[3]
        err = np.hypot(u - pixels[:, 0], v - pixels[:, 1])
        inl = (err < thr) & (z > 0)
        counts = inl.sum(axis=1)
        counts[~np.all(np.isfinite(t), axis=1)] = -1
        b = int(np.argmax(counts))
        if counts[b] > best_count:
            best_count, best_R, best_t = int(counts[b]), R[b], t[b]
            w = best_count / n
            if w >= 1.0:
                needed = done
            elif w > 0:
                needed = int(np.ceil(np.log(1 - confidence) / np.log(1 - w**6)))
    if best_count < 6:
        raise RegistrationFailed(f"no PnP hypothesis with >= 6 inliers ({best_count})")
    pose = Pose.from_rt(best_R, best_t)
    inl = reprojection_errors(intrinsics, pose, points, pixels) < thr
    for _ in range(2):
        if inl.sum() < 6:
            break
        pose = refine_pose(pixels[inl], points[inl], intrinsics, pose)
        new_inl = reprojection_errors(intrinsics, pose, points, pixels) < thr
        if np.array_equal(new_inl, inl):
            break
        inl = new_inl
    if inl.sum() < min_inliers:
        raise RegistrationFailed(f"only {int(inl.sum())} PnP inliers (< {min_inliers})")
    return PnPResult(pose, inl, done)


# --------------------------------------------------------------------------
# Multi-view triangulation


def triangulate_dlt(poses, intrinsics, pixels) -> np.ndarray:
    """Linear triangulation of one point from any number of views."""
    rows = []
    for pose, intr, px in zip(poses, intrinsics, pixels):
        x = intr.normalize(px)[0]
        P = np.hstack([pose.R, pose.t[:, None]])
        rows.append(x[0] * P[2] - P[0])
        rows.append(x[1] * P[2] - P[1])
    A = np.asarray(rows)
    # Row scaling improves conditioning without changing the solution.
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    X = Vt[-1]
    if abs(X[3]) < 1e-300:
        raise TriangulationRejected("at_infinity", "point at infinity")
    return X[:3] / X[3]


def max_triangulation_angle(xyz, centers) -> float:
    """Largest angle (radians) between rays from `xyz` to the given centers."""
    d = np.asarray(centers, float) - np.asarray(xyz, float)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    cos = np.clip(d @ d.T, -1.0, 1.0)
    return float(np.arccos(cos.min()))


@dataclass
class TriangulationResult:
    xyz: np.ndarray
    inliers: np.ndarray

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())


def triangulate_multiview_ransac(observations, threshold_px: float = 4.0,
                                 min_angle_deg: float = 2.0, max_pairs: int = 45,
                                 seed: int = 0) -> TriangulationResult:
    """Robust point from (Pose, CameraIntrinsics, pixel) observations.

    Every view pair (or a seeded sample of `max_pairs`) yields a two-view
    hypothesis; support counts views with positive depth and reprojection
    below the threshold. The winner is re-estimated over its inliers.
    """
    obs = list(observations)
    n = len(obs)
    if n < 2:
        raise InsufficientDataError("need >= 2 observing rays")
    poses = [o[0] for o in obs]
    intrs = [o[1] for o in obs]
    pixels = np.array([np.asarray(o[2], float).reshape(2) for o in obs])
    kp = np.array([i.params for i in intrs])
    Rs = np.array([p.R for p in poses])
    ts = np.array([p.t for p in poses])

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(pairs), max_pairs, replace=False))
        pairs = [pairs[k] for k in pick]

    def support(X):
        uv, z = project_batch(kp, Rs, ts, np.broadcast_to(X, (n, 3)))
        err = np.linalg.norm(uv - pixels, axis=1)
        return (z > 0) & (err < threshold_px)

    best = None
    for i, j in pairs:
        try:
            X = triangulate_dlt([poses[i], poses[j]], [intrs[i], intrs[j]],
                                [pixels[i], pixels[j]])
        except TriangulationRejected:
            continue
        inl = support(X)
        if best is None or inl.sum() > best[1].sum():
            best = (X, inl)
            if inl.all():
                break
    if best is None or best[1].sum() < 2:
        raise TriangulationRejected("no_consensus", "no two views agree on a point")
    X, inl = best
    for _ in range(2):
        idx = np.nonzero(inl)[0]
        X_new = triangulate_dlt([poses[k] for k in idx], [intrs[k] for k in idx], pixels[idx])
        new_inl = support(X_new)
        if new_inl.sum() < 2 or new_inl.sum() < inl.sum():
            break
        X, same = X_new, np.array_equal(new_inl, inl)
        inl = new_inl
        if same:
            break
    centers = np.array([poses[k].center for k in np.nonzero(inl)[0]])
    if max_triangulation_angle(X, centers) < np.deg2rad(min_angle_deg):
        raise TriangulationRejected("shallow_angle",
                                    f"triangulation angle below {min_angle_deg} deg")
    return TriangulationResult(X, inl)


# --------------------------------------------------------------------------
# Similarity estimation


def is_degenerate_configuration(points, tol: float = 1e-8) -> bool:
    """True when the points are (nearly) collinear or coincident."""
    p = np.asarray(points, float).reshape(-1, 3)
    if len(p) < 3:
        return True
    ev = np.linalg.eigvalsh(np.cov((p - p.mean(axis=0)).T, bias=True))
    return ev[2] <= 0 or ev[1] / ev[2] < tol


def estimate_similarity_umeyama(src_points, dst_points,
                                degeneracy_tol: float = 1e-8) -> SimilarityTransform:
    """Closed-form least squares sim(3) with dst ~ s R src + t."""
    src = np.asarray(src_points, float).reshape(-1, 3)
    dst = np.asarray(dst_points, float).reshape(-1, 3)
    if len(src) != len(dst):
        raise InvalidArgumentError("point sets differ in size")
    if len(src) < 3:
        raise InsufficientDataError("need >= 3 point pairs")
    if is_degenerate_configuration(src, degeneracy_tol) or \
            is_degenerate_configuration(dst, degeneracy_tol):
        raise DegenerateSampleError("collinear or coincident points")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    sc, dc = src - mu_s, dst - mu_d
    cov = dc.T @ sc / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_s = (sc**2).sum() / len(src)
    scale = float(np.trace(np.diag(D) @ S) / var_s)
    if not scale > 0:
        raise DegenerateSampleError("non-positive scale")
    t = mu_d - scale * R @ mu_s
    return SimilarityTransform.from_srt(scale, R, t)
