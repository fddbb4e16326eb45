"""Synthetic worlds with exact ground truth, and the packet streams they emit.

A scene is a cluster of box-shaped buildings surrounded by a ring of clutter,
normalized to a diameter of 100 units. Every point carries a surface normal
and is visible only from its front side, within the camera frustum and a
maximum range. Agents orbit the scene on circular arcs looking inwards.

Global descriptors are a visibility embedding: each point id owns a fixed
random +-1 vector and an image's descriptor is the normalized sum over the
points it sees, so shared visibility means small descriptor distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError, SceneSpecError
from .geometry import CameraIntrinsics, Pose, project_batch
from .packet import SENTINEL_ID, FramePacket
from .retrieval import GlobalDescriptor

SCENE_RADIUS = 50.0
TRUE_OVERLAP_MIN_SHARED = 50


@dataclass
class AgentSpec:
    """Circular arc from `start_deg` to `end_deg` (may exceed 360)."""

    n_frames: int
    start_deg: float = 0.0
    end_deg: float = 360.0
    radius: float = 45.0
    height: float = 5.0
    start_time: float = 0.0
    period: float = 2.5
    look_jitter: float = 1.0
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480))


@dataclass
class SceneSpec:
    agents: list = field(default_factory=lambda: [AgentSpec(150)])
    n_buildings: int = 5
    n_facade_points: int = 1200
    n_clutter_points: int = 600
    building_zone: float = 12.0
    clutter_inner: float = 20.0
    clutter_outer: float = 32.0
    max_range: float = 60.0
    max_view_angle_deg: float = 55.0
    image_margin: float = 4.0
    sigma_px: float = 0.5
    outlier_fraction: float = 0.1
    descriptor_dim: int = 256
    descriptor_jitter: float = 0.02
    keypoint_descriptor_dim: int = 0
    min_visible: int = 20
    seed: int = 0

    def validate(self):
        if not self.agents:
            raise SceneSpecError("at least one agent required")
        if min(self.n_buildings, self.descriptor_dim) <= 0:
            raise SceneSpecError("counts must be positive")
        if self.n_facade_points + self.n_clutter_points <= 0:
            raise SceneSpecError("scene has no points")
        if not (0 <= self.outlier_fraction < 1) or self.sigma_px < 0:
            raise SceneSpecError("invalid noise model")
        for a in self.agents:
            if a.n_frames <= 0:
                raise SceneSpecError("agent with no frames")
            if a.radius > SCENE_RADIUS:
                raise SceneSpecError("trajectory leaves the scene bounds")
            if a.radius <= self.clutter_outer + 1.0:
                raise SceneSpecError("camera inside scene geometry")


@dataclass(frozen=True)
class FrameTruth:
    image_id: int
    agent_id: int
    index: int
    timestamp: float
    pose: Pose
    intrinsics: CameraIntrinsics
    visible: np.ndarray  # sorted point ids


@dataclass
class SyntheticScene:
    spec: SceneSpec
    points: np.ndarray
    normals: np.ndarray
    frames: list  # FrameTruth ordered by image_id (= arrival order)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def frame(self, image_id: int) -> FrameTruth:
        return self.frames[image_id]

    def frames_of(self, agent_id: int) -> list:
        return [f for f in self.frames if f.agent_id == agent_id]

    def visibility_matrix(self) -> np.ndarray:
        vis = np.zeros((len(self.frames), self.n_points), dtype=bool)
        for f in self.frames:
            vis[f.image_id, f.visible] = True
        return vis


# --------------------------------------------------------------------------
# Scene construction


def _facade_points(rng, spec: SceneSpec):
    boxes = []
    for _ in range(spec.n_buildings):
        r = spec.building_zone * math.sqrt(rng.random())
        a = rng.uniform(0, 2 * math.pi)
        boxes.append((r * math.cos(a), r * math.sin(a), rng.uniform(3, 6), rng.uniform(3, 6),
                      rng.uniform(8, 20), rng.uniform(0, math.pi)))
    # Wall areas decide how many points each wall receives.
    walls = []
    for cx, cy, hx, hy, h, yaw in boxes:
        c, s = math.cos(yaw), math.sin(yaw)
        ax, ay = np.array([c, s]), np.array([-s, c])
        for sign in (1, -1):
            walls.append((np.array([cx, cy]) + sign * hx * ax, sign * ax, ay, hy, h))
            walls.append((np.array([cx, cy]) + sign * hy * ay, sign * ay, ax, hx, h))
    areas = np.array([2 * w[3] * w[4] for w in walls])
    counts = rng.multinomial(spec.n_facade_points, areas / areas.sum())
    pts, nrm = [], []
    for (center, normal, tangent, half, h), k in zip(walls, counts):
        u = rng.uniform(-half, half, k)
        z = rng.uniform(0, h, k)
        xy = center + u[:, None] * tangent
        pts.append(np.column_stack([xy, z]))
        nrm.append(np.tile([normal[0], normal[1], 0.0], (k, 1)))
    return np.vstack(pts), np.vstack(nrm)


def _clutter_points(rng, spec: SceneSpec):
    k = spec.n_clutter_points
    r = np.sqrt(rng.uniform(spec.clutter_inner**2, spec.clutter_outer**2, k))
    a = rng.uniform(0, 2 * math.pi, k)
    z = rng.uniform(0, 6, k)
    pts = np.column_stack([r * np.cos(a), r * np.sin(a), z])
    # Outward-facing with a random tilt: visible from the orbit side only.
    n = np.column_stack([np.cos(a), np.sin(a), np.zeros(k)]) + rng.normal(0, 0.3, (k, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return pts, n


def visible_points(points, normals, pose: Pose, intr: CameraIntrinsics, max_range: float,
                   max_view_angle_deg: float = 55.0, margin: float = 4.0) -> np.ndarray:
    """Sorted ids of points inside the frustum, within range and front-facing."""
    uv, z = project_batch(intr.params, pose.R, pose.t, points)
    to_cam = pose.center - points
    dist = np.linalg.norm(to_cam, axis=1)
    facing = np.sum(normals * to_cam, axis=1) / np.maximum(dist, 1e-12)
    ok = ((z > 0.5) & (dist <= max_range)
          & (facing >= math.cos(math.radians(max_view_angle_deg)))
          & (uv[:, 0] >= margin) & (uv[:, 0] <= intr.width - margin)
          & (uv[:, 1] >= margin) & (uv[:, 1] <= intr.height - margin))
    return np.nonzero(ok)[0]


def orbit_pose(theta_deg: float, radius: float, height: float, target=(0.0, 0.0, 6.0)) -> Pose:
    th = math.radians(theta_deg)
    center = np.array([radius * math.cos(th), radius * math.sin(th), height])
    return Pose.look_at(center, np.asarray(target, dtype=float))


def generate(spec: SceneSpec) -> SyntheticScene:
    """Deterministic scene and agent trajectories for `spec`."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    fp, fn = _facade_points(rng, spec)
    cp, cn = _clutter_points(rng, spec)
    points = np.vstack([fp, cp])
    normals = np.vstack([fn, cn])

    raw = []
    for agent_id, a in enumerate(spec.agents):
        arng = np.random.default_rng([spec.seed, 1000 + agent_id])
        angles = np.linspace(a.start_deg, a.end_deg, a.n_frames, endpoint=False)
        for k, th in enumerate(angles):
            target = np.array([0.0, 0.0, 6.0]) + arng.normal(0, a.look_jitter, 3)
            h = a.height + arng.normal(0, 0.3)
            pose = orbit_pose(th, a.radius, h, target)
            raw.append((a.start_time + k * a.period, agent_id, k, pose, a.intrinsics))
    raw.sort(key=lambda r: (r[0], r[1], r[2]))

    frames = []
    for image_id, (ts, agent_id, k, pose, intr) in enumerate(raw):
        vis = visible_points(points, normals, pose, intr, spec.max_range,
                             spec.max_view_angle_deg, spec.image_margin)
        if len(vis) < spec.min_visible:
            raise SceneSpecError(
                f"agent {agent_id} frame {k} sees only {len(vis)} points")
        frames.append(FrameTruth(image_id, agent_id, k, float(ts), pose, intr, vis))
    return SyntheticScene(spec, points, normals, frames)


# --------------------------------------------------------------------------
# Descriptors


@lru_cache(maxsize=8)
def _basis(n_ids: int, dim: int, seed: int) -> np.ndarray:
    """+-1 row per point id; row i depends only on (seed, i, dim)."""
    out = np.empty((n_ids, dim))
    for i in range(n_ids):
        out[i] = np.random.default_rng([seed, 7919, i]).integers(0, 2, dim) * 2.0 - 1.0
    out.setflags(write=False)
    return out


def _id_vectors(ids: np.ndarray, dim: int, seed: int) -> np.ndarray:
    top = int(ids.max()) + 1
    # Grow the cached basis in powers of two so repeated calls share it.
    size = 1 << max(10, (top - 1).bit_length())
    return _basis(size, dim, seed)[ids]


def make_descriptor(visible_ids, dim: int = 256, seed: int = 0, jitter: float = 0.0,
                    rng: np.random.Generator | None = None,
                    image_id=None) -> GlobalDescriptor:
    """Visibility embedding: normalized sum of per-id sign vectors plus jitter."""
    ids = np.unique(np.asarray(visible_ids, dtype=np.int64).ravel())
    if ids.size == 0:
        raise InvalidArgumentError("visible set must be non-empty")
    if ids[0] < 0:
        raise InvalidArgumentError("point ids must be non-negative")
    v = _id_vectors(ids, dim, seed).sum(axis=0)
    v = v / np.linalg.norm(v)
    if jitter > 0:
        g = (rng or np.random.default_rng()).normal(0, 1, dim)
        v = v + jitter * g / math.sqrt(dim)
    return GlobalDescriptor(v, image_id)


# --------------------------------------------------------------------------
# Overlap ground truth


@dataclass
class OverlapOracle:
    shared: np.ndarray  # (n, n) counts of co-visible points
    sizes: np.ndarray

    @classmethod
    def from_scene(cls, scene: SyntheticScene) -> "OverlapOracle":
        vis = scene.visibility_matrix().astype(np.int32)
        return cls(vis @ vis.T, vis.sum(axis=1))

    def n_shared(self, a: int, b: int) -> int:
        return int(self.shared[a, b])

    def jaccard(self, a: int, b: int) -> float:
        inter = self.shared[a, b]
        return float(inter / (self.sizes[a] + self.sizes[b] - inter))

    def true_overlap(self, a: int, b: int) -> bool:
        return a != b and self.shared[a, b] > TRUE_OVERLAP_MIN_SHARED

    def overlapping(self, a: int) -> set:
        row = self.shared[a] > TRUE_OVERLAP_MIN_SHARED
        row[a] = False
        return set(np.nonzero(row)[0].tolist())


# --------------------------------------------------------------------------
# Packet stream


def render_packet(scene: SyntheticScene, frame: FrameTruth,
                  rng: np.random.Generator) -> FramePacket:
    spec = scene.spec
    ids = frame.visible
    intr = frame.intrinsics
    uv, _ = project_batch(intr.params, frame.pose.R, frame.pose.t, scene.points[ids])
    if spec.sigma_px > 0:
        uv = uv + rng.normal(0, spec.sigma_px, uv.shape)
    oracle = ids.astype(np.int64).copy()
    out = rng.random(len(ids)) < spec.outlier_fraction
    n_out = int(out.sum())
    if n_out:
        uv[out] = np.column_stack([rng.uniform(0, intr.width, n_out),
                                   rng.uniform(0, intr.height, n_out)])
        oracle[out] = SENTINEL_ID
    uv[:, 0] = np.clip(uv[:, 0], 0, intr.width)
    uv[:, 1] = np.clip(uv[:, 1], 0, intr.height)
    order = rng.permutation(len(ids))
    kdesc = None
    if spec.keypoint_descriptor_dim > 0:
        base = _id_vectors(ids, spec.keypoint_descriptor_dim, spec.seed + 1)
        kdesc = base + rng.normal(0, 0.3, base.shape)
        kdesc[out] = rng.normal(0, 1, (n_out, spec.keypoint_descriptor_dim))
        kdesc = kdesc[order]
    desc = make_descriptor(ids, spec.descriptor_dim, spec.seed, spec.descriptor_jitter,
                           rng, frame.image_id)
    return FramePacket(frame.agent_id, frame.image_id, frame.timestamp, intr,
                       uv[order], desc.values, oracle[order], kdesc)


def render_packets(scene: SyntheticScene) -> list:
    """All frames as packets in arrival (timestamp) order. Deterministic."""
    out = []
    for f in scene.frames:
        rng = np.random.default_rng([scene.spec.seed, 31337, f.image_id])
        out.append(render_packet(scene, f, rng))
    return out


def random_views(scene: SyntheticScene, n: int, seed: int = 0, radius=(38.0, 48.0),
                 height=(2.0, 9.0)) -> list:
    """Visible-id sets for `n` random orbit views (for retrieval experiments)."""
    rng = np.random.default_rng(seed)
    out = []
    spec = scene.spec
    intr = spec.agents[0].intrinsics
    while len(out) < n:
        pose = orbit_pose(rng.uniform(0, 360), rng.uniform(*radius), rng.uniform(*height),
                          np.array([0.0, 0.0, 6.0]) + rng.normal(0, 3.0, 3))
        vis = visible_points(scene.points, scene.normals, pose, intr, spec.max_range,
                             spec.max_view_angle_deg, spec.image_margin)
        if len(vis) >= spec.min_visible:
            out.append(vis)
    return out


def descriptor_set(n: int, dim: int = 256, seed: int = 0, jitter: float = 0.02) -> np.ndarray:
    """(n, dim) unit descriptors from random views of a default scene."""
    scene = generate(SceneSpec(agents=[AgentSpec(4)], seed=seed))
    views = random_views(scene, n, seed)
    rng = np.random.default_rng([seed, 99])
    return np.stack([make_descriptor(v, dim, seed, jitter, rng).values for v in views])


def two_agent_spec(frames_a: int = 60, frames_b: int = 80, seed: int = 0, **kw) -> SceneSpec:
    """Agent 0 sweeps 0-120 deg; agent 1 starts opposite and sweeps round onto
    agent 0's early arc, so the two only overlap late in the stream."""
    period_b = 2.5 * frames_a / frames_b
    agents = [AgentSpec(frames_a, 0.0, 120.0, period=2.5),
              AgentSpec(frames_b, 180.0, 400.0, period=period_b, start_time=0.1)]
    return SceneSpec(agents=agents, seed=seed, **kw)
