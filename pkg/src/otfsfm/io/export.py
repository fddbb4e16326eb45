"""Three-section text export of a reconstruction.

Layout (version 1), one record per line, fields separated by single spaces:

    # otfsfm export v1
    [cameras]
    <camera_id> <fx> <fy> <cx> <cy> <width> <height>
    [images]
    <image_id> <camera_id> <qw> <qx> <qy> <qz> <tx> <ty> <tz> <submap_id>
    [points]
    <point_id> <x> <y> <z> <image_id>:<keypoint_index> ...

The camera id is the agent id (one intrinsics block per agent). Poses map
world to camera. Reals are written with '%.17g' so parsing returns the exact
float64 that was written. Records are sorted by id and track entries by
image id, which makes the text a deterministic function of the content.
Lines starting with '#' and blank lines are ignored on import.
"""
from __future__ import annotations

import io as _io
from pathlib import Path

import numpy as np

from ..engine import ImageRecord, PointRecord, Reconstruction
from ..errors import DatasetError
from ..geometry import CameraIntrinsics, Pose, reprojection_errors

HEADER = "# otfsfm export v1"
SECTIONS = ("cameras", "images", "points")


def _g(x) -> str:
    return "%.17g" % float(x)


def dumps(rec: Reconstruction) -> str:
    out = [HEADER, "[cameras]"]
    for cid in sorted(rec.cameras):
        c = rec.cameras[cid]
        out.append(" ".join([str(int(cid)), _g(c.fx), _g(c.fy), _g(c.cx), _g(c.cy),
                             str(int(c.width)), str(int(c.height))]))
    out.append("[images]")
    for iid in sorted(rec.images):
        r = rec.images[iid]
        vals = [_g(v) for v in r.pose.rotation] + [_g(v) for v in r.pose.translation]
        out.append(" ".join([str(int(iid)), str(int(r.agent_id)), *vals, str(int(r.submap_id))]))
    out.append("[points]")
    for pid in sorted(rec.points):
        p = rec.points[pid]
        track = [f"{int(i)}:{int(k)}" for i, k in sorted(p.observations.items())]
        out.append(" ".join([str(int(pid)), *[_g(v) for v in p.xyz], *track]))
    return "\n".join(out) + "\n"


def loads(text: str) -> Reconstruction:
    """Parse an export; raises DatasetError naming the offending line."""
    rec = Reconstruction()
    section = None
    for lineno, raw in enumerate(_io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section not in SECTIONS:
                raise DatasetError(f"line {lineno}: unknown section {section!r}", lineno)
            continue
        f = line.split()
        try:
            if section == "cameras":
                if len(f) != 7:
                    raise ValueError("camera record needs 7 fields")
                rec.cameras[int(f[0])] = CameraIntrinsics(float(f[1]), float(f[2]), float(f[3]),
                                                          float(f[4]), int(f[5]), int(f[6]))
            elif section == "images":
                if len(f) != 10:
                    raise ValueError("image record needs 10 fields")
                q = np.array([float(v) for v in f[2:6]])
                t = np.array([float(v) for v in f[6:9]])
                iid = int(f[0])
                if iid in rec.images:
                    raise ValueError(f"duplicate image {iid}")
                rec.images[iid] = ImageRecord(int(f[1]), Pose(q, t), int(f[9]))
            elif section == "points":
                if len(f) < 4:
                    raise ValueError("point record needs at least 4 fields")
                obs = {}
                for item in f[4:]:
                    i, k = item.split(":")
                    obs[int(i)] = int(k)
                pid = int(f[0])
                if pid in rec.points:
                    raise ValueError(f"duplicate point {pid}")
                rec.points[pid] = PointRecord(np.array([float(v) for v in f[1:4]]), obs)
            else:
                raise ValueError("record outside any section")
        except (ValueError, TypeError) as exc:
            raise DatasetError(f"line {lineno}: {exc}", lineno) from exc
    check_references(rec)
    return rec


def check_references(rec: Reconstruction):
    for iid, r in rec.images.items():
        if r.agent_id not in rec.cameras:
            raise DatasetError(f"image {iid} references unknown camera {r.agent_id}")
    for pid, p in rec.points.items():
        for iid in p.observations:
            if iid not in rec.images:
                raise DatasetError(f"point {pid} references unknown image {iid}")


def write(rec: Reconstruction, path):
    Path(path).write_text(dumps(rec))


def read(path) -> Reconstruction:
    return loads(Path(path).read_text())


def residuals(rec: Reconstruction, keypoints: dict) -> np.ndarray:
    """Per-observation reprojection errors in (point id, image id) order.

    `keypoints` maps image id to its (n, 2) keypoint array.
    """
    out = []
    for pid in sorted(rec.points):
        p = rec.points[pid]
        for iid in sorted(p.observations):
            img = rec.images[iid]
            px = np.asarray(keypoints[iid], dtype=float)[p.observations[iid]]
            out.append(reprojection_errors(rec.cameras[img.agent_id], img.pose, p.xyz[None],
                                           px[None])[0])
    return np.asarray(out, dtype=float)
