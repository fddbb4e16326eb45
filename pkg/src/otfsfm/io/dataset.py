"""On-disk datasets: a packet stream plus an optional ground-truth sidecar.

A dataset is a directory holding

    frames.bin        frame messages in wire format, back to back
    manifest.json     {"format": "otfsfm-dataset", "version": 1,
                       "records": [{"offset", "length", "agent_id",
                                    "frame_id", "timestamp"}, ...]}
    groundtruth.json  scene spec, true poses, visible point ids, points

The engine never needs the sidecar; it only exists for evaluation.
"""
from __future__ import annotations

import json
import queue
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import DatasetError, ProtocolError
from ..geometry import CameraIntrinsics, Pose
from ..synthstream import AgentSpec, SceneSpec, SyntheticScene
from .wire import MSG_FRAME, decode_message, encode_frame

FORMAT = "otfsfm-dataset"
VERSION = 1
FRAMES = "frames.bin"
MANIFEST = "manifest.json"
SIDECAR = "groundtruth.json"


def write_dataset(path, packets, scene: SyntheticScene | None = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    offset = 0
    with open(root / FRAMES, "wb") as fh:
        for p in packets:
            data = encode_frame(p)
            fh.write(data)
            records.append({"offset": offset, "length": len(data), "agent_id": int(p.agent_id),
                            "frame_id": int(p.frame_id), "timestamp": float(p.timestamp)})
            offset += len(data)
    manifest = {"format": FORMAT, "version": VERSION, "records": records}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1))
    if scene is not None:
        (root / SIDECAR).write_text(json.dumps(sidecar_dict(scene)))
    return root


def read_manifest(path) -> dict:
    try:
        manifest = json.loads((Path(path) / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read manifest: {exc}") from exc
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise DatasetError("not a version 1 dataset manifest")
    return manifest


def iter_packets(path, order: str = "manifest"):
    """Yield FramePackets; `order` is "manifest" or "timestamp".

    Timestamp order interleaves agents, breaking ties by frame id. Any
    missing, truncated or undecodable record raises DatasetError carrying its
    manifest index.
    """
    root = Path(path)
    records = read_manifest(root)["records"]
    idx = list(range(len(records)))
    if order == "timestamp":
        idx.sort(key=lambda i: (records[i]["timestamp"], records[i]["frame_id"]))
    elif order != "manifest":
        raise ValueError(f"unknown order {order!r}")
    try:
        fh = open(root / FRAMES, "rb")
    except OSError as exc:
        raise DatasetError(f"cannot open frame file: {exc}", 0) from exc
    with fh:
        for i in idx:
            r = records[i]
            fh.seek(r["offset"])
            data = fh.read(r["length"])
            if len(data) != r["length"]:
                raise DatasetError(f"record {i} truncated", i)
            try:
                msg_type, packet, used = decode_message(data)
            except ProtocolError as exc:
                raise DatasetError(f"record {i} corrupt: {exc}", i) from exc
            if msg_type != MSG_FRAME or used != len(data) or packet.frame_id != r["frame_id"]:
                raise DatasetError(f"record {i} does not match the manifest", i)
            yield packet


def read_packets(path, order: str = "manifest") -> list:
    return list(iter_packets(path, order))


@dataclass
class ReplayReport:
    n_packets: int
    elapsed: float
    frame_ids: list


def replay(path, sink, cadence: float = 0.0, order: str = "manifest") -> ReplayReport:
    """Push packets into `sink` (a queue or a callable) with `cadence` s spacing."""
    put = sink.put if isinstance(sink, queue.Queue) else sink
    t0 = time.perf_counter()
    ids = []
    for k, p in enumerate(iter_packets(path, order)):
        if cadence > 0 and k:
            time.sleep(cadence)
        put(p)
        ids.append(p.frame_id)
    return ReplayReport(len(ids), time.perf_counter() - t0, ids)


# --------------------------------------------------------------------------
# Ground-truth sidecar


def spec_to_dict(spec: SceneSpec) -> dict:
    return asdict(spec)


def spec_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    agents = []
    for a in d.pop("agents", []):
        a = dict(a)
        if "intrinsics" in a:
            a["intrinsics"] = CameraIntrinsics(**a["intrinsics"])
        agents.append(AgentSpec(**a))
    spec = SceneSpec(agents=agents or [AgentSpec(150)], **d)
    spec.validate()
    return spec


def sidecar_dict(scene: SyntheticScene) -> dict:
    frames = [{"image_id": int(f.image_id), "agent_id": int(f.agent_id), "index": int(f.index),
               "timestamp": float(f.timestamp),
               "rotation": [float(v) for v in f.pose.rotation],
               "translation": [float(v) for v in f.pose.translation],
               "intrinsics": asdict(f.intrinsics),
               "visible": [int(v) for v in f.visible]} for f in scene.frames]
    return {"format": "otfsfm-groundtruth", "version": 1, "spec": spec_to_dict(scene.spec),
            "points": scene.points.tolist(), "normals": scene.normals.tolist(),
            "frames": frames}


@dataclass
class GroundTruth:
    poses: dict       # image id -> Pose
    agents: dict      # image id -> agent id
    visible: dict     # image id -> sorted point ids
    points: np.ndarray
    spec: dict

    def shared_counts(self) -> np.ndarray:
        ids = sorted(self.visible)
        vis = np.zeros((len(ids), len(self.points)), dtype=np.int32)
        for row, i in enumerate(ids):
            vis[row, self.visible[i]] = 1
        return vis @ vis.T


def read_sidecar(path) -> GroundTruth:
    p = Path(path)
    if p.is_dir():
        p = p / SIDECAR
    try:
        d = json.loads(p.read_text())
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read ground truth: {exc}") from exc
    poses, agents, visible = {}, {}, {}
    for f in d["frames"]:
        i = f["image_id"]
        poses[i] = Pose(np.array(f["rotation"]), np.array(f["translation"]))
        agents[i] = f["agent_id"]
        visible[i] = np.asarray(f["visible"], dtype=np.int64)
    return GroundTruth(poses, agents, visible, np.asarray(d["points"], dtype=float), d["spec"])


def scene_from_sidecar(path) -> SyntheticScene:
    """Rebuild the SyntheticScene a sidecar was written from."""
    from ..synthstream import FrameTruth

    p = Path(path)
    d = json.loads((p / SIDECAR if p.is_dir() else p).read_text())
    frames = [FrameTruth(f["image_id"], f["agent_id"], f["index"], f["timestamp"],
                         Pose(np.array(f["rotation"]), np.array(f["translation"])),
                         CameraIntrinsics(**f["intrinsics"]),
                         np.asarray(f["visible"], dtype=np.int64)) for f in d["frames"]]
    return SyntheticScene(spec_from_dict(d["spec"]), np.asarray(d["points"], dtype=float),
                          np.asarray(d["normals"], dtype=float), frames)
