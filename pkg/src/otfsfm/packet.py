"""The unit of ingest: one image's keypoints and global descriptor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import CameraIntrinsics
from .retrieval import GlobalDescriptor

SENTINEL_ID = -1


@dataclass(eq=False)
class FramePacket:
    """A fly-in image as the engine sees it.

    `frame_id` doubles as the image id and must be unique across agents.
    Keypoints and descriptors are float32 because that is what travels on the
    wire. `oracle_ids` carries ground-truth point ids (SENTINEL_ID for
    outliers) in synthetic runs only.
    """

    agent_id: int
    frame_id: int
    timestamp: float
    intrinsics: CameraIntrinsics
    keypoints: np.ndarray
    descriptor: np.ndarray
    oracle_ids: np.ndarray | None = None
    keypoint_descriptors: np.ndarray | None = None

    def __post_init__(self):
        self.keypoints = np.ascontiguousarray(self.keypoints, dtype=np.float32).reshape(-1, 2)
        self.descriptor = np.ascontiguousarray(self.descriptor, dtype=np.float32).reshape(-1)
        if self.oracle_ids is not None:
            self.oracle_ids = np.ascontiguousarray(self.oracle_ids, dtype=np.int64).reshape(-1)
        if self.keypoint_descriptors is not None:
            kd = np.ascontiguousarray(self.keypoint_descriptors, dtype=np.float32)
            if kd.ndim != 2:
                if len(self.keypoints) == 0:
                    raise InvalidArgumentError("keypoint descriptors need a 2-d shape")
                kd = kd.reshape(len(self.keypoints), -1)
            self.keypoint_descriptors = kd

    @property
    def image_id(self) -> int:
        return self.frame_id

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoints)

    def global_descriptor(self) -> GlobalDescriptor:
        return GlobalDescriptor(self.descriptor.astype(np.float64), self.frame_id)

    def validate(self, dim: int | None = None, margin: float = 0.5):
        """Raise InvalidArgumentError if the packet cannot be processed."""
        if dim is not None and self.descriptor.shape[0] != dim:
            raise InvalidArgumentError(
                f"frame {self.frame_id}: descriptor dimension {self.descriptor.shape[0]} != {dim}")
        if not np.all(np.isfinite(self.descriptor)) or not np.any(self.descriptor):
            raise InvalidArgumentError(f"frame {self.frame_id}: descriptor not finite/non-zero")
        kp = self.keypoints
        if not np.all(np.isfinite(kp)):
            raise InvalidArgumentError(f"frame {self.frame_id}: non-finite keypoint")
        w, h = self.intrinsics.width, self.intrinsics.height
        if len(kp) and (kp[:, 0].min() < -margin or kp[:, 1].min() < -margin
                        or kp[:, 0].max() > w + margin or kp[:, 1].max() > h + margin):
            raise InvalidArgumentError(f"frame {self.frame_id}: keypoint outside image")
        if self.oracle_ids is not None and len(self.oracle_ids) != len(kp):
            raise InvalidArgumentError(f"frame {self.frame_id}: oracle block length mismatch")
        kd = self.keypoint_descriptors
        if kd is not None and len(kd) != len(kp):
            raise InvalidArgumentError(f"frame {self.frame_id}: descriptor block length mismatch")

    def identical(self, other: "FramePacket") -> bool:
        """Bitwise equality of every field."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        return (self.agent_id == other.agent_id and self.frame_id == other.frame_id
                and np.float64(self.timestamp).tobytes() == np.float64(other.timestamp).tobytes()
                and self.intrinsics == other.intrinsics
                and same(self.keypoints, other.keypoints)
                and same(self.descriptor, other.descriptor)
                and same(self.oracle_ids, other.oracle_ids)
                and same(self.keypoint_descriptors, other.keypoint_descriptors))
