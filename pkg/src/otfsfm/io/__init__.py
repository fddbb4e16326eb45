"""Ingest, persistence, export and evaluation."""
from . import dataset, export, metrics, server, snapshot, wire
from .dataset import (GroundTruth, ReplayReport, iter_packets, read_packets, read_sidecar,
                      replay, write_dataset)
from .export import dumps as export_text
from .export import loads as import_text
from .metrics import MetricsReport, evaluate, retrieval_precision_recall
from .server import AgentClient, IngestServer, send_packets, serve
from .wire import decode_message, encode_frame, encode_message, read_message

__all__ = [
    "dataset", "export", "metrics", "server", "snapshot", "wire",
    "GroundTruth", "ReplayReport", "iter_packets", "read_packets", "read_sidecar", "replay",
    "write_dataset", "export_text", "import_text", "MetricsReport", "evaluate",
    "retrieval_precision_recall", "AgentClient", "IngestServer", "send_packets", "serve",
    "decode_message", "encode_frame", "encode_message", "read_message",
]
