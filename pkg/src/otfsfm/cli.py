"""Command line entry point: gen, replay, serve, eval, bench-retrieval.

Configuration comes from one JSON file with optional "scene" and "engine"
objects; `--set section.key=value` overrides single fields (values are
parsed as JSON, falling back to plain strings).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import queue
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .engine import Engine, EngineConfig
from .errors import OtfSfmError
from .io import dataset, export, metrics
from .io.server import IngestServer
from .retrieval import HnswIndex, HnswParams
from .submap import MergeConfig
from .synthstream import descriptor_set, generate, render_packets, two_agent_spec

log = logging.getLogger("otfsfm")


def load_config(path, overrides) -> dict:
    cfg = json.loads(Path(path).read_text()) if path else {}
    for item in overrides or []:
        key, _, raw = item.partition("=")
        if not _:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return cfg


def engine_config(d: dict | None) -> EngineConfig:
    d = dict(d or {})
    known = {f.name for f in fields(EngineConfig)}
    unknown = set(d) - known
    if unknown:
        raise SystemExit(f"unknown engine options: {sorted(unknown)}")
    if "hnsw" in d:
        d["hnsw"] = HnswParams(**d["hnsw"])
    if "merge" in d:
        d["merge"] = MergeConfig(**d["merge"])
    return EngineConfig(**d)


def scene_spec(d: dict | None, preset: str):
    d = dict(d or {})
    if preset == "two-agent":
        frames = d.pop("frames", [60, 80])
        return two_agent_spec(frames[0], frames[1], **d)
    return dataset.spec_from_dict(d)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, default=_json_default))


# --------------------------------------------------------------------------
# commands


def cmd_gen(args, cfg):
    spec = scene_spec(cfg.get("scene"), args.preset)
    if args.seed is not None:
        spec.seed = args.seed
    print(f"seed {spec.seed}")
    scene = generate(spec)
    packets = render_packets(scene)
    dataset.write_dataset(args.out, packets, scene)
    print(f"wrote {len(packets)} frames from {len(spec.agents)} agent(s) to {args.out}")


def _write_outputs(out, engine, rec, report, sidecar):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    export.write(rec, out / "reconstruction.txt")
    _dump_json(out / "report.json", report.to_dict())
    with open(out / "frames.jsonl", "w") as fh:
        for r in engine.records:
            fh.write(json.dumps(r.to_dict(), default=_json_default) + "\n")
    summary = {k: v for k, v in report.to_dict().items()
               if k not in ("submap_timeline", "merge_events")}
    if sidecar is not None:
        try:
            m = metrics.evaluate(rec, sidecar.poses, engine.keypoints)
            summary.update({"eval_" + k: v for k, v in m.to_dict().items() if k != "alignments"})
            cands = {r.image_id: r.candidates for r in engine.records}
            # Shared counts are indexed by image id, which synthetic sets number 0..n-1.
            if sorted(sidecar.visible) == list(range(len(sidecar.visible))):
                p, r = metrics.retrieval_precision_recall(
                    cands, sidecar.shared_counts(), engine.config.top_n,
                    order=[r.image_id for r in engine.records])
                summary["retrieval_precision"], summary["retrieval_recall"] = p, r
        except OtfSfmError as exc:
            summary["eval_error"] = str(exc)
        _dump_json(out / "metrics.json", summary)
    return summary


def cmd_replay(args, cfg):
    conf = engine_config(cfg.get("engine"))
    if args.seed is not None:
        conf.seed = args.seed
    print(f"seed {conf.seed}")
    engine = Engine(conf)
    q: queue.Queue = queue.Queue()
    rep = dataset.replay(args.dataset, q, args.cadence, args.order)
    while not q.empty():
        r = engine.process_frame(q.get())
        if args.verbose:
            print(f"frame {r.image_id} agent {r.agent_id} {r.status} submaps {r.n_submaps} "
                  f"{r.wall_time:.3f}s")
    rec, report = engine.finalize()
    sidecar = None
    if (Path(args.dataset) / dataset.SIDECAR).exists():
        sidecar = dataset.read_sidecar(args.dataset)
    summary = _write_outputs(args.out, engine, rec, report, sidecar)
    print(f"replayed {rep.n_packets} frames")
    print(json.dumps(summary, indent=1, default=_json_default))


def cmd_serve(args, cfg):
    conf = engine_config(cfg.get("engine"))
    if args.seed is not None:
        conf.seed = args.seed
    print(f"seed {conf.seed}")
    engine = Engine(conf)
    with IngestServer((args.host, args.port), args.queue_size) as srv:
        host, port = srv.address[:2]
        print(f"listening on {host}:{port}", flush=True)
        n = 0
        while args.max_frames is None or n < args.max_frames:
            try:
                packet = srv.queue.get(timeout=args.idle_timeout)
            except queue.Empty:
                break
            r = engine.process_frame(packet)
            n += 1
            print(f"frame {r.image_id} agent {r.agent_id} {r.status} {r.wall_time:.3f}s",
                  flush=True)
    rec, report = engine.finalize()
    summary = _write_outputs(args.out, engine, rec, report, None)
    print(json.dumps(summary, indent=1, default=_json_default))


def cmd_eval(args, cfg):
    rec = export.read(args.export)
    gt = dataset.read_sidecar(args.groundtruth)
    kps = None
    if args.dataset:
        kps = {p.frame_id: p.keypoints.astype(np.float64)
               for p in dataset.iter_packets(args.dataset)}
    m = metrics.evaluate(rec, gt.poses, kps)
    print(json.dumps(m.to_dict(), indent=1, default=_json_default))


def cmd_bench(args, cfg):
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)
    print(f"seed {args.seed}", file=sys.stderr)
    n_max = max(sizes)
    if args.source == "synthetic":
        data = descriptor_set(n_max + args.queries, args.dim, args.seed)
    else:
        data = rng.normal(size=(n_max + args.queries, args.dim))
        data /= np.linalg.norm(data, axis=1, keepdims=True)
    queries = data[n_max:]
    writer = csv.writer(sys.stdout)
    writer.writerow(["n", "recall_at_k", "insert_ms", "hnsw_query_ms", "exhaustive_query_ms"])
    for n in sizes:
        params = HnswParams(max_elements=n, ef_construction=args.ef_construction,
                            max_connections=args.m, ef_search=args.ef_search, seed=args.seed)
        index = HnswIndex(args.dim, params)
        t0 = time.perf_counter()
        for i in range(n):
            index.insert(data[i], i)
        insert_ms = 1e3 * (time.perf_counter() - t0) / n
        recall, tq, te = [], 0.0, 0.0
        for qv in queries:
            t0 = time.perf_counter()
            got = index.query_top_n(qv, args.k)
            tq += time.perf_counter() - t0
            t0 = time.perf_counter()
            truth = index.exhaustive(qv, args.k)
            te += time.perf_counter() - t0
            recall.append(len({i for i, _ in got} & {i for i, _ in truth}) / len(truth))
        writer.writerow([n, f"{np.mean(recall):.4f}", f"{insert_ms:.4f}",
                         f"{1e3 * tq / len(queries):.4f}", f"{1e3 * te / len(queries):.4f}"])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration field, e.g. engine.top_n=20")
    common.add_argument("--seed", type=int, help="override the scene or engine seed")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="otfsfm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("out")
    g.add_argument("--preset", choices=["single", "two-agent"], default="single")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("replay", parents=[common], help="run the engine over a dataset")
    r.add_argument("dataset")
    r.add_argument("--out", default="run")
    r.add_argument("--order", choices=["manifest", "timestamp"], default="timestamp")
    r.add_argument("--cadence", type=float, default=0.0, help="seconds between frames")
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("serve", parents=[common], help="accept frames over TCP and reconstruct live")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=7878)
    s.add_argument("--queue-size", type=int, default=64)
    s.add_argument("--max-frames", type=int)
    s.add_argument("--idle-timeout", type=float, default=30.0)
    s.add_argument("--out", default="run")
    s.set_defaults(func=cmd_serve)

    e = sub.add_parser("eval", parents=[common], help="evaluate an export against ground truth")
    e.add_argument("export")
    e.add_argument("groundtruth", help="dataset directory or groundtruth.json")
    e.add_argument("--dataset", help="dataset to read keypoints from (enables MRE)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench-retrieval", parents=[common], help="HNSW vs exhaustive table as CSV")
    b.add_argument("--sizes", default="1000,2000,4000,8000")
    b.add_argument("--queries", type=int, default=100)
    b.add_argument("--dim", type=int, default=256)
    b.add_argument("--k", type=int, default=30)
    b.add_argument("--m", type=int, default=16)
    b.add_argument("--ef-construction", type=int, default=200)
    b.add_argument("--ef-search", type=int, default=64)
    b.add_argument("--source", choices=["synthetic", "uniform"], default="synthetic")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config, args.set)
    if args.seed is None and args.command == "bench-retrieval":
        args.seed = 0
    try:
        args.func(args, cfg)
    except OtfSfmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
