"""Command-line entry point: ``afgrl gen-data | train | eval``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import build_config, dump_config, parse_pairs
from .errors import ConfigError, DimensionError, GraphFormatError, NumericalError
from .evaluation import (
    classification_protocol,
    correct_ratio_curve,
    kmeans_eval,
    sim_at_n,
)
from .graph import SbmSpec, generate_sbm, load_graph, save_graph
from .numerics import make_rng
from .training import EpochRecord, train

log = logging.getLogger("afgrl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

EDGE_FILE, FEATURE_FILE, LABEL_FILE, SPEC_FILE = "edges.txt", "features.csv", "labels.txt", "sbm_spec.txt"
TASKS = ("classify", "cluster", "simsearch", "ratio-curve")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default: config / 0)")
    p.add_argument("--out", required=True, help="output directory or file")
    p.add_argument("--jobs", type=int, default=1, help="cap on internal parallelism")


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help=f"directory holding {EDGE_FILE}, {FEATURE_FILE}[, {LABEL_FILE}]")
    p.add_argument("--edges")
    p.add_argument("--features")
    p.add_argument("--labels")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="afgrl", description="Augmentation-free graph representation learning")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic stochastic-block-model dataset")
    g.add_argument("--blocks", type=_int_list, required=True, help="block sizes, e.g. 60,60,60")
    g.add_argument("--p-in", type=float, required=True)
    g.add_argument("--p-out", type=float, required=True)
    g.add_argument("--feat-dim", type=int, required=True)
    g.add_argument("--feature-shift", type=float, default=1.0)
    _shared(g)

    t = sub.add_parser("train", help="self-supervised training run")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.add_argument("--from-manifest", help="re-run exactly the run described by a manifest")
    t.add_argument("--dump-positives", action="store_true",
                   help="write the final positive sets as positives.csv")
    _data_args(t)
    _shared(t)

    e = sub.add_parser("eval", help="evaluate embeddings from a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--tasks", default=",".join(TASKS), help=f"subset of {','.join(TASKS)}")
    e.add_argument("--splits", type=int, default=20, help="random splits for classification")
    e.add_argument("--train-ratio", type=float, default=0.1)
    e.add_argument("--valid-ratio", type=float, default=0.1)
    e.add_argument("--sim-n", type=_int_list, default=[5, 10])
    e.add_argument("--ks", type=_int_list, default=[4, 8, 16, 32], help="k values for ratio-curve")
    e.add_argument("--cluster-runs", type=int, default=10)
    _data_args(e)
    _shared(e)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _data_paths(args, require_labels=False):
    if args.data:
        root = Path(args.data)
        edges = Path(args.edges) if args.edges else root / EDGE_FILE
        feats = Path(args.features) if args.features else root / FEATURE_FILE
        labels = Path(args.labels) if args.labels else root / LABEL_FILE
        if not args.labels and not labels.exists():
            labels = None
    else:
        if not (args.edges and args.features):
            raise UsageError("give --data DIR or both --edges and --features")
        edges, feats = Path(args.edges), Path(args.features)
        labels = Path(args.labels) if args.labels else None
    for p in (edges, feats, labels):
        if p is not None and not p.exists():
            raise FileNotFoundError(f"missing input file: {p}")
    if require_labels and labels is None:
        raise GraphFormatError("this task needs node labels (--labels)")
    return edges, feats, labels


def fingerprint(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        if p is None:
            continue
        data = Path(p).read_bytes()
        h.update(Path(p).name.encode() + b"\0" + str(len(data)).encode() + b"\0" + data)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    seed = 0 if args.seed is None else args.seed
    try:
        spec = SbmSpec(args.blocks, args.p_in, args.p_out, args.feat_dim, args.feature_shift, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    graph = generate_sbm(spec, make_rng(seed, "sbm"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out / EDGE_FILE, out / FEATURE_FILE, out / LABEL_FILE)
    (out / SPEC_FILE).write_text(
        f"blocks = {','.join(map(str, spec.block_sizes))}\n"
        f"p_in = {spec.p_in!r}\np_out = {spec.p_out!r}\n"
        f"feature_dim = {spec.feature_dim}\nfeature_shift = {spec.feature_shift!r}\n"
        f"seed = {seed}\nnodes = {graph.n}\nedges = {graph.num_edges}\n",
        encoding="utf-8",
    )
    log.info("wrote %d nodes / %d edges to %s", graph.n, graph.num_edges, out)
    return EXIT_OK


def _train_inputs(args):
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
        config = build_config(manifest["config"])
        ds = manifest["dataset"]
        paths = tuple(Path(p) if p else None for p in (ds["edges"], ds["features"], ds["labels"]))
        if fingerprint(paths) != ds["fingerprint"]:
            raise GraphFormatError("dataset files changed since the manifest was written")
        return config, paths
    values = {}
    if args.config:
        values.update(parse_pairs(Path(args.config).read_text(encoding="utf-8").splitlines(), args.config))
    values.update(parse_pairs(args.set, "--set"))
    if args.seed is not None:
        values["seed"] = args.seed
    return build_config(values), _data_paths(args)


def cmd_train(args) -> int:
    config, paths = _train_inputs(args)
    graph = load_graph(*paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, metrics_path, manifest_path = out / "checkpoint.npz", out / "metrics.csv", out / "manifest.json"
    manifest = {
        "format": "afgrl-run-manifest",
        "version": 1,
        "config": config.to_dict(),
        "seed": config.seed,
        "dataset": {
            "edges": str(Path(paths[0]).resolve()),
            "features": str(Path(paths[1]).resolve()),
            "labels": str(Path(paths[2]).resolve()) if paths[2] else None,
            "fingerprint": fingerprint(paths),
            "nodes": graph.n,
            "edges_undirected": graph.num_edges,
        },
        "outputs": {"checkpoint": str(ckpt), "metrics": str(metrics_path)},
        "jobs": args.jobs,
        "timings": {},
    }
    _write_json(manifest_path, manifest)
    (out / "config.txt").write_text(dump_config(config), encoding="utf-8")

    started = time.perf_counter()
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(EpochRecord.CSV_HEADER + "\n")

        def on_epoch(rec: EpochRecord):
            fh.write(rec.csv_row() + "\n")
            fh.flush()

        result = train(config, graph, jobs=args.jobs, on_epoch=on_epoch)
    elapsed = time.perf_counter() - started

    save_checkpoint(ckpt, result.net.state_dict(), result.embeddings, config.to_dict())
    if args.dump_positives and config.epochs > 0:
        from .positives import discover_positives
        from .training import embed, target_forward

        h_on = embed(result.net, result.a_norm, graph.features)
        h_tg = target_forward(result.net, result.a_norm, graph.features)
        discover_positives(h_on, h_tg, graph.adjacency, config.k, config.clusters, config.kmeans_runs,
                           config.kmeans_iters, config.seed, args.jobs).write_csv(out / "positives.csv")
    manifest["timings"] = {"train_seconds": round(elapsed, 3)}
    _write_json(manifest_path, manifest)
    if result.metrics:
        log.info("final loss %.6f after %d epochs (%.1fs)", result.metrics[-1].loss, config.epochs, elapsed)
    return EXIT_OK


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def cmd_eval(args) -> int:
    tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    unknown = sorted(set(tasks) - set(TASKS))
    if unknown:
        raise UsageError(f"unknown tasks {unknown}; choose from {', '.join(TASKS)}")
    edges, feats, labels_path = _data_paths(args)
    graph = load_graph(edges, feats, labels_path)
    _, embeddings, _ = load_checkpoint(args.checkpoint)
    if embeddings is None:
        raise GraphFormatError(f"{args.checkpoint}: no embeddings stored")
    if embeddings.shape[0] != graph.n:
        raise DimensionError(f"checkpoint has {embeddings.shape[0]} rows, dataset has {graph.n} nodes")
    if graph.labels is None:
        raise GraphFormatError("evaluation tasks need node labels (--labels)")
    seed = 0 if args.seed is None else args.seed
    labels = graph.labels
    rows = []
    if "classify" in tasks:
        summary = classification_protocol(embeddings, labels, args.splits, seed,
                                          (args.train_ratio, args.valid_ratio))
        params = f"splits={args.splits};train={args.train_ratio};valid={args.valid_ratio}"
        rows.append(("accuracy_mean", summary.mean, params))
        rows.append(("accuracy_std", summary.std, params))
    if "cluster" in tasks:
        k = int(np.unique(labels).size)
        score = kmeans_eval(embeddings, labels, k, args.cluster_runs, seed)
        params = f"K={k};runs={args.cluster_runs}"
        rows.append(("nmi", score.nmi, params))
        rows.append(("homogeneity", score.homogeneity, params))
    if "simsearch" in tasks:
        for n in args.sim_n:
            rows.append((f"sim@{n}", sim_at_n(embeddings, labels, n), f"n={n}"))
    if "ratio-curve" in tasks:
        curve = correct_ratio_curve(embeddings, labels, graph.adjacency, args.ks)
        rows.append(("ratio_adj", curve.adjacency, f"skipped={curve.adjacency_skipped}"))
        for k, knn, _, local, skipped in curve.rows():
            rows.append((f"ratio_knn@{k}", knn, f"k={k}"))
            rows.append((f"ratio_local@{k}", local, f"k={k};skipped={skipped}"))

    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "results.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value", "params"])
        for metric, value, params in rows:
            w.writerow([metric, _fmt(value), params])
    for metric, value, _ in rows:
        print(f"{metric}\t{_fmt(value)}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.jobs < 1:
        print("afgrl: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and args.seed < 0:
        print("afgrl: error: --seed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.jobs):
            return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"afgrl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"afgrl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphFormatError, DimensionError, OSError, ValueError, KeyError) as exc:
        print(f"afgrl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
