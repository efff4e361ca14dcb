"""Command-line entry point.

Subcommands: synth, train, eval, ablate, metrics, predict, render,
dump-points, dump-graph, bench. Exit codes: 0 success, 2 bad flags,
3 I/O failure, 4 validation failure, 5 numerical abort. Failures print one
machine-readable line ``error: <category>: <message>`` to stderr. File
outputs are written atomically (temp file, then rename). The environment
variable SYMPOINT_THREADS caps evaluation worker threads.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import charts
from .checkpoint import _atomic_write, load_arrays
from .conngraph import build_connections, connection_stats, edges_csv
from .document import DocumentError
from .points import build_point_set, points_csv
from .synth import SynthConfig, default_categories, generate_document
from .trainer import (ABLATION_AXES, SpottingModel, TrainConfig, Trainer, ablate,
                      config_from_values, evaluate, load_dataset, parse_config_text,
                      predict_document)
from .vgio import (parse_document, parse_prediction, render_panoptic,
                   serialize_document, serialize_prediction)


def _read_config(path: str) -> TrainConfig:
    text = Path(path).read_text()
    return config_from_values(parse_config_text(text))


def _load_model(stem: str) -> tuple:
    arrays, meta = load_arrays(Path(stem))
    cfg = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in meta["config"].items()})
    rng = np.random.default_rng(0)
    model = SpottingModel(cfg, meta["class_ids"], rng)
    model.load_state({k[len("param/"):]: v for k, v in arrays.items()
                      if k.startswith("param/")})
    return model, cfg


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(canvas=args.canvas, symbols_min=args.symbols_min,
                      symbols_max=args.symbols_max, clutter_min=args.clutter_min,
                      clutter_max=args.clutter_max, seed=args.seed)
    names = []
    for i in range(args.n):
        doc = generate_document(cfg, i)
        path = out / f"{doc.id}.json"
        _atomic_write(path, serialize_document(doc))
        names.append(doc.id)
    manifest = {
        "seed": args.seed,
        "documents": names,
        "config": asdict(cfg),
        "categories": [asdict_cat for asdict_cat in
                       (vars(c) for c in default_categories().values())],
    }
    _atomic_write(out / "manifest.json",
                  json.dumps(manifest, indent=1, sort_keys=True).encode())
    print(f"wrote {len(names)} documents to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    data_dir = args.data or _config_value(args.config, "data.dir")
    docs = load_dataset(Path(data_dir))
    trainer = Trainer(docs, cfg, out_dir=Path(args.out))
    if args.resume:
        trainer.load_checkpoint(Path(args.resume))
    trainer.train()
    if trainer.history:
        series = {
            "total": [h.total for h in trainer.history],
            "bce": [h.bce for h in trainer.history],
            "dice": [h.dice for h in trainer.history],
            "cls": [h.cls for h in trainer.history],
            "ccl": [h.ccl for h in trainer.history],
        }
        _atomic_write(Path(args.out) / "loss_curve.svg",
                      charts.line_chart(series, "training loss"))
    print(f"trained {trainer.epoch} epochs; final loss "
          f"{trainer.history[-1].total if trainer.history else float('nan'):.4f}")
    return 0


def _config_value(config_path: str, key: str) -> str:
    values = parse_config_text(Path(config_path).read_text())
    if key not in values:
        raise DocumentError(f"config is missing {key!r} and no flag was given")
    return values[key]


def cmd_eval(args) -> int:
    model, cfg = _load_model(args.checkpoint)
    docs = load_dataset(Path(args.data))
    report = evaluate(model, docs, cfg, out_dir=Path(args.out))
    rows = report["per_class"]
    if rows:
        chart = charts.bar_chart([r["name"] for r in rows], [r["PQ"] for r in rows],
                                 "per-class PQ")
        _atomic_write(Path(args.out) / "per_class_pq.svg", chart)
    print(json.dumps({k: report[k] for k in ("PQ", "SQ", "RQ", "F1", "wF1")}))
    return 0


def cmd_predict(args) -> int:
    model, cfg = _load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = Path(args.data)
    paths = sorted(data.glob("*.json")) if data.is_dir() else [data]
    paths = [p for p in paths if not p.name.endswith("manifest.json")
             and not p.name.endswith(".pred.json")]
    for i, path in enumerate(paths):
        doc = parse_document(path.read_bytes())
        pred = predict_document(model, doc, cfg, i)
        _atomic_write(out / f"{doc.id}.pred.json", serialize_prediction(pred))
    print(f"wrote {len(paths)} prediction files to {out}")
    return 0


def cmd_metrics(args) -> int:
    from .metrics import aggregate_scores, evaluate_document, metrics_report

    gt_dir = Path(args.gt)
    pred_dir = Path(args.pred)
    docs = load_dataset(gt_dir)
    stats = []
    for doc in docs:
        pred_path = pred_dir / f"{doc.id}.pred.json"
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction file {pred_path}")
        pred = parse_prediction(pred_path.read_bytes(), len(doc))
        stats.append(evaluate_document(doc, pred))
    report = metrics_report(aggregate_scores(stats), docs[0].categories if docs else {})
    payload = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        _atomic_write(Path(args.out), payload.encode())
    if args.chart:
        rows = report["per_class"]
        _atomic_write(Path(args.chart),
                      charts.bar_chart([r["name"] for r in rows],
                                       [r["PQ"] for r in rows], "per-class PQ"))
    print(payload)
    return 0


def cmd_render(args) -> int:
    doc = parse_document(Path(args.doc).read_bytes())
    pred = parse_prediction(Path(args.pred).read_bytes(), len(doc))
    _atomic_write(Path(args.out), render_panoptic(doc, pred))
    print(f"wrote {args.out}")
    return 0


def cmd_dump_points(args) -> int:
    doc = parse_document(Path(args.doc).read_bytes())
    _atomic_write(Path(args.out), points_csv(build_point_set(doc)).encode())
    print(f"wrote {args.out}")
    return 0


def cmd_dump_graph(args) -> int:
    doc = parse_document(Path(args.doc).read_bytes())
    graph = build_connections(doc, args.epsilon, args.cap, args.seed)
    _atomic_write(Path(args.out), edges_csv(graph, doc).encode())
    print(json.dumps(connection_stats(graph)))
    return 0


def cmd_ablate(args) -> int:
    cfg = _read_config(args.config)
    train_docs = load_dataset(Path(args.data))
    eval_docs = load_dataset(Path(args.eval_data)) if args.eval_data else train_docs
    rows = ablate(train_docs, eval_docs, cfg, args.axis, out_dir=Path(args.out))
    for name, report in rows:
        print(f"{name}: PQ={report['PQ']:.4f} SQ={report['SQ']:.4f} RQ={report['RQ']:.4f}")
    return 0


def cmd_bench(args) -> int:
    rows = bench_mod.run_benchmark(n_points=args.n, k=args.k, seed=args.seed)
    print(bench_mod.format_table(rows, args.n))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointspot",
        description="Panoptic symbol spotting on vector drawings via point sets.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic annotated drawings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, required=True, help="number of documents")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canvas", type=float, default=128.0)
    p.add_argument("--symbols-min", type=int, default=4)
    p.add_argument("--symbols-max", type=int, default=8)
    p.add_argument("--clutter-min", type=int, default=4)
    p.add_argument("--clutter-max", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--data", help="dataset directory (overrides data.dir)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", help="checkpoint stem to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint stem (no suffix)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write prediction files for documents")
    p.add_argument("--data", required=True, help="document file or directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("metrics", help="score prediction files against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth document directory")
    p.add_argument("--pred", required=True, help="prediction file directory")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--chart", help="write a per-class PQ bar chart here")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("render", help="render a prediction as colored SVG")
    p.add_argument("--doc", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("dump-points", help="write the point encoding as CSV")
    p.add_argument("--doc", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_points)

    p = sub.add_parser("dump-graph", help="write the connection edge list as CSV")
    p.add_argument("--doc", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--cap", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dump_graph)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", help="held-out directory (defaults to --data)")
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="compare compiled and fallback kernels")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 3
    except FloatingPointError as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return 5
    except (DocumentError, ValueError, KeyError) as e:
        print(f"error: validation: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
