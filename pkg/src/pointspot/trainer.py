"""End-to-end training and evaluation over synthetic or imported drawings.

The pipeline per document: parse -> point encoding -> connection graph ->
backbone pyramid -> query head -> matching + losses. Batches are
concatenations of per-document point sets (an offsets vector marks the
boundaries); neighborhoods never cross documents, so per-document forward
passes are summed into one batch loss.

When augmentation is off, the per-document geometry (neighborhoods,
samplings, interpolation weights, connection graph) is planned once and
reused across epochs. Runs are deterministic for a fixed seed in
single-thread mode: per-epoch randomness is derived from (seed, epoch), so
resuming from a checkpoint reproduces the uninterrupted trajectory.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import TOY_BACKBONE, Backbone, BackboneConfig, GeometryPlan, plan_geometry
from .checkpoint import load_arrays, save_arrays
from .conngraph import ConnectionGraph, build_connections
from .document import Document, PanopticPrediction
from .head import TOY_HEAD, HeadConfig, SpottingHead, assemble_panoptic
from .losses import (DEFAULT_TAU, LOSS_WEIGHTS, LossBreakdown, build_targets,
                     connection_anchor_sets, spotting_loss)
from .metrics import PanopticStats, aggregate_scores, evaluate_document, metrics_report
from .nn import Module
from .optim import AdamW, clip_grad_norm
from .points import PointSet, build_point_set
from .vgio import parse_document, serialize_prediction

THREADS_ENV = "SYMPOINT_THREADS"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 2
    lr: float = 1e-4
    weight_decay: float = 1e-3
    seed: int = 0
    profile: str = "toy"              # toy | paper
    augment: bool = False
    augment_ops: tuple = ("rotate", "flip", "scale", "shift")
    use_acm: bool = True
    use_ccl: bool = True
    downsample: str = "knn_interp"
    epsilon: float = 1.0
    connection_cap: int = 8
    grad_clip: float = 1.0
    checkpoint_every: int = 0         # 0: only the final checkpoint
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    def loss_weights(self) -> tuple:
        w = list(LOSS_WEIGHTS)
        if not self.use_ccl:
            w[3] = 0.0
        return tuple(w)

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PROFILES = {
    "toy": (TOY_BACKBONE, TOY_HEAD),
    "paper": (BackboneConfig(), HeadConfig()),
}


class SpottingModel(Module):
    """Backbone plus query head for one fixed class list."""

    def __init__(self, cfg: TrainConfig, class_ids: Sequence[int], rng: np.random.Generator):
        bb_cfg, head_cfg = PROFILES[cfg.profile]
        bb_cfg = replace(bb_cfg, use_acm=cfg.use_acm)
        head_cfg = replace(head_cfg, downsample=cfg.downsample)
        self.backbone_cfg = bb_cfg
        self.head_cfg = head_cfg
        self.class_ids = list(class_ids)
        self.backbone = Backbone(bb_cfg, rng)
        self.head = SpottingHead(head_cfg, len(class_ids),
                                 bb_cfg.channels[:head_cfg.levels], rng)

    def forward(self, ps: PointSet, conn: Optional[ConnectionGraph], scale: float,
                plan: Optional[GeometryPlan] = None, seed: int = 0,
                force_visible: bool = False):
        pyramid = self.backbone(ps, conn, scale, seed=seed, plan=plan)
        output = self.head(pyramid, force_visible=force_visible)
        return pyramid, output


@dataclass
class DocRecord:
    """One dataset document plus cached static geometry."""

    doc: Document
    ps: PointSet = None
    conn: ConnectionGraph = None
    plan: GeometryPlan = None
    gt_masks: np.ndarray = None
    gt_classes: np.ndarray = None
    anchor_sets: list = None


def load_dataset(path: Path) -> list:
    """All canonical-JSON documents under a directory, sorted by filename."""
    path = Path(path)
    files = sorted(p for p in path.glob("*.json") if not p.name.endswith("manifest.json")
                   and not p.name.endswith(".pred.json"))
    if not files:
        raise FileNotFoundError(f"no documents found in {path}")
    return [parse_document(p.read_bytes()) for p in files]


def dataset_class_ids(docs: Sequence[Document]) -> list:
    ids = set()
    for d in docs:
        ids.update(d.categories.keys())
    return sorted(ids)


def prepare_record(doc: Document, cfg: TrainConfig, model: SpottingModel,
                   index: int) -> DocRecord:
    """Static per-document preparation (reused across epochs when possible)."""
    rec = DocRecord(doc=doc)
    rec.ps = build_point_set(doc)
    rec.conn = build_connections(doc, cfg.epsilon, cfg.connection_cap,
                                 seed=cfg.seed * 100003 + index)
    rec.plan = plan_geometry(rec.ps, rec.conn, model.backbone_cfg, seed=cfg.seed)
    if rec.ps.labeled:
        rec.gt_masks, rec.gt_classes = build_targets(
            rec.ps.semantics, rec.ps.instances, doc.categories, model.class_ids)
    else:
        rec.gt_masks = np.zeros((0, len(rec.ps)))
        rec.gt_classes = np.zeros(0, dtype=np.int64)
    if cfg.use_ccl:
        rec.anchor_sets = connection_anchor_sets(rec.plan.neigh[0], rec.conn)
    return rec


@dataclass
class Batch:
    """Concatenated point sets with document offsets."""

    records: list
    offsets: np.ndarray  # cumulative point counts, len = docs + 1

    @staticmethod
    def of(records: list) -> "Batch":
        sizes = [len(r.ps) for r in records]
        return Batch(records=records, offsets=np.cumsum([0] + sizes))


def _loss_of_record(model: SpottingModel, rec: DocRecord, cfg: TrainConfig,
                    seed: int) -> LossBreakdown:
    pyramid, output = model.forward(rec.ps, rec.conn, rec.doc.diagonal,
                                    plan=rec.plan, seed=seed)
    sem = rec.ps.semantics if rec.ps.labeled else np.full(len(rec.ps), -1, dtype=np.int64)
    return spotting_loss(output, rec.gt_masks, rec.gt_classes, len(model.class_ids),
                         f0=pyramid.features[0] if cfg.use_ccl else None,
                         anchor_sets=rec.anchor_sets, semantics=sem,
                         weights=cfg.loss_weights(), tau=cfg.tau)


@dataclass
class EpochLog:
    epoch: int
    bce: float
    dice: float
    cls: float
    ccl: float
    total: float
    seconds: float

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.bce:.6f},{self.dice:.6f},{self.cls:.6f},"
                f"{self.ccl:.6f},{self.total:.6f},{self.seconds:.3f}")


CSV_HEADER = "epoch,bce,dice,cls,ccl,total,seconds"


class Trainer:
    """Owns the model, optimizer, and the deterministic epoch loop."""

    def __init__(self, docs: Sequence[Document], cfg: TrainConfig,
                 out_dir: Optional[Path] = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.class_ids = dataset_class_ids(docs)
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xC0FFEE)))
        self.model = SpottingModel(cfg, self.class_ids, rng)
        self.optimizer = AdamW(self.model.parameters(), lr=cfg.lr,
                               weight_decay=cfg.weight_decay)
        self.records = [prepare_record(d, cfg, self.model, i) for i, d in enumerate(docs)]
        self.epoch = 0
        self.history: list[EpochLog] = []

    # -- persistence --------------------------------------------------------
    def save_checkpoint(self, stem: Path) -> None:
        arrays = {f"param/{k}": v for k, v in self.model.state().items()}
        arrays.update({f"opt/{k}": v for k, v in self.optimizer.state().items()})
        meta = {"epoch": self.epoch, "config_hash": self.cfg.hash(),
                "config": asdict(self.cfg), "class_ids": self.class_ids}
        save_arrays(stem, arrays, meta)

    def load_checkpoint(self, stem: Path) -> None:
        arrays, meta = load_arrays(stem)
        if meta["config_hash"] != self.cfg.hash():
            raise ValueError("checkpoint was produced under a different configuration")
        if meta["class_ids"] != self.class_ids:
            raise ValueError("checkpoint class table does not match the dataset")
        self.model.load_state({k[len("param/"):]: v for k, v in arrays.items()
                               if k.startswith("param/")})
        self.optimizer.load_state({k[len("opt/"):]: v for k, v in arrays.items()
                                   if k.startswith("opt/")})
        self.epoch = int(meta["epoch"])

    # -- the loop -----------------------------------------------------------
    def _epoch_records(self, epoch: int) -> list:
        order = np.random.default_rng(
            np.random.SeedSequence((self.cfg.seed, 0x0EDE7, epoch))).permutation(len(self.records))
        if not self.cfg.augment:
            return [self.records[i] for i in order]
        out = []
        for i in order:
            base = self.records[i]
            doc = _augmented(base.doc, self.cfg, epoch, int(i))
            out.append(prepare_record(doc, self.cfg, self.model, int(i)))
        return out

    def train_epoch(self) -> EpochLog:
        t0 = time.perf_counter()
        cfg = self.cfg
        records = self._epoch_records(self.epoch)
        sums = np.zeros(5)
        n_batches = 0
        for lo in range(0, len(records), cfg.batch_size):
            batch = Batch.of(records[lo:lo + cfg.batch_size])
            self.optimizer.zero_grad()
            total = None
            parts = np.zeros(4)
            for rec in batch.records:
                breakdown = _loss_of_record(self.model, rec, cfg, seed=cfg.seed)
                doc_loss = breakdown.total
                total = doc_loss if total is None else ad.add(total, doc_loss)
                parts += (breakdown.bce, breakdown.dice, breakdown.cls, breakdown.ccl)
            batch_loss = ad.multiply(total, 1.0 / len(batch.records))
            if not np.isfinite(batch_loss.data):
                raise FloatingPointError(
                    f"non-finite loss in epoch {self.epoch} batch {n_batches}")
            batch_loss.backward()
            clip_grad_norm(self.model.parameters(), cfg.grad_clip)
            self.optimizer.step()
            parts /= len(batch.records)
            sums[:4] += parts
            sums[4] += float(batch_loss.data)
            n_batches += 1
        sums /= max(n_batches, 1)
        log = EpochLog(self.epoch, *sums[:4], sums[4], time.perf_counter() - t0)
        self.history.append(log)
        self.epoch += 1
        return log

    def train(self, epochs: Optional[int] = None) -> list:
        cfg = self.cfg
        target = cfg.epochs if epochs is None else epochs
        loss_log = self.out_dir / "loss_log.csv" if self.out_dir else None
        if loss_log is not None and not loss_log.exists():
            loss_log.write_text(CSV_HEADER + "\n")
        while self.epoch < target:
            log = self.train_epoch()
            if loss_log is not None:
                with loss_log.open("a") as f:
                    f.write(log.csv_row() + "\n")
            if self.out_dir is not None and cfg.checkpoint_every > 0 \
                    and self.epoch % cfg.checkpoint_every == 0:
                self.save_checkpoint(self.out_dir / f"checkpoint_{self.epoch:05d}")
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / "checkpoint_final")
        return self.history


def _augmented(doc: Document, cfg: TrainConfig, epoch: int, index: int) -> Document:
    from .synth import augment
    seed = int(np.random.default_rng(
        np.random.SeedSequence((cfg.seed, 0xA06, epoch, index))).integers(2 ** 31))
    return augment(doc, cfg.augment_ops, seed=seed)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def predict_document(model: SpottingModel, doc: Document, cfg: TrainConfig,
                     index: int = 0) -> PanopticPrediction:
    """Panoptic prediction for one document (no gradient tape)."""
    with ad.no_grad():
        rec = DocRecord(doc=doc)
        rec.ps = build_point_set(doc, with_labels=False)
        rec.conn = build_connections(doc, cfg.epsilon, cfg.connection_cap,
                                     seed=cfg.seed * 100003 + index)
        rec.plan = plan_geometry(rec.ps, rec.conn, model.backbone_cfg, seed=cfg.seed)
        _, output = model.forward(rec.ps, rec.conn, doc.diagonal, plan=rec.plan,
                                  seed=cfg.seed)
        final = output.final
        return assemble_panoptic(final.classes.data, final.masks.data, doc.categories,
                                 model.class_ids, doc_id=doc.id,
                                 mask_threshold=model.head_cfg.mask_threshold)


def worker_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def evaluate(model: SpottingModel, docs: Sequence[Document], cfg: TrainConfig,
             out_dir: Optional[Path] = None) -> dict:
    """Predict every document, write prediction files, pool the metrics."""
    n_threads = worker_threads()
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            preds = list(pool.map(lambda iv: predict_document(model, iv[1], cfg, iv[0]),
                                  enumerate(docs)))
    else:
        preds = [predict_document(model, d, cfg, i) for i, d in enumerate(docs)]
    stats = [evaluate_document(d, p) for d, p in zip(docs, preds)]
    pooled = aggregate_scores(stats)
    categories = docs[0].categories if docs else {}
    report = metrics_report(pooled, categories)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for d, p in zip(docs, preds):
            (out_dir / f"{d.id}.pred.json").write_bytes(serialize_prediction(p))
        (out_dir / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

ABLATION_AXES = ("acm", "ccl", "downsample")


def ablate(train_docs: Sequence[Document], eval_docs: Sequence[Document],
           base_cfg: TrainConfig, axis: str, out_dir: Optional[Path] = None) -> list:
    """Train one variant per setting of the axis under a shared seed.

    Returns [(variant name, report dict)] in a fixed order, mirroring the
    technique/downsampling comparison tables.
    """
    if axis not in ABLATION_AXES:
        raise ValueError(f"axis must be one of {ABLATION_AXES}")
    if axis == "acm":
        variants = [("baseline", replace(base_cfg, use_acm=False, use_ccl=False)),
                    ("acm", replace(base_cfg, use_acm=True, use_ccl=False)),
                    ("ccl", replace(base_cfg, use_acm=False, use_ccl=True)),
                    ("acm+ccl", replace(base_cfg, use_acm=True, use_ccl=True))]
    elif axis == "ccl":
        variants = [("no_ccl", replace(base_cfg, use_ccl=False)),
                    ("ccl", replace(base_cfg, use_ccl=True))]
    else:
        variants = [(mode, replace(base_cfg, downsample=mode))
                    for mode in ("knn_interp", "knn_max", "knn_avg", "bilinear")]
    rows = []
    for name, cfg in variants:
        trainer = Trainer(train_docs, cfg,
                          out_dir=None if out_dir is None else Path(out_dir) / name)
        trainer.train()
        report = evaluate(trainer.model, list(eval_docs), cfg)
        rows.append((name, report))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = ["variant,PQ,SQ,RQ"]
        lines += [f"{name},{r['PQ']:.6f},{r['SQ']:.6f},{r['RQ']:.6f}" for name, r in rows]
        (out_dir / f"ablation_{axis}.csv").write_text("\n".join(lines) + "\n")
    return rows


# ---------------------------------------------------------------------------
# plain-text configuration files
# ---------------------------------------------------------------------------

CONFIG_KEYS = {
    "model.profile": ("profile", str),
    "model.use_acm": ("use_acm", lambda v: v.lower() in ("1", "true", "yes")),
    "model.use_ccl": ("use_ccl", lambda v: v.lower() in ("1", "true", "yes")),
    "model.downsample": ("downsample", str),
    "model.epsilon": ("epsilon", float),
    "model.connection_cap": ("connection_cap", int),
    "model.tau": ("tau", float),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.lr": ("lr", float),
    "train.weight_decay": ("weight_decay", float),
    "train.seed": ("seed", int),
    "train.augment": ("augment", lambda v: v.lower() in ("1", "true", "yes")),
    "train.grad_clip": ("grad_clip", float),
    "train.checkpoint_every": ("checkpoint_every", int),
}

DATA_KEYS = ("data.dir", "data.eval_dir", "ablation.axis")


def parse_config_text(text: str) -> dict:
    """key = value lines; '#' starts a comment; unknown keys are errors."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS and key not in DATA_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = val
    return values


def config_from_values(values: dict) -> TrainConfig:
    kwargs = {}
    for key, (attr, cast) in CONFIG_KEYS.items():
        if key in values:
            kwargs[attr] = cast(values[key])
    return TrainConfig(**kwargs)
