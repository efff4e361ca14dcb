"""Training objective: bipartite matching, mask/class losses, contrastive
connection learning.

Queries are assigned to ground-truth symbols by minimum-cost bipartite
matching; the cost mirrors the loss weights (5 * BCE + 5 * dice - 2 *
class probability). Matched queries are supervised with binary
cross-entropy and soft dice on their point masks and cross-entropy on their
class; unmatched queries are pushed to the no-object class with weight 0.1.
The contrastive term pulls each point's feature toward same-category
members of its neighborhood-plus-connections set and away from the rest.

The four terms combine as 5 * BCE + 5 * dice + 2 * cls + 8 * CCL.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Neighborhoods
from .conngraph import ConnectionGraph
from .document import BACKGROUND, Category, segments_from_labels
from .head import HeadOutput, HeadStep
from .nn import l2_normalize

LOSS_WEIGHTS = (5.0, 5.0, 2.0, 8.0)  # bce, dice, cls, ccl
NO_OBJECT_WEIGHT = 0.1
DEFAULT_TAU = 1.0


@dataclass(frozen=True)
class MatchResult:
    """Injective query-to-symbol assignment."""

    pairs: tuple            # ((query, gt), ...) sorted by query index
    unmatched_queries: tuple

    @property
    def matched_queries(self) -> tuple:
        return tuple(q for q, _ in self.pairs)


def hungarian_match(cost: np.ndarray) -> MatchResult:
    """Minimum-total-cost assignment of queries (rows) to symbols (columns)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarian_match: non-finite cost entries")
    if min(cost.shape) == 0:
        return MatchResult(pairs=(), unmatched_queries=tuple(range(cost.shape[0])))
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(rows)
    pairs = tuple((int(rows[i]), int(cols[i])) for i in order)
    matched = {q for q, _ in pairs}
    unmatched = tuple(q for q in range(cost.shape[0]) if q not in matched)
    return MatchResult(pairs=pairs, unmatched_queries=unmatched)


def matching_cost(class_probs: np.ndarray, mask_logits: np.ndarray,
                  gt_masks: np.ndarray, gt_classes: np.ndarray) -> np.ndarray:
    """Per-pair cost 5*BCE + 5*dice - 2*p(class), computed on point masks."""
    z = np.asarray(mask_logits, dtype=np.float64)
    g = np.asarray(gt_masks, dtype=np.float64)
    n = z.shape[1]
    softplus = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    bce = softplus.mean(axis=1, keepdims=True) - (z @ g.T) / n
    probs = 1.0 / (1.0 + np.exp(-z))
    inter = probs @ g.T
    dice = 1.0 - 2.0 * inter / (probs.sum(axis=1, keepdims=True) + g.sum(axis=1)[None, :])
    cls = -np.asarray(class_probs, dtype=np.float64)[:, gt_classes]
    return LOSS_WEIGHTS[0] * bce + LOSS_WEIGHTS[1] * dice + LOSS_WEIGHTS[2] * cls


def mask_losses(pairs: Sequence, mask_logits: Tensor, gt_masks: np.ndarray) -> tuple:
    """(BCE, dice) over matched pairs; zeros when nothing is matched.

    BCE averages over points and pairs; dice is the soft form
    1 - 2|P.G| / (|P| + |G|), averaged over pairs.
    """
    if len(pairs) == 0:
        zero = Tensor(np.zeros(()), dtype=mask_logits.dtype)
        return zero, zero
    q_idx = np.array([q for q, _ in pairs], dtype=np.int64)
    g_idx = np.array([g for _, g in pairs], dtype=np.int64)
    sel = ad.gather_rows(mask_logits, q_idx)
    targets = gt_masks[g_idx].astype(mask_logits.dtype)
    bce = ad.reduce_mean(ad.bce_with_logits(sel, targets))
    probs = ad.sigmoid(sel)
    inter = ad.reduce_sum(ad.multiply(probs, targets), axis=1)
    denom = ad.add(ad.reduce_sum(probs, axis=1), targets.sum(axis=1))
    dice = ad.reduce_mean(ad.subtract(1.0, ad.divide(ad.multiply(2.0, inter), denom)))
    return bce, dice


def cls_loss(class_logits: Tensor, match: MatchResult, gt_classes: np.ndarray,
             num_classes: int, no_object_weight: float = NO_OBJECT_WEIGHT) -> Tensor:
    """Cross-entropy with matched queries supervised to their symbol class
    and the rest to no-object (down-weighted)."""
    n_queries = class_logits.shape[0]
    targets = np.full(n_queries, num_classes, dtype=np.int64)
    weights = np.full(n_queries, no_object_weight)
    for q, g in match.pairs:
        targets[q] = gt_classes[g]
        weights[q] = 1.0
    onehot = np.zeros((n_queries, num_classes + 1))
    onehot[np.arange(n_queries), targets] = 1.0

    shift = np.max(class_logits.data, axis=1, keepdims=True)
    sh = ad.subtract(class_logits, shift)
    log_z = ad.log(ad.reduce_sum(ad.exp(sh), axis=1))
    picked = ad.reduce_sum(ad.multiply(sh, onehot.astype(class_logits.dtype)), axis=1)
    ce = ad.subtract(log_z, picked)
    w = weights.astype(class_logits.dtype)
    return ad.divide(ad.reduce_sum(ad.multiply(ce, w)), float(w.sum()))


def connection_anchor_sets(neigh0: Neighborhoods, conn: Optional[ConnectionGraph]) -> list:
    """Per point: sorted union of kNN neighbors and connections, self excluded."""
    n = neigh0.idx.shape[0]
    sets = []
    for i in range(n):
        members = {int(j) for j, ok in zip(neigh0.idx[i], neigh0.mask[i]) if ok}
        if conn is not None:
            members.update(conn.neighbors[i])
        members.discard(i)
        sets.append(sorted(members))
    return sets


def ccl_loss(feats: Tensor, anchor_sets: Sequence, semantics: np.ndarray,
             tau: float = DEFAULT_TAU) -> Tensor:
    """Contrastive pull toward same-label members of each anchor's set.

    Distance is Euclidean between L2-normalized features. Anchors whose set
    holds no same-label member are skipped; with nothing left the loss is a
    constant zero.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    labels = np.asarray(semantics, dtype=np.int64)
    keep = []
    for i, members in enumerate(anchor_sets):
        if any(labels[j] == labels[i] for j in members):
            keep.append(i)
    if not keep:
        return Tensor(np.zeros(()), dtype=feats.dtype)
    width = max(len(anchor_sets[i]) for i in keep)
    idx = np.zeros((len(keep), width), dtype=np.int64)
    valid = np.zeros((len(keep), width))
    pos = np.zeros((len(keep), width))
    for row, i in enumerate(keep):
        members = anchor_sets[i]
        idx[row, :len(members)] = members
        valid[row, :len(members)] = 1.0
        pos[row, :len(members)] = (labels[members] == labels[i]).astype(np.float64)

    unit = l2_normalize(feats)
    fa = ad.gather_rows(unit, np.array(keep, dtype=np.int64))
    fb = ad.gather_rows(unit, idx)
    diff = ad.subtract(ad.reshape(fa, (len(keep), 1, feats.shape[1])), fb)
    d = ad.sqrt(ad.add(ad.reduce_sum(ad.multiply(diff, diff), axis=2), 1e-12))
    e = ad.exp(ad.multiply(d, -1.0 / tau))
    num = ad.reduce_sum(ad.multiply(e, pos.astype(feats.dtype)), axis=1)
    den = ad.reduce_sum(ad.multiply(e, valid.astype(feats.dtype)), axis=1)
    return ad.reduce_mean(ad.subtract(ad.log(den), ad.log(num)))


@dataclass
class LossBreakdown:
    """The four weighted terms plus their combination (kept as a Tensor so
    callers can backpropagate through ``total``)."""

    bce: float
    dice: float
    cls: float
    ccl: float
    total: Tensor
    weights: tuple = LOSS_WEIGHTS

    @property
    def total_value(self) -> float:
        return float(self.total.data)


def total_loss(bce: Tensor, dice: Tensor, cls: Tensor, ccl: Tensor,
               weights: tuple = LOSS_WEIGHTS) -> LossBreakdown:
    """Weighted sum of the four terms; aborts on any non-finite term."""
    for name, term in (("bce", bce), ("dice", dice), ("cls", cls), ("ccl", ccl)):
        if not np.all(np.isfinite(term.data)):
            raise FloatingPointError(f"loss term {name} is not finite")
    wb, wd, wc, wl = weights
    total = ad.add(ad.add(ad.multiply(bce, wb), ad.multiply(dice, wd)),
                   ad.add(ad.multiply(cls, wc), ad.multiply(ccl, wl)))
    return LossBreakdown(bce=float(bce.data), dice=float(dice.data),
                         cls=float(cls.data), ccl=float(ccl.data),
                         total=total, weights=weights)


def build_targets(semantics: np.ndarray, instances: np.ndarray,
                  categories: dict[int, Category], class_ids: Sequence[int]) -> tuple:
    """Ground-truth masks (G, N) and model class indices (G,) for one document."""
    index_of = {cid: i for i, cid in enumerate(class_ids)}
    segs = segments_from_labels(semantics, instances, categories)
    n = len(semantics)
    masks = np.zeros((len(segs), n))
    classes = np.zeros(len(segs), dtype=np.int64)
    for s, (sem, _inst, members) in enumerate(segs):
        masks[s, members] = 1.0
        classes[s] = index_of[sem]
    return masks, classes


def spotting_loss(output: HeadOutput, gt_masks: np.ndarray, gt_classes: np.ndarray,
                  num_classes: int, f0: Optional[Tensor] = None,
                  anchor_sets: Optional[Sequence] = None,
                  semantics: Optional[np.ndarray] = None,
                  weights: tuple = LOSS_WEIGHTS, tau: float = DEFAULT_TAU) -> LossBreakdown:
    """Deep-supervised objective: every prediction step is matched and
    supervised, terms averaged over steps; the contrastive term is computed
    once on the final backbone feature."""
    n_steps = len(output.steps)
    bce_sum = dice_sum = cls_sum = None
    for step in output.steps:
        if gt_masks.shape[0] > 0:
            cost = matching_cost(step.classes.data, step.mask_logits.data, gt_masks, gt_classes)
            match = hungarian_match(cost)
        else:
            match = MatchResult(pairs=(), unmatched_queries=tuple(range(step.classes.shape[0])))
        bce, dice = mask_losses(match.pairs, step.mask_logits, gt_masks)
        cls = cls_loss(step.class_logits, match, gt_classes, num_classes)
        bce_sum = bce if bce_sum is None else ad.add(bce_sum, bce)
        dice_sum = dice if dice_sum is None else ad.add(dice_sum, dice)
        cls_sum = cls if cls_sum is None else ad.add(cls_sum, cls)
    bce_avg = ad.multiply(bce_sum, 1.0 / n_steps)
    dice_avg = ad.multiply(dice_sum, 1.0 / n_steps)
    cls_avg = ad.multiply(cls_sum, 1.0 / n_steps)
    if f0 is not None and anchor_sets is not None and semantics is not None and weights[3] != 0:
        ccl = ccl_loss(f0, anchor_sets, semantics, tau)
    else:
        ccl = Tensor(np.zeros(()), dtype=bce_avg.dtype)
    return total_loss(bce_avg, dice_avg, cls_avg, ccl, weights)
