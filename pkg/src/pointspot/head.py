"""Masked-attention query decoder for symbol spotting.

A fixed set of learnable queries is refined over the four coarsest pyramid
levels, coarse to fine, for L rounds. Before each refinement the current
soft point mask is downsampled to the level's resolution by KNN
inverse-distance interpolation (K = 4^r) and thresholded into an additive
attention mask: visible points contribute 0, hidden points a large negative
sentinel. After every refinement the queries re-predict classes (softmax
over C+1, the extra slot meaning "no object") and point masks (sigmoid of
query embeddings dotted with level-0 mask features).

Inference assembles per-point labels by argmax: each point goes to the kept
query with the highest class-confidence times mask-score product among
those whose mask exceeds the threshold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .backbone import FeaturePyramid
from .document import BACKGROUND, NO_INSTANCE, Category, PanopticPrediction
from .nn import MLP, LayerNorm, Linear, Module

NEG_MASK = -1e9


class HeadError(ValueError):
    pass


@dataclass(frozen=True)
class HeadConfig:
    num_queries: int = 500
    dim: int = 256
    layers: int = 3
    share_weights: bool = True
    mask_threshold: float = 0.5
    downsample: str = "knn_interp"  # knn_interp | knn_max | knn_avg | bilinear
    levels: int = 4


TOY_HEAD = HeadConfig(num_queries=16, dim=64)

_DOWNSAMPLE_MODES = ("knn_interp", "knn_max", "knn_avg", "bilinear")


# ---------------------------------------------------------------------------
# attention-mask machinery (operates on detached numpy masks)
# ---------------------------------------------------------------------------

def knn_interpolate_mask(mask0: np.ndarray, coords0: np.ndarray,
                         coords_r: np.ndarray, r: int) -> np.ndarray:
    """Downsample soft masks (O, N0) to level r by KNN inverse-distance.

    K = 4^r nearest level-0 points per target, clamped to N0 with a warning;
    a target sitting on a source point (d < 1e-8) copies its value.
    """
    n0 = coords0.shape[0]
    k = 4 ** r
    if k > n0:
        warnings.warn(f"knn_interpolate_mask: K={k} clamped to {n0} source points")
        k = n0
    idx, w = kernels.knn_idw(coords0, coords_r, k, 1e-8)
    return np.einsum("tk,qtk->qt", w, mask0[:, idx])


def knn_pool_mask(mask0: np.ndarray, coords0: np.ndarray, coords_r: np.ndarray,
                  r: int, mode: str) -> np.ndarray:
    """Max/average pooling over the same K nearest points (ablation paths)."""
    n0 = coords0.shape[0]
    k = min(4 ** r, n0)
    idx, _ = kernels.knn_idw(coords0, coords_r, k, 1e-8)
    vals = mask0[:, idx]
    return vals.max(axis=2) if mode == "max" else vals.mean(axis=2)


def bilinear_mask_downsample(mask0: np.ndarray, coords0: np.ndarray,
                             coords_r: np.ndarray) -> np.ndarray:
    """Pixel-style surrogate: rasterize to a coarse grid, sample bilinearly.

    Stands in for image-space bilinear downsampling, which has no exact
    analogue on sparse points; cell averaging deliberately loses detail.
    """
    nr = coords_r.shape[0]
    g = max(2, int(math.floor(math.sqrt(nr))))
    lo = coords0.min(axis=0)
    hi = coords0.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    cell = np.clip(((coords0 - lo) / span * g).astype(np.int64), 0, g - 1)
    flat = cell[:, 0] * g + cell[:, 1]
    counts = np.bincount(flat, minlength=g * g).astype(np.float64)
    grid = np.zeros((mask0.shape[0], g * g))
    for q in range(mask0.shape[0]):
        grid[q] = np.bincount(flat, weights=mask0[q], minlength=g * g)
    grid /= np.maximum(counts, 1.0)
    grid = grid.reshape(-1, g, g)

    # bilinear sample at target positions on the cell-center lattice
    pos = (coords_r - lo) / span * g - 0.5
    x0 = np.clip(np.floor(pos[:, 0]).astype(np.int64), 0, g - 2)
    y0 = np.clip(np.floor(pos[:, 1]).astype(np.int64), 0, g - 2)
    fx = np.clip(pos[:, 0] - x0, 0.0, 1.0)
    fy = np.clip(pos[:, 1] - y0, 0.0, 1.0)
    v00 = grid[:, x0, y0]
    v10 = grid[:, x0 + 1, y0]
    v01 = grid[:, x0, y0 + 1]
    v11 = grid[:, x0 + 1, y0 + 1]
    return (v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy)
            + v01 * (1 - fx) * fy + v11 * fx * fy)


def threshold_attention_mask(mask_values: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """0 where the mask is strictly above threshold, the -inf sentinel elsewhere."""
    return np.where(mask_values > threshold, 0.0, NEG_MASK)


def attention_mask_for_level(mask0: np.ndarray, coords0: np.ndarray, coords_r: np.ndarray,
                             r: int, mode: str, threshold: float = 0.5) -> np.ndarray:
    """Soft-downsample then threshold; all-hidden query rows fall back to 0."""
    if mode == "knn_interp":
        soft = knn_interpolate_mask(mask0, coords0, coords_r, r)
    elif mode in ("knn_max", "knn_avg"):
        soft = knn_pool_mask(mask0, coords0, coords_r, r, mode[4:])
    elif mode == "bilinear":
        soft = bilinear_mask_downsample(mask0, coords0, coords_r)
    else:
        raise HeadError(f"unknown downsample mode {mode!r}")
    a = threshold_attention_mask(soft, threshold)
    dead = (a < 0).all(axis=1)
    a[dead] = 0.0
    return a


# ---------------------------------------------------------------------------
# decoder modules
# ---------------------------------------------------------------------------

class ScaledDotAttention(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.scale = 1.0 / math.sqrt(dim)

    def __call__(self, q_in: Tensor, kv_in: Tensor, additive_mask: Optional[np.ndarray],
                 q_pos: Optional[Tensor] = None) -> Tensor:
        q = self.wq(ad.add(q_in, q_pos) if q_pos is not None else q_in)
        k = self.wk(kv_in)
        v = self.wv(kv_in)
        logits = ad.multiply(ad.matmul(q, k.T), self.scale)
        if additive_mask is not None:
            logits = ad.add(logits, additive_mask.astype(logits.dtype))
        return self.wo(ad.matmul(ad.softmax(logits, axis=-1), v))


class QueryDecoderLayer(Module):
    """Masked cross-attention, query self-attention, feed-forward (post-norm)."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.cross = ScaledDotAttention(dim, rng)
        self.norm1 = LayerNorm(dim)
        self.self_attn = ScaledDotAttention(dim, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = MLP(dim, 2 * dim, dim, rng)
        self.norm3 = LayerNorm(dim)

    def __call__(self, queries: Tensor, level_feats: Tensor,
                 attn_mask: Optional[np.ndarray], q_pos: Tensor) -> Tensor:
        x = self.norm1(ad.add(queries, self.cross(queries, level_feats, attn_mask, q_pos)))
        x = self.norm2(ad.add(x, self.self_attn(x, x, None, q_pos)))
        return self.norm3(ad.add(x, self.ffn(x)))


@dataclass
class HeadStep:
    classes: Tensor        # (O, C+1) probabilities, rows sum to 1
    class_logits: Tensor   # (O, C+1)
    mask_logits: Tensor    # (O, N0)
    masks: Tensor          # (O, N0) in [0, 1]


@dataclass
class HeadOutput:
    steps: list

    @property
    def final(self) -> HeadStep:
        return self.steps[-1]


class SpottingHead(Module):
    """L rounds of query refinement over the four coarsest pyramid levels."""

    def __init__(self, cfg: HeadConfig, num_classes: int, level_dims: tuple,
                 rng: np.random.Generator):
        if len(level_dims) < cfg.levels:
            raise HeadError(f"need {cfg.levels} pyramid levels, got {len(level_dims)}")
        self.cfg = cfg
        self.num_classes = num_classes
        d = cfg.dim
        self.query_embed = Tensor(rng.normal(0.0, 0.5, (cfg.num_queries, d)), requires_grad=True)
        self.query_pos = Tensor(rng.normal(0.0, 0.5, (cfg.num_queries, d)), requires_grad=True)
        self.level_projs = [Linear(level_dims[r], d, rng) for r in range(cfg.levels)]
        self.mask_proj = Linear(level_dims[0], d, rng)
        n_layers = 1 if cfg.share_weights else cfg.layers
        self.decoder_layers = [QueryDecoderLayer(d, rng) for _ in range(n_layers)]
        self.class_head = Linear(d, num_classes + 1, rng)
        self.mask_head = MLP(d, d, d, rng)

    def predict(self, queries: Tensor, mask_feats: Tensor) -> HeadStep:
        class_logits = self.class_head(queries)
        logits = ad.matmul(self.mask_head(queries), mask_feats.T)
        return HeadStep(classes=ad.softmax(class_logits, axis=-1), class_logits=class_logits,
                        mask_logits=logits, masks=ad.sigmoid(logits))

    def __call__(self, pyramid: FeaturePyramid, force_visible: bool = False) -> HeadOutput:
        cfg = self.cfg
        if pyramid.levels < cfg.levels:
            raise HeadError(f"pyramid has {pyramid.levels} levels, head needs {cfg.levels}")
        coords0 = pyramid.coords[0]
        level_feats = [self.level_projs[r](pyramid.features[r]) for r in range(cfg.levels)]
        mask_feats = self.mask_proj(pyramid.features[0])

        queries = self.query_embed
        steps = [self.predict(queries, mask_feats)]
        for l in range(cfg.layers):
            layer = self.decoder_layers[0 if cfg.share_weights else l]
            for r in range(cfg.levels - 1, -1, -1):
                if force_visible:
                    attn_mask = None
                else:
                    current = steps[-1].masks.data
                    attn_mask = self._level_attention_mask(current, coords0, pyramid, r)
                queries = layer(queries, level_feats[r], attn_mask, self.query_pos)
                steps.append(self.predict(queries, mask_feats))
        return HeadOutput(steps=steps)

    def _level_attention_mask(self, mask0: np.ndarray, coords0: np.ndarray,
                              pyramid: FeaturePyramid, r: int) -> np.ndarray:
        coords_r = pyramid.coords[r]
        mode = self.cfg.downsample
        if mode == "knn_interp" and pyramid.plan is not None:
            key = ("mask_down", r)
            if key not in pyramid.plan.cache:
                n0 = coords0.shape[0]
                k = 4 ** r
                if k > n0:
                    warnings.warn(f"knn_interpolate_mask: K={k} clamped to {n0} source points")
                    k = n0
                pyramid.plan.cache[key] = kernels.knn_idw(coords0, coords_r, k, 1e-8)
            idx, w = pyramid.plan.cache[key]
            soft = np.einsum("tk,qtk->qt", w, mask0[:, idx])
            a = threshold_attention_mask(soft, self.cfg.mask_threshold)
            dead = (a < 0).all(axis=1)
            a[dead] = 0.0
            return a
        return attention_mask_for_level(mask0, coords0, coords_r, r, mode,
                                        self.cfg.mask_threshold)


def assemble_panoptic(classes: np.ndarray, masks: np.ndarray,
                      categories: dict[int, Category], class_ids: list,
                      doc_id: str = "", mask_threshold: float = 0.5) -> PanopticPrediction:
    """Argmax assembly of per-point labels from query predictions.

    ``class_ids`` maps model class indices to category ids; the extra last
    column of ``classes`` is the no-object slot. Queries predicting
    no-object are dropped. Each point joins the surviving query with the
    best confidence * mask product among those whose mask exceeds the
    threshold; untouched points stay background. Thing queries mint dense
    per-class instance ids; stuff segments of one class merge per document.
    """
    n_queries, n_points = masks.shape
    n_classes = len(class_ids)
    best = classes.argmax(axis=1)
    conf = classes[np.arange(n_queries), best]
    kept = best < n_classes

    semantics = np.full(n_points, BACKGROUND, dtype=np.int64)
    instances = np.full(n_points, NO_INSTANCE, dtype=np.int64)
    score = conf[:, None] * masks
    score[~kept] = -np.inf
    score[masks <= mask_threshold] = -np.inf
    owner = score.argmax(axis=0)
    owned = score[owner, np.arange(n_points)] > -np.inf

    next_instance: dict[int, int] = {}
    for q in range(n_queries):
        pts = np.flatnonzero(owned & (owner == q))
        if pts.size == 0 or not kept[q]:
            continue
        cat_id = int(class_ids[best[q]])
        semantics[pts] = cat_id
        cat = categories.get(cat_id)
        if cat is not None and cat.is_thing:
            inst = next_instance.get(cat_id, 0)
            next_instance[cat_id] = inst + 1
            instances[pts] = inst
    return PanopticPrediction(doc_id, semantics, instances)
