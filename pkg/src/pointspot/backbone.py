"""Point-transformer backbone over primitive points.

A symmetric encoder/decoder. Each attention block performs per-channel
vector attention between a point and its k nearest neighbors: the logits
are a learnable encoding of (q_i - k_j) plus a relative-position term, the
per-channel softmax weights multiply the values elementwise (Hadamard), and
the weighted values are summed over the neighborhood.

In the first stage the neighborhood of a point is enlarged with its
locally connected primitives (attention with connections); later stages
recompute plain kNN neighborhoods at each resolution. Downsampling is
farthest-point sampling with local max pooling; the decoder mirrors the
encoder with inverse-distance interpolation plus skip connections. The
per-level decoder outputs form the feature pyramid consumed by the
spotting head.

Geometry (neighborhoods, samplings, interpolation weights) depends only on
point positions, never on parameters, so it is planned once per document
and reused across epochs when augmentation leaves positions untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .conngraph import ConnectionGraph
from .nn import MLP, LayerNorm, Linear, Module
from .points import PointSet

NEG_MASK = -1e9  # additive logit for padded neighborhood slots


class BackboneError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    stages: int = 4
    strides: tuple = (1, 4, 4, 4)  # downsample factor entering each stage
    k_nn: int = 16
    channels: tuple = (64, 128, 256, 512)
    use_acm: bool = True
    use_posenc: bool = True

    def __post_init__(self):
        if not (len(self.strides) == len(self.channels) == self.stages):
            raise BackboneError("strides and channels must list one entry per stage")
        if self.strides[0] != 1:
            raise BackboneError("first stage must keep full resolution")


TOY_BACKBONE = BackboneConfig(channels=(32, 64, 128, 256), k_nn=8)


@dataclass
class Neighborhoods:
    """Padded neighbor indices plus validity mask, one row per point."""

    idx: np.ndarray   # (N, k_max) int64
    mask: np.ndarray  # (N, k_max) bool
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def width(self) -> int:
        return self.idx.shape[1]

    def rel_positions(self, coords: np.ndarray, dtype) -> np.ndarray:
        """(N, K, 2) offsets coords[i] - coords[idx[i, :]], cached per dtype."""
        key = ("rel", np.dtype(dtype).str)
        if key not in self._cache:
            rel = coords[:, None, :] - coords[self.idx]
            self._cache[key] = rel.astype(dtype)
        return self._cache[key]

    def pad_logits(self, dtype) -> Optional[np.ndarray]:
        """(N, K, 1) additive logit mask, or None when nothing is padded."""
        key = ("pad", np.dtype(dtype).str)
        if key not in self._cache:
            if self.mask.all():
                self._cache[key] = None
            else:
                pad = np.where(self.mask, 0.0, NEG_MASK)[:, :, None]
                self._cache[key] = pad.astype(dtype)
        return self._cache[key]


def knn_neighborhoods(coords: np.ndarray, k: int) -> Neighborhoods:
    k = min(k, coords.shape[0])
    idx = kernels.knn(coords, k)
    return Neighborhoods(idx=idx, mask=np.ones(idx.shape, dtype=bool))


def acm_neighborhoods(coords: np.ndarray, k: int, conn: ConnectionGraph) -> Neighborhoods:
    """kNN rows extended with connected points, duplicates removed.

    When no point gains a connection beyond its kNN ball the plain kNN
    neighborhoods are returned unchanged, so the two paths coincide exactly.
    """
    base = knn_neighborhoods(coords, k)
    n, kb = base.idx.shape
    extras: list[list[int]] = []
    widest = kb
    for i in range(n):
        row = set(base.idx[i].tolist())
        extra = [j for j in conn.neighbors[i] if j not in row]
        extras.append(extra)
        widest = max(widest, kb + len(extra))
    if widest == kb:
        return base
    idx = np.empty((n, widest), dtype=np.int64)
    mask = np.zeros((n, widest), dtype=bool)
    idx[:, :kb] = base.idx
    mask[:, :kb] = True
    for i, extra in enumerate(extras):
        e = len(extra)
        idx[i, kb:kb + e] = extra
        mask[i, kb:kb + e] = True
        idx[i, kb + e:] = i  # padding gathers the point itself; masked out
    return Neighborhoods(idx=idx, mask=mask)


def fps_downsample(coords: np.ndarray, ratio: float, seed: int,
                   pool_k: int = 8, start: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Farthest-point subset selection plus local pooling sets.

    Returns (selected indices, pool index matrix). Each selected point pools
    over itself and up to ``pool_k`` nearest dropped points; rows are padded
    with the point itself, which is harmless under max pooling. ratio=1 is
    the identity selection.
    """
    n = coords.shape[0]
    if not 0 < ratio <= 1:
        raise BackboneError(f"downsample ratio must be in (0, 1], got {ratio}")
    m = math.ceil(n * ratio)
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    sel = kernels.fps(coords, m, start) if m < n else np.arange(n, dtype=np.int64)

    dropped = np.setdiff1d(np.arange(n, dtype=np.int64), sel)
    kp = min(pool_k, dropped.shape[0])
    pool = np.empty((m, 1 + kp), dtype=np.int64)
    pool[:, 0] = sel
    if kp > 0:
        d2 = (coords[sel, None, :] - coords[None, dropped, :]) ** 2
        d2 = d2.sum(-1)
        cols = np.broadcast_to(np.arange(dropped.shape[0]), d2.shape)
        order = np.lexsort((cols, d2), axis=-1)[:, :kp]
        pool[:, 1:] = dropped[order]
    return sel, pool


@dataclass
class GeometryPlan:
    """Parameter-free geometry of one document under one backbone config."""

    coords: list                    # (N_r, 2) float64 per level
    neigh: list                     # Neighborhoods per level (encoder/decoder)
    neigh_stage0: Neighborhoods     # stage-0 neighborhoods (ACM-extended when enabled)
    sel: list                       # per downsample step: indices into previous level
    pool: list                      # per downsample step: pooling index matrix
    up: list                        # per decoder step r: (idx, w) from level r+1 to r
    cache: dict = field(default_factory=dict)  # cross-module memo (head mask weights)


def plan_geometry(ps: PointSet, connections: Optional[ConnectionGraph],
                  cfg: BackboneConfig, seed: int = 0) -> GeometryPlan:
    """Precompute every index/weight the forward pass needs."""
    n = len(ps)
    min_points = 2 ** (cfg.stages - 1)
    if n < min_points:
        raise BackboneError(
            f"document has {n} points, need at least {min_points} for {cfg.stages} stages")
    coords = [ps.positions.astype(np.float64)]
    sel_list = []
    pool_list = []
    for r in range(1, cfg.stages):
        sel, pool = fps_downsample(coords[-1], 1.0 / cfg.strides[r], seed=seed + r,
                                   pool_k=cfg.k_nn)
        sel_list.append(sel)
        pool_list.append(pool)
        coords.append(coords[-1][sel])
    neigh = [knn_neighborhoods(c, cfg.k_nn) for c in coords]
    if cfg.use_acm and connections is not None and not connections.is_empty():
        neigh_stage0 = acm_neighborhoods(coords[0], cfg.k_nn, connections)
    else:
        neigh_stage0 = neigh[0]
    up = []
    for r in range(cfg.stages - 1):
        k = min(3, coords[r + 1].shape[0])
        up.append(kernels.knn_idw(coords[r + 1], coords[r], k, 1e-8))
    return GeometryPlan(coords=coords, neigh=neigh, neigh_stage0=neigh_stage0,
                        sel=sel_list, pool=pool_list, up=up)


class VectorAttention(Module):
    """Per-channel vector attention over explicit neighborhoods."""

    def __init__(self, dim: int, rng: np.random.Generator, use_posenc: bool = True):
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.weight_enc = MLP(dim, dim, dim, rng)  # learnable logit encoding
        self.posenc = MLP(2, dim, dim, rng) if use_posenc else None

    def __call__(self, coords: np.ndarray, feats: Tensor, neigh: Neighborhoods) -> Tensor:
        n, dim = feats.shape
        q = self.wq(feats)
        k = self.wk(feats)
        v = self.wv(feats)
        kj = ad.gather_rows(k, neigh.idx)            # (N, K, D)
        vj = ad.gather_rows(v, neigh.idx)
        gamma = ad.subtract(ad.reshape(q, (n, 1, dim)), kj)
        if self.posenc is not None:
            pe = self.posenc(Tensor(neigh.rel_positions(coords, feats.dtype)))
            gamma = ad.add(gamma, pe)
            vj = ad.add(vj, pe)
        logits = self.weight_enc(gamma)
        pad = neigh.pad_logits(feats.dtype)
        if pad is not None:
            logits = ad.add(logits, pad)
        attn = ad.softmax(logits, axis=1)
        return ad.reduce_sum(ad.multiply(attn, vj), axis=1)


class AttentionBlock(Module):
    """Pre-norm residual block: vector attention then a feed-forward map."""

    def __init__(self, dim: int, rng: np.random.Generator, use_posenc: bool = True):
        self.norm1 = LayerNorm(dim)
        self.attn = VectorAttention(dim, rng, use_posenc)
        self.proj = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = MLP(dim, 2 * dim, dim, rng)

    def __call__(self, coords: np.ndarray, feats: Tensor, neigh: Neighborhoods) -> Tensor:
        h = self.attn(coords, self.norm1(feats), neigh)
        feats = ad.add(feats, self.proj(h))
        return ad.add(feats, self.ff(self.norm2(feats)))


def upsample_interpolate(coarse_feats: Tensor, coarse_coords: np.ndarray,
                         fine_coords: np.ndarray) -> Tensor:
    """Inverse-distance average of the 3 nearest coarse points per fine point.

    A fine point closer than 1e-8 to a coarse point copies its feature
    exactly. Skip connections are added by the caller.
    """
    if coarse_coords.shape[0] == 0:
        raise BackboneError("upsample from an empty coarse set")
    k = min(3, coarse_coords.shape[0])
    idx, w = kernels.knn_idw(coarse_coords, fine_coords, k, 1e-8)
    return apply_interpolation(coarse_feats, idx, w)


def apply_interpolation(feats: Tensor, idx: np.ndarray, w: np.ndarray) -> Tensor:
    gathered = ad.gather_rows(feats, idx)
    weights = w[:, :, None].astype(feats.dtype)
    return ad.reduce_sum(ad.multiply(gathered, weights), axis=1)


@dataclass
class FeaturePyramid:
    """Per-resolution decoder features with their point coordinates."""

    features: list                  # Tensor (N_r, C_r) per level, level 0 first
    coords: list                    # np.ndarray (N_r, 2)
    parent_index: list              # level r -> indices into level r-1 (level 0: None)
    plan: Optional[GeometryPlan] = None
    stage0_attention: Optional[Tensor] = None  # first stage output, pre-downsampling

    @property
    def levels(self) -> int:
        return len(self.features)

    def sizes(self) -> tuple:
        return tuple(f.shape[0] for f in self.features)


class Backbone(Module):
    """Symmetric encoder/decoder over primitive points."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, in_dim: int = 8):
        self.cfg = cfg
        ch = cfg.channels
        self.input_proj = Linear(in_dim, ch[0], rng)
        self.enc_blocks = [AttentionBlock(ch[r], rng, cfg.use_posenc) for r in range(cfg.stages)]
        self.pool_mlps = [MLP(ch[r - 1], ch[r], ch[r], rng) for r in range(1, cfg.stages)]
        self.dec_blocks = [AttentionBlock(ch[r], rng, cfg.use_posenc) for r in range(cfg.stages - 1)]
        self.up_projs = [Linear(ch[r + 1], ch[r], rng) for r in range(cfg.stages - 1)]
        self.skip_projs = [Linear(ch[r], ch[r], rng) for r in range(cfg.stages - 1)]

    def normalize_inputs(self, ps: PointSet, scale: float) -> np.ndarray:
        """Map raw point encodings to network-scale 8-dim inputs."""
        n = len(ps)
        out = np.empty((n, 8), dtype=np.float64)
        out[:, 0:2] = ps.positions / scale
        out[:, 2] = ps.features[:, 0] / (2.0 * math.pi)
        out[:, 3] = ps.features[:, 1] / scale
        out[:, 4:8] = ps.features[:, 2:6]
        return out

    def __call__(self, ps: PointSet, connections: Optional[ConnectionGraph],
                 scale: float, seed: int = 0,
                 plan: Optional[GeometryPlan] = None) -> FeaturePyramid:
        cfg = self.cfg
        if plan is None:
            plan = plan_geometry(ps, connections, cfg, seed)
        dtype = self.input_proj.w.data.dtype
        feats = self.input_proj(Tensor(self.normalize_inputs(ps, scale).astype(dtype)))

        enc_feats = []
        stage0_attention = None
        for r in range(cfg.stages):
            if r > 0:
                pooled = ad.gather_rows(self.pool_mlps[r - 1](feats), plan.pool[r - 1])
                feats = ad.reduce_max(pooled, axis=1)
            neigh = plan.neigh_stage0 if r == 0 else plan.neigh[r]
            feats = self.enc_blocks[r](plan.coords[r], feats, neigh)
            if r == 0:
                stage0_attention = feats
            enc_feats.append(feats)

        dec_feats = [None] * cfg.stages
        dec_feats[cfg.stages - 1] = enc_feats[cfg.stages - 1]
        for r in range(cfg.stages - 2, -1, -1):
            idx, w = plan.up[r]
            up = apply_interpolation(self.up_projs[r](dec_feats[r + 1]), idx, w)
            merged = ad.add(up, self.skip_projs[r](enc_feats[r]))
            dec_feats[r] = self.dec_blocks[r](plan.coords[r], merged, plan.neigh[r])

        return FeaturePyramid(features=dec_feats, coords=plan.coords,
                              parent_index=[None] + plan.sel, plan=plan,
                              stage0_attention=stage0_attention)


def vector_attention(block: VectorAttention, coords: np.ndarray, feats: Tensor,
                     neigh: Neighborhoods) -> Tensor:
    """Functional form of the attention operator (testing surface)."""
    return block(coords, feats, neigh)


def acm_attention(block: VectorAttention, coords: np.ndarray, feats: Tensor,
                  knn_neigh: Neighborhoods, conn: ConnectionGraph) -> Tensor:
    """Attention over kNN neighborhoods united with connection sets."""
    k = knn_neigh.idx.shape[1]
    merged = acm_neighborhoods(coords, k, conn)
    return block(coords, feats, merged)
