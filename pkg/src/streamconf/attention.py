"""Multi-head self-attention with relative positions, masks and map statistics.

Masks combine the block-diagonal chunk structure of strict streaming with an
optional central-band restriction. Relative positions follow the
Transformer-XL decomposition (content/position terms with u/v bias vectors),
computed within the chunk so that masked-batch and incremental execution
agree.
"""

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidMaskError, ShapeError, StatsError
from .numerics import masked_softmax, softmax_backward


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------

@dataclass
class AttentionMask:
    t: int
    bits: np.ndarray  # [T, T] uint8
    provenance: str

    def ones(self):
        return int(self.bits.sum())

    def density(self):
        return self.ones() / float(self.t * self.t)


def full_mask(t):
    return AttentionMask(t, np.ones((t, t), dtype=np.uint8), "full")


def band_mask(t, n_diag):
    """Keep the n_diag central diagonals: bits[i][j] = 1 iff |i-j| <= n_diag//2."""
    if n_diag % 2 == 0 or n_diag < 1:
        raise ConfigError(f"band_mask: n_diag must be odd and >= 1, got {n_diag}")
    h = n_diag // 2
    idx = np.arange(t)
    bits = (np.abs(idx[:, None] - idx[None, :]) <= h).astype(np.uint8)
    return AttentionMask(t, bits, f"band({n_diag})")


def band_density(t, n_diag):
    """Closed-form fraction of ones in band_mask(t, n_diag)."""
    h = n_diag // 2
    if n_diag >= 2 * t - 1:
        return 1.0
    return (t * n_diag - h * (h + 1)) / float(t * t)


def chunk_mask(t, chunk_frames):
    """Block-diagonal mask: positions attend only within their own chunk."""
    if chunk_frames < 1:
        raise ConfigError(f"chunk_mask: chunk_frames must be >= 1, got {chunk_frames}")
    blocks = np.arange(t) // chunk_frames
    bits = (blocks[:, None] == blocks[None, :]).astype(np.uint8)
    return AttentionMask(t, bits, f"chunk({chunk_frames})")


def combine_masks(a, b):
    if a.t != b.t:
        raise ShapeError(f"combine_masks: lengths differ: {a.t} vs {b.t}")
    return AttentionMask(a.t, a.bits & b.bits, f"and({a.provenance},{b.provenance})")


# ---------------------------------------------------------------------------
# Multi-head self-attention
# ---------------------------------------------------------------------------

@dataclass
class MhsaWeights:
    w_q: np.ndarray  # [D, D]
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_pos: np.ndarray
    u_bias: np.ndarray  # [heads, D/heads]
    v_bias: np.ndarray
    heads: int


def init_mhsa(rng, d, heads, dtype=np.float64):
    if d % heads:
        raise ConfigError(f"model width {d} not divisible by heads {heads}")
    dh = d // heads
    sq = lambda: rng.glorot((d, d), d, d, dtype)
    return MhsaWeights(sq(), sq(), sq(), sq(), sq(),
                       rng.glorot((heads, dh), d, d, dtype),
                       rng.glorot((heads, dh), d, d, dtype), heads)


def sinusoid_table(max_rel, d, dtype=np.float64):
    """Sinusoidal embeddings for relative offsets -max_rel..max_rel (index rel+max_rel)."""
    rel = np.arange(-max_rel, max_rel + 1, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d, 2, dtype=np.float64) * -(math.log(10000.0) / d))
    table = np.zeros((2 * max_rel + 1, d), dtype=np.float64)
    table[:, 0::2] = np.sin(rel * div)
    table[:, 1::2] = np.cos(rel * div)
    return table.astype(dtype)


def _project_heads(x, w, heads):
    t, d = x.shape
    return (x @ w).reshape(t, heads, d // heads).transpose(1, 0, 2)  # [H, T, dh]


def mhsa_forward(x, w, mask=None, max_rel=None, need_maps=True):
    """Scaled dot-product attention with relative position terms.

    Returns (y, maps); maps are the post-softmax attention matrices
    [heads, T, T] (None when need_maps is False). Relative offsets are
    clipped to max_rel, which masked-batch execution sets to the chunk
    length minus one so in-chunk scores match per-chunk execution.
    """
    t, d = x.shape
    if w.w_q.shape != (d, d):
        raise ShapeError(f"mhsa_forward: weights {w.w_q.shape} vs input {x.shape}")
    if mask is None:
        mask = full_mask(t)
    if mask.t != t:
        raise ShapeError(f"mhsa_forward: mask length {mask.t} vs sequence {t}")
    if not np.all(mask.bits.any(axis=1)):
        raise InvalidMaskError("mhsa_forward: mask has a fully-masked row")
    heads = w.heads
    dh = d // heads
    if max_rel is None:
        max_rel = t - 1
    scale = 1.0 / math.sqrt(dh)

    q = _project_heads(x, w.w_q, heads)
    k = _project_heads(x, w.w_k, heads)
    v = _project_heads(x, w.w_v, heads)
    table = sinusoid_table(max_rel, d, x.dtype)
    r = (table @ w.w_pos).reshape(2 * max_rel + 1, heads, dh)

    idx = np.arange(t)
    rel_idx = np.clip(idx[:, None] - idx[None, :], -max_rel, max_rel) + max_rel  # [T,T]

    y = np.empty((t, d), dtype=x.dtype)
    maps = np.empty((heads, t, t), dtype=x.dtype) if need_maps else None
    rows = idx[:, None]
    for h in range(heads):
        content = (q[h] + w.u_bias[h]) @ k[h].T
        pos_rows = (q[h] + w.v_bias[h]) @ r[:, h, :].T  # [T, 2*max_rel+1]
        scores = (content + pos_rows[rows, rel_idx]) * scale
        p = masked_softmax(scores, mask.bits)
        if need_maps:
            maps[h] = p
        y[:, h * dh:(h + 1) * dh] = p @ v[h]
    return y @ w.w_o, maps


def mhsa_backward(x, w, mask, upstream_grad, max_rel=None):
    """Analytic gradients of mhsa_forward w.r.t. x and all weights.

    Returns (grad_x, MhsaWeights of gradients). Intended for gradient
    checking at small sizes; recomputes the forward intermediates.
    """
    t, d = x.shape
    if upstream_grad.shape != (t, d):
        raise ShapeError(f"mhsa_backward: upstream {upstream_grad.shape} vs input {x.shape}")
    if mask is None:
        mask = full_mask(t)
    heads = w.heads
    dh = d // heads
    if max_rel is None:
        max_rel = t - 1
    scale = 1.0 / math.sqrt(dh)

    q = _project_heads(x, w.w_q, heads)
    k = _project_heads(x, w.w_k, heads)
    v = _project_heads(x, w.w_v, heads)
    table = sinusoid_table(max_rel, d, np.float64)
    r = (table @ w.w_pos).reshape(2 * max_rel + 1, heads, dh)
    idx = np.arange(t)
    rel_idx = np.clip(idx[:, None] - idx[None, :], -max_rel, max_rel) + max_rel
    rows = idx[:, None]

    concat = np.empty((t, d), dtype=x.dtype)
    probs = []
    for h in range(heads):
        content = (q[h] + w.u_bias[h]) @ k[h].T
        pos_rows = (q[h] + w.v_bias[h]) @ r[:, h, :].T
        p = masked_softmax((content + pos_rows[rows, rel_idx]) * scale, mask.bits)
        probs.append(p)
        concat[:, h * dh:(h + 1) * dh] = p @ v[h]

    g_wo = concat.T @ upstream_grad
    g_concat = upstream_grad @ w.w_o.T

    gq = np.zeros_like(q)
    gk = np.zeros_like(k)
    gv = np.zeros_like(v)
    gu = np.zeros_like(w.u_bias)
    gvb = np.zeros_like(w.v_bias)
    g_r = np.zeros_like(r)
    for h in range(heads):
        p = probs[h]
        g_out_h = g_concat[:, h * dh:(h + 1) * dh]
        gp = g_out_h @ v[h].T
        gv[h] = p.T @ g_out_h
        gs = softmax_backward(p, gp) * scale
        # content term
        gq[h] += gs @ k[h]
        gk[h] = gs.T @ (q[h] + w.u_bias[h])
        gu[h] = (gs @ k[h]).sum(axis=0)
        # position term: score += (q_i + v_h) . r[rel(i,j), h]
        rg = r[rel_idx, h, :]  # [T, T, dh]
        gq[h] += np.einsum("ij,ijd->id", gs, rg)
        gvb[h] = np.einsum("ij,ijd->d", gs, rg)
        g_rg = gs[:, :, None] * (q[h] + w.v_bias[h])[:, None, :]
        np.add.at(g_r, (rel_idx, h), g_rg)

    g_wpos = table.T @ g_r.reshape(2 * max_rel + 1, d)

    def unproject(g):  # [H, T, dh] -> [T, D]
        return g.transpose(1, 0, 2).reshape(t, d)

    gq_f, gk_f, gv_f = unproject(gq), unproject(gk), unproject(gv)
    grad_x = gq_f @ w.w_q.T + gk_f @ w.w_k.T + gv_f @ w.w_v.T
    grads = MhsaWeights(
        w_q=x.T @ gq_f, w_k=x.T @ gk_f, w_v=x.T @ gv_f,
        w_o=g_wo, w_pos=g_wpos, u_bias=gu, v_bias=gvb, heads=heads,
    )
    return grad_x, grads


# ---------------------------------------------------------------------------
# Mean attention maps
# ---------------------------------------------------------------------------

class AttentionStats:
    """Per-layer running mean of head-averaged attention maps at a fixed length.

    Maps are averaged over heads on accumulation and over samples on
    finalization; single-writer, mergeable for parallel accumulation.
    """

    def __init__(self, layer_count, t):
        self.layer_count = layer_count
        self.t = t
        self.sums = np.zeros((layer_count, t, t), dtype=np.float64)
        self.sample_count = np.zeros(layer_count, dtype=np.int64)

    def accumulate(self, maps, layer):
        if maps.shape[-1] != self.t:
            raise StatsError(f"accumulate: map length {maps.shape[-1]} vs stats length {self.t}")
        self.sums[layer] += maps.mean(axis=0)
        self.sample_count[layer] += 1

    def merge(self, other):
        if other.t != self.t or other.layer_count != self.layer_count:
            raise StatsError("merge: incompatible stats shapes")
        self.sums += other.sums
        self.sample_count += other.sample_count

    def mean_maps(self):
        counts = np.maximum(self.sample_count, 1)[:, None, None]
        return self.sums / counts

    def write_csv(self, out_dir, prefix="attention_layer"):
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for layer, mean in enumerate(self.mean_maps()):
            path = os.path.join(out_dir, f"{prefix}_{layer:02d}.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                for row in mean:
                    writer.writerow([f"{v:.6g}" for v in row])
            paths.append(path)
        return paths
