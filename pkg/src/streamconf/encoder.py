"""Streaming Conformer encoder variants and the strict chunked execution engine.

Three variants share the block layout (half-residual feed-forward sandwich
around a middle module and a convolution module): the baseline keeps
self-attention, the soft variant swaps in the deformable-convolution module,
the hard variant has no middle module at all. Chunking is applied to raw
feature frames before subsampling; no state crosses chunk boundaries.
"""

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import attention as att
from . import deformconv as dc
from .errors import ConfigError, SearchError, ShapeError
from .numerics import LN_EPS, Rng, depthwise_conv1d, glu, layer_norm, swish

VARIANTS = ("baseline", "soft", "hard")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class EncoderConfig:
    variant: str = "baseline"
    d_model: int = 512
    layers: int = 12
    heads: int = 8
    ffn_dim: int = 2048
    conv_kernel: int = 31
    deform_kernel: int = 5
    deform_groups: int = 8
    feature_dim: int = 80
    frame_hop_ms: int = 10
    subsample_factor: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.deform_kernel % 2 == 0:
            raise ConfigError(f"deform_kernel must be odd, got {self.deform_kernel}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.d_model % self.deform_groups:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by deform_groups {self.deform_groups}")

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


@dataclass
class ChunkSpec:
    chunk_ms: int
    frames_per_chunk: int = field(init=False)
    raw_frames: int = field(init=False)

    config: EncoderConfig = None

    def __post_init__(self):
        cfg = self.config or EncoderConfig()
        stride_ms = cfg.frame_hop_ms * cfg.subsample_factor
        if self.chunk_ms % stride_ms:
            raise ConfigError(
                f"chunk of {self.chunk_ms} ms does not map to whole post-subsampling"
                f" frames (stride {stride_ms} ms)")
        self.frames_per_chunk = self.chunk_ms // stride_ms
        self.raw_frames = self.chunk_ms // cfg.frame_hop_ms


# ---------------------------------------------------------------------------
# Weight containers
# ---------------------------------------------------------------------------

@dataclass
class LnParams:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class FfnWeights:
    norm: LnParams
    w1: np.ndarray  # [ffn_dim, D]
    b1: np.ndarray
    w2: np.ndarray  # [D, ffn_dim]
    b2: np.ndarray


@dataclass
class ConvModuleWeights:
    norm: LnParams
    pw1: np.ndarray  # [2D, D]
    pw1_b: np.ndarray
    dw: np.ndarray   # [D, K]
    dw_b: np.ndarray
    inner_norm: LnParams
    pw2: np.ndarray  # [D, D]
    pw2_b: np.ndarray


@dataclass
class SubsampleWeights:
    w1: np.ndarray  # [D, F, 2]
    b1: np.ndarray
    w2: np.ndarray  # [D, D, 2]
    b2: np.ndarray
    proj: np.ndarray  # [D, D]
    proj_b: np.ndarray


@dataclass
class ConformerBlock:
    ffn1: FfnWeights
    mid_norm: LnParams          # None for the hard variant
    mid_attn: att.MhsaWeights   # baseline only
    mid_deform: dc.DeformWeights  # soft only
    mid_post_norm: LnParams     # soft only (inside the deform module)
    conv: ConvModuleWeights
    ffn2: FfnWeights
    final_norm: LnParams


@dataclass
class Encoder:
    config: EncoderConfig
    subsample: SubsampleWeights
    blocks: list


def _init_ln(d, dtype):
    return LnParams(np.ones(d, dtype=dtype), np.zeros(d, dtype=dtype))


def _init_ffn(rng, d, ffn_dim, dtype):
    return FfnWeights(
        norm=_init_ln(d, dtype),
        w1=rng.glorot((ffn_dim, d), d, ffn_dim, dtype), b1=np.zeros(ffn_dim, dtype=dtype),
        w2=rng.glorot((d, ffn_dim), ffn_dim, d, dtype), b2=np.zeros(d, dtype=dtype),
    )


def _init_conv_module(rng, d, k, dtype):
    return ConvModuleWeights(
        norm=_init_ln(d, dtype),
        pw1=rng.glorot((2 * d, d), d, 2 * d, dtype), pw1_b=np.zeros(2 * d, dtype=dtype),
        dw=rng.glorot((d, k), k, k, dtype), dw_b=np.zeros(d, dtype=dtype),
        inner_norm=_init_ln(d, dtype),
        pw2=rng.glorot((d, d), d, d, dtype), pw2_b=np.zeros(d, dtype=dtype),
    )


def init_encoder(config, seed, dtype=np.float32):
    """Build an encoder with deterministic seeded initialization."""
    rng = Rng(seed)
    d, f = config.d_model, config.feature_dim
    sub = SubsampleWeights(
        w1=rng.glorot((d, f, 2), 2 * f, d, dtype), b1=np.zeros(d, dtype=dtype),
        w2=rng.glorot((d, d, 2), 2 * d, d, dtype), b2=np.zeros(d, dtype=dtype),
        proj=rng.glorot((d, d), d, d, dtype), proj_b=np.zeros(d, dtype=dtype),
    )
    blocks = []
    for _ in range(config.layers):
        mid_norm = mid_attn = mid_deform = mid_post = None
        if config.variant == "baseline":
            mid_norm = _init_ln(d, dtype)
            mid_attn = att.init_mhsa(rng, d, config.heads, dtype)
        elif config.variant == "soft":
            mid_norm = _init_ln(d, dtype)
            mid_deform = dc.init_deform(rng, d, d, config.deform_kernel,
                                        config.deform_groups, config.deform_groups, dtype)
            mid_post = _init_ln(d, dtype)
        blocks.append(ConformerBlock(
            ffn1=_init_ffn(rng, d, config.ffn_dim, dtype),
            mid_norm=mid_norm, mid_attn=mid_attn,
            mid_deform=mid_deform, mid_post_norm=mid_post,
            conv=_init_conv_module(rng, d, config.conv_kernel, dtype),
            ffn2=_init_ffn(rng, d, config.ffn_dim, dtype),
            final_norm=_init_ln(d, dtype),
        ))
    return Encoder(config, sub, blocks)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _strided_conv_k2s2(x, w, b):
    # windows never straddle even boundaries, so chunk-multiples of 4 raw
    # frames subsample identically whole-sequence or per chunk
    t = (x.shape[0] // 2) * 2
    return x[0:t:2] @ w[:, :, 0].T + x[1:t:2] @ w[:, :, 1].T + b


def subsample(features, w):
    """Two stride-2 kernel-2 convs with Swish, then a linear projection."""
    if features.shape[0] < 4:
        raise ShapeError(f"subsample: need at least 4 frames, got {features.shape[0]}")
    h = swish(_strided_conv_k2s2(features, w.w1, w.b1))
    h = swish(_strided_conv_k2s2(h, w.w2, w.b2))
    return h @ w.proj.T + w.proj_b


def subsampled_length(t):
    return (t // 2) // 2


def _ffn(x, w):
    h = swish(layer_norm(x, w.norm.gamma, w.norm.beta) @ w.w1.T + w.b1)
    return h @ w.w2.T + w.b2


def _conv_module(x, w):
    h = layer_norm(x, w.norm.gamma, w.norm.beta) @ w.pw1.T + w.pw1_b
    h = glu(h)
    h = depthwise_conv1d(h, w.dw) + w.dw_b
    h = swish(layer_norm(h, w.inner_norm.gamma, w.inner_norm.beta))
    return h @ w.pw2.T + w.pw2_b


def _slices(slice_lens):
    start = 0
    for n in slice_lens:
        yield start, start + n
        start += n


def block_forward(x, block, variant, slice_lens=None, mask=None, max_rel=None,
                  need_maps=False):
    """One Conformer block. Convolutional paths run per chunk slice; attention
    runs over the whole input under the supplied mask (masked-batch mode) or
    over the single chunk (incremental mode). Returns (y, maps or None)."""
    t = x.shape[0]
    if slice_lens is None:
        slice_lens = [t]
    h = x + 0.5 * _ffn(x, block.ffn1)
    maps = None
    if variant == "baseline":
        a_in = layer_norm(h, block.mid_norm.gamma, block.mid_norm.beta)
        y_att, maps = att.mhsa_forward(a_in, block.mid_attn, mask,
                                       max_rel=max_rel, need_maps=need_maps)
        h = h + y_att
    elif variant == "soft":
        out = np.empty_like(h)
        for a, b in _slices(slice_lens):
            d_in = layer_norm(h[a:b], block.mid_norm.gamma, block.mid_norm.beta)
            out[a:b] = dc.deform_module_forward(
                d_in, block.mid_deform,
                block.mid_post_norm.gamma, block.mid_post_norm.beta)
        h = h + out
    # hard: no middle computation at all
    conv_out = np.empty_like(h)
    for a, b in _slices(slice_lens):
        conv_out[a:b] = _conv_module(h[a:b], block.conv)
    h = h + conv_out
    h = h + 0.5 * _ffn(h, block.ffn2)
    return layer_norm(h, block.final_norm.gamma, block.final_norm.beta), maps


def _pad_features(features, raw_frames):
    t = features.shape[0]
    n_chunks = max(1, -(-t // raw_frames))
    padded_t = n_chunks * raw_frames
    if padded_t != t:
        padded = np.zeros((padded_t, features.shape[1]), dtype=features.dtype)
        padded[:t] = features
        features = padded
    return features, n_chunks


def encode_incremental(features, enc, chunk, collect_stats=False):
    """Strict streaming: split into raw-frame chunks, encode each independently.

    Returns (outputs [T', d_model], AttentionStats or None).
    """
    cfg = enc.config
    features, n_chunks = _pad_features(features, chunk.raw_frames)
    c = chunk.frames_per_chunk
    stats = None
    if collect_stats and cfg.variant == "baseline":
        stats = att.AttentionStats(cfg.layers, c)
    outs = []
    for i in range(n_chunks):
        seg = features[i * chunk.raw_frames:(i + 1) * chunk.raw_frames]
        h = subsample(seg, enc.subsample)
        for layer, block in enumerate(enc.blocks):
            h, maps = block_forward(h, block, cfg.variant,
                                    need_maps=stats is not None)
            if stats is not None and maps is not None:
                stats.accumulate(maps, layer)
        outs.append(h)
    return np.concatenate(outs, axis=0), stats


def encode_masked_batch(features, enc, chunk, extra_band=None, collect_stats=False):
    """Whole-sequence execution with a block-diagonal (and optional band) mask.

    Equivalent to encode_incremental when extra_band is None; attention cost
    is quadratic in total length. Returns (outputs, AttentionStats or None).
    """
    cfg = enc.config
    features, n_chunks = _pad_features(features, chunk.raw_frames)
    c = chunk.frames_per_chunk
    h = subsample(features, enc.subsample)
    t = h.shape[0]
    mask = att.chunk_mask(t, c)
    if extra_band is not None:
        mask = att.combine_masks(mask, att.band_mask(t, extra_band))
    slice_lens = [c] * n_chunks
    stats = None
    if collect_stats and cfg.variant == "baseline":
        stats = att.AttentionStats(cfg.layers, c)
    for layer, block in enumerate(enc.blocks):
        h, maps = block_forward(h, block, cfg.variant, slice_lens=slice_lens,
                                mask=mask, max_rel=c - 1,
                                need_maps=stats is not None)
        if stats is not None and maps is not None:
            for a, b in _slices(slice_lens):
                stats.accumulate(maps[:, a:b, a:b], layer)
    return h, stats


# ---------------------------------------------------------------------------
# Parameter counting
# ---------------------------------------------------------------------------

def _count_ln(d):
    return 2 * d


def _count_ffn(d, ffn_dim):
    return _count_ln(d) + ffn_dim * d + ffn_dim + d * ffn_dim + d


def _count_conv_module(d, k):
    return (_count_ln(d) + 2 * d * d + 2 * d + d * k + d
            + _count_ln(d) + d * d + d)


def _count_middle(config):
    d = config.d_model
    if config.variant == "baseline":
        return _count_ln(d) + 5 * d * d + 2 * d
    if config.variant == "soft":
        k, g = config.deform_kernel, config.deform_groups
        deform = d * (d // g) * k + d + k * g * d + k * g
        return _count_ln(d) + deform + _count_ln(d)
    return 0


def count_parameters(config, include_transducer=False, vocab=64, d_pred=None):
    """Exact scalar parameter count of the constructed model, no allocation."""
    d, f = config.d_model, config.feature_dim
    total = (d * f * 2 + d) + (d * d * 2 + d) + (d * d + d)  # subsampling
    per_layer = (2 * _count_ffn(d, config.ffn_dim) + _count_middle(config)
                 + _count_conv_module(d, config.conv_kernel) + _count_ln(d))
    total += config.layers * per_layer
    if include_transducer:
        h = d_pred or 512
        total += (vocab + 1) * h                     # embedding
        total += 4 * h * h + 4 * h * h + 4 * h       # 1-layer LSTM
        total += h * d + h * h + h                   # joint input maps
        total += (vocab + 1) * h + (vocab + 1)       # output projection
    return total


def ablation_width_search(target_params, config, max_d=8192):
    """Smallest d_model (stepped by heads/groups) whose count reaches the target."""
    step = max(config.heads, config.deform_groups)
    if count_parameters(config) >= target_params:
        return config, count_parameters(config)
    d = config.d_model
    while d <= max_d:
        cand = replace(config, d_model=d)
        n = count_parameters(cand)
        if n >= target_params:
            return cand, n
        d += step
    raise SearchError(f"no d_model <= {max_d} reaches {target_params} parameters")


# ---------------------------------------------------------------------------
# Named tensors and the checkpoint format
# ---------------------------------------------------------------------------

def _ln_tensors(prefix, ln):
    yield f"{prefix}.gamma", ln.gamma
    yield f"{prefix}.beta", ln.beta


def _ffn_tensors(prefix, w):
    yield from _ln_tensors(f"{prefix}.norm", w.norm)
    for name in ("w1", "b1", "w2", "b2"):
        yield f"{prefix}.{name}", getattr(w, name)


def named_tensors(enc):
    """Deterministic (name, array) traversal of all encoder weights."""
    s = enc.subsample
    for name in ("w1", "b1", "w2", "b2", "proj", "proj_b"):
        yield f"subsample.{name}", getattr(s, name)
    for i, blk in enumerate(enc.blocks):
        p = f"blocks.{i}"
        yield from _ffn_tensors(f"{p}.ffn1", blk.ffn1)
        if blk.mid_norm is not None:
            yield from _ln_tensors(f"{p}.mid_norm", blk.mid_norm)
        if blk.mid_attn is not None:
            for name in ("w_q", "w_k", "w_v", "w_o", "w_pos", "u_bias", "v_bias"):
                yield f"{p}.attn.{name}", getattr(blk.mid_attn, name)
        if blk.mid_deform is not None:
            for name in ("output_kernel", "output_bias", "offset_kernel", "offset_bias"):
                yield f"{p}.deform.{name}", getattr(blk.mid_deform, name)
            yield from _ln_tensors(f"{p}.deform_norm", blk.mid_post_norm)
        c = blk.conv
        yield from _ln_tensors(f"{p}.conv.norm", c.norm)
        for name in ("pw1", "pw1_b", "dw", "dw_b"):
            yield f"{p}.conv.{name}", getattr(c, name)
        yield from _ln_tensors(f"{p}.conv.inner_norm", c.inner_norm)
        for name in ("pw2", "pw2_b"):
            yield f"{p}.conv.{name}", getattr(c, name)
        yield from _ffn_tensors(f"{p}.ffn2", blk.ffn2)
        yield from _ln_tensors(f"{p}.final_norm", blk.final_norm)


CHECKPOINT_MAGIC = b"SFL1"


def save_checkpoint(enc, path):
    """Flat binary checkpoint: magic, then per tensor a length-prefixed UTF-8
    name (u32 LE), u8 rank, u64 LE dims and little-endian float32 data."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in named_tensors(enc):
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered {name: float32 array} dict."""
    tensors = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"bad checkpoint magic {magic!r}")
        while True:
            head = fh.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            tensors[name] = data.reshape(shape).copy()
    return tensors


def load_encoder(config, path, dtype=np.float32):
    """Rebuild an encoder from a checkpoint written for the same config."""
    enc = init_encoder(config, seed=0, dtype=dtype)
    tensors = load_checkpoint(path)
    for name, arr in named_tensors(enc):
        if name not in tensors:
            raise ConfigError(f"checkpoint missing tensor {name}")
        if tensors[name].shape != arr.shape:
            raise ShapeError(f"checkpoint tensor {name}: {tensors[name].shape} vs {arr.shape}")
        arr[...] = tensors[name].astype(dtype)
    return enc
