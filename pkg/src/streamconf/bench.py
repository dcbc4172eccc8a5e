"""Experiment harness: synthetic utterances, RTF timing, mask sweep,
attention-map export and the gradient-check suite.

RTF is measured on the encoder only, with a monotonic clock, median of the
timed runs after warmup. Timing runs are strictly serial.
"""

import csv
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import attention as att
from . import deformconv as dc
from . import encoder as enc_mod
from . import transducer as tr
from .errors import UnsupportedVariantError
from .numerics import Rng, finite_diff_grad, rel_error


@dataclass
class BenchPlan:
    seed: int = 0
    durations_s: tuple = (15.0, 30.0, 60.0)
    feature_dim: int = 80
    repeat_factor: int = 1
    warmup_runs: int = 1
    timed_runs: int = 3

    def __post_init__(self):
        if self.warmup_runs < 1 or self.timed_runs < 3:
            raise ValueError("need warmup_runs >= 1 and timed_runs >= 3")
        if self.repeat_factor not in (1, 3):
            raise ValueError("repeat_factor must be 1 or 3")


@dataclass
class RtfRecord:
    utterance_id: int
    audio_duration_s: float
    encoder_wall_time_s: float
    rtf: float
    variant: str
    mode: str
    chunk_ms: int
    repeat_factor: int


def gen_utterances(plan, frame_hop_ms=10, dtype=np.float32):
    """Seeded Gaussian feature frames standing in for real audio features."""
    utts = []
    rng = Rng(plan.seed)
    for dur in plan.durations_s:
        frames = int(round(dur * 1000.0 / frame_hop_ms))
        feats = rng.normal((frames, plan.feature_dim), dtype)
        if plan.repeat_factor > 1:
            feats = np.concatenate([feats] * plan.repeat_factor, axis=0)
        utts.append(feats)
    return utts


def _encode(features, enc, chunk, mode):
    if mode == "incremental":
        return enc_mod.encode_incremental(features, enc, chunk)
    if mode == "masked-batch":
        return enc_mod.encode_masked_batch(features, enc, chunk)
    raise ValueError(f"unknown mode {mode!r}")


def bench_rtf(plan, enc, chunk, mode):
    """Median encoder wall time per utterance; one RtfRecord each."""
    utts = gen_utterances(plan, enc.config.frame_hop_ms)
    records = []
    for uid, feats in enumerate(utts):
        duration = feats.shape[0] * enc.config.frame_hop_ms / 1000.0
        for _ in range(plan.warmup_runs):
            _encode(feats, enc, chunk, mode)
        times = []
        for _ in range(plan.timed_runs):
            t0 = time.perf_counter()
            _encode(feats, enc, chunk, mode)
            times.append(time.perf_counter() - t0)
        wall = statistics.median(times)
        records.append(RtfRecord(uid, duration, wall, wall / duration,
                                 enc.config.variant, mode, chunk.chunk_ms,
                                 plan.repeat_factor))
    return records


def loglog_slope(durations, times):
    """Least-squares slope of log(time) against log(duration)."""
    x = np.log(np.asarray(durations, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    x = x - x.mean()
    return float((x * (y - y.mean())).sum() / (x * x).sum())


def mask_sweep(plan, enc, chunk, n_diag_list):
    """Band-masking experiment: retained fraction and output divergence.

    Runs masked-batch encoding with each band on top of the chunk mask and
    reports, per utterance, the fraction of attention-map values retained and
    the relative output divergence from the unbanded run.
    """
    if enc.config.variant != "baseline":
        raise UnsupportedVariantError(
            f"mask sweep requires the baseline variant, got {enc.config.variant}")
    utts = gen_utterances(plan, enc.config.frame_hop_ms)
    c = chunk.frames_per_chunk
    rows = []
    for uid, feats in enumerate(utts):
        y_full, _ = enc_mod.encode_masked_batch(feats, enc, chunk)
        norm_full = float(np.linalg.norm(y_full))
        rows.append({"utterance_id": uid, "n_diag": "all",
                     "retained_fraction": 1.0, "divergence": 0.0})
        for n in n_diag_list:
            y_band, _ = enc_mod.encode_masked_batch(feats, enc, chunk, extra_band=n)
            rows.append({
                "utterance_id": uid, "n_diag": n,
                "retained_fraction": att.band_density(c, n),
                "divergence": float(np.linalg.norm(y_band - y_full)) / norm_full,
            })
    return rows


def dump_attention(plan, enc, chunk, out_dir):
    """Accumulate mean attention maps over all chunks/utterances, one CSV per layer."""
    if enc.config.variant != "baseline":
        raise UnsupportedVariantError(
            f"attention dump requires the baseline variant, got {enc.config.variant}")
    stats = None
    for feats in gen_utterances(plan, enc.config.frame_hop_ms):
        _, s = enc_mod.encode_incremental(feats, enc, chunk, collect_stats=True)
        if stats is None:
            stats = s
        else:
            stats.merge(s)
    return stats.write_csv(out_dir), stats


# ---------------------------------------------------------------------------
# Gradient-check suite
# ---------------------------------------------------------------------------

def _check_attention(seed, corrupt=False):
    rng = Rng(seed)
    t, d, heads = 4, 4, 2
    w = att.init_mhsa(rng, d, heads)
    x = rng.uniform((t, d), -1, 1)
    up = rng.uniform((t, d), -1, 1)
    mask = att.chunk_mask(t, 3)
    gx, _ = att.mhsa_backward(x, w, mask, up)
    if corrupt:
        gx = gx + 1e-3
    fd = finite_diff_grad(lambda xv: float((att.mhsa_forward(xv, w, mask)[0] * up).sum()), x)
    return rel_error(gx, fd)


def _check_deform(seed, corrupt=False):
    rng = Rng(seed)
    t, c, k, g = 8, 4, 5, 2
    w = dc.init_deform(rng, c, c, k, g, g)
    # keep fractional sample parts away from the interpolation kinks
    w.offset_kernel *= 0.05
    w.offset_bias[:] = rng.uniform((k * g,), 0.3, 0.7)
    x = rng.uniform((t, c), -1, 1)
    up = rng.uniform((t, c), -1, 1)
    gx, _ = dc.deform_conv1d_backward(x, w, up)
    if corrupt:
        gx = gx + 1e-3

    def loss(xv):
        return float((dc.deform_conv1d_forward(xv, w, dc.predict_offsets(xv, w)) * up).sum())
    return rel_error(gx, finite_diff_grad(loss, x))


def _check_rnnt(seed, corrupt=False):
    rng = Rng(seed)
    t, u, v = 3, 2, 3
    targets = [int(x) for x in rng.uniform((u,), 0, v)]
    logits = rng.uniform((t, u + 1, v + 1), -2, 2)
    _, g = tr.rnnt_loss_from_logits(logits, targets, v)
    if corrupt:
        g = g + 1e-3
    fd = finite_diff_grad(
        lambda lv: tr.rnnt_loss_from_logits(lv.reshape(logits.shape), targets, v)[0],
        logits.ravel().copy()).reshape(logits.shape)
    return rel_error(g, fd)


def _check_ctc(seed, corrupt=False):
    rng = Rng(seed)
    v = 3
    targets = [int(x) for x in rng.uniform((2,), 0, v)]
    t = tr.ctc_required_length(targets) + 2
    logits = rng.uniform((t, v + 1), -2, 2)
    _, g = tr.ctc_loss(logits, targets, v)
    if corrupt:
        g = g + 1e-3
    fd = finite_diff_grad(
        lambda lv: tr.ctc_loss(lv.reshape(logits.shape), targets, v)[0],
        logits.ravel().copy()).reshape(logits.shape)
    return rel_error(g, fd)


_CHECKS = {
    "attention": _check_attention,
    "deform": _check_deform,
    "rnnt": _check_rnnt,
    "ctc": _check_ctc,
}

GRADCHECK_TOL = 1e-5


def gradcheck(scope="all", seeds=20, base_seed=0, corrupt=None):
    """Run finite-difference checks; returns [(op, max_rel_err, passed)].

    ``corrupt`` names an op whose analytic gradient is deliberately broken
    (negative-control fixture).
    """
    names = list(_CHECKS) if scope == "all" else [scope]
    report = []
    for name in names:
        fn = _CHECKS[name]
        worst = 0.0
        for s in range(seeds):
            worst = max(worst, fn(base_seed + s, corrupt=(corrupt == name)))
        report.append((name, worst, worst < GRADCHECK_TOL))
    return report


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_csv(path, fieldnames, rows):
    """Rows of dicts; reals printed with 6 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v)
                             for k, v in row.items()})


def rtf_rows(records):
    return [vars(r) for r in records]
