"""Command-line harness.

Subcommands: params, gradcheck, mask-sweep, attn-dump, bench-rtf, decode-demo.
Exit codes: 0 success, 1 check failure, 2 usage error. All numeric outputs are
CSV with 6 significant digits; commands with --seed are bit-deterministic in
their numeric outputs (timings excluded).
"""

import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import bench as bn
from . import encoder as enc_mod
from . import transducer as tr
from .errors import UnsupportedVariantError
from .numerics import Rng

CHUNK_CHOICES = ["160", "320", "640", "1280"]


def _load_config(config_path, variant):
    if config_path:
        with open(config_path) as fh:
            cfg = enc_mod.EncoderConfig.from_json(fh.read())
    else:
        cfg = enc_mod.EncoderConfig()
    if variant:
        cfg = replace(cfg, variant=variant)
    return cfg


def _out_path(out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


config_opt = click.option("--config", "config_path", type=click.Path(exists=True),
                          default=None, help="Encoder config JSON (EncoderConfig fields).")
variant_opt = click.option("--variant", type=click.Choice(enc_mod.VARIANTS), default=None,
                           help="Override the config's encoder variant.")
chunk_opt = click.option("--chunk-ms", type=click.Choice(CHUNK_CHOICES), default="1280",
                         help="Streaming chunk size in milliseconds.")
seed_opt = click.option("--seed", type=int, default=0, help="Master RNG seed.")
out_opt = click.option("--out", "out_dir", type=click.Path(), default="out",
                       help="Output directory for CSV files.")


@click.group()
def main():
    """Streaming Conformer variant experiments: parameter counts, gradient
    checks, attention masking sweeps, mean-map export and RTF benchmarks."""


@main.command()
@config_opt
@click.option("--include-transducer", is_flag=True, help="Count predictor and joint too.")
@click.option("--vocab", type=int, default=64, help="Vocabulary size for the transducer tail.")
@out_opt
@click.option("--write-csv/--no-write-csv", "do_csv", default=False)
def params(config_path, include_transducer, vocab, out_dir, do_csv):
    """Per-variant parameter totals and pairwise deltas."""
    base = _load_config(config_path, None)
    counts = {v: enc_mod.count_parameters(replace(base, variant=v), include_transducer, vocab)
              for v in enc_mod.VARIANTS}
    click.echo(f"{'variant':<10} {'parameters':>14}")
    for v, n in counts.items():
        click.echo(f"{v:<10} {n:>14,}")
    click.echo()
    rows = []
    for i, a in enumerate(enc_mod.VARIANTS):
        for b in enc_mod.VARIANTS[i + 1:]:
            delta = counts[a] - counts[b]
            pct = 100.0 * delta / counts[a] if counts[a] else 0.0
            click.echo(f"{a} - {b}: {delta:,} ({pct:.1f}% of {a})")
            rows.append({"from": a, "to": b, "delta": delta, "pct": pct})
    if do_csv:
        path = _out_path(out_dir, "params.csv")
        bn.write_csv(path, ["from", "to", "delta", "pct"], rows)
        click.echo(f"wrote {path}")


@main.command()
@click.option("--scope", type=click.Choice(["attention", "deform", "rnnt", "ctc", "all"]),
              default="all")
@click.option("--seeds", type=int, default=20, help="Random instances per operation.")
@seed_opt
@click.option("--corrupt", type=click.Choice(["attention", "deform", "rnnt", "ctc"]),
              default=None, hidden=True, help="Negative-control fixture.")
def gradcheck(scope, seeds, seed, corrupt):
    """Finite-difference checks of every analytic gradient."""
    report = bn.gradcheck(scope, seeds=seeds, base_seed=seed, corrupt=corrupt)
    failed = False
    for name, err, ok in report:
        click.echo(f"{name:<10} max rel err {err:.3e}  {'PASS' if ok else 'FAIL'}")
        failed |= not ok
    if failed:
        sys.exit(1)


@main.command("mask-sweep")
@config_opt
@variant_opt
@chunk_opt
@seed_opt
@out_opt
@click.option("--n-diags", default="5,7", help="Comma-separated odd band widths.")
@click.option("--durations", default="4,8", help="Utterance durations in seconds.")
def mask_sweep(config_path, variant, chunk_ms, seed, out_dir, n_diags, durations):
    """Band-mask the attention maps and report retained fraction and divergence."""
    cfg = _load_config(config_path, variant)
    if cfg.variant != "baseline":
        raise click.UsageError("mask-sweep only applies to the baseline variant")
    chunk = enc_mod.ChunkSpec(int(chunk_ms), config=cfg)
    plan = bn.BenchPlan(seed=seed,
                        durations_s=tuple(float(d) for d in durations.split(",")),
                        feature_dim=cfg.feature_dim)
    enc = enc_mod.init_encoder(cfg, seed)
    try:
        rows = bn.mask_sweep(plan, enc, chunk, [int(n) for n in n_diags.split(",")])
    except UnsupportedVariantError as exc:
        raise click.UsageError(str(exc))
    path = _out_path(out_dir, "mask_sweep.csv")
    bn.write_csv(path, ["utterance_id", "n_diag", "retained_fraction", "divergence"], rows)
    for row in rows:
        click.echo(f"utt {row['utterance_id']} n_diag={row['n_diag']:>4}"
                   f" retained={row['retained_fraction']:.4f}"
                   f" divergence={row['divergence']:.6g}")
    click.echo(f"wrote {path}")


@main.command("attn-dump")
@config_opt
@chunk_opt
@seed_opt
@out_opt
@click.option("--durations", default="4,8", help="Utterance durations in seconds.")
def attn_dump(config_path, chunk_ms, seed, out_dir, durations):
    """Export per-layer mean attention maps as CSV matrices."""
    cfg = _load_config(config_path, "baseline")
    chunk = enc_mod.ChunkSpec(int(chunk_ms), config=cfg)
    plan = bn.BenchPlan(seed=seed,
                        durations_s=tuple(float(d) for d in durations.split(",")),
                        feature_dim=cfg.feature_dim)
    enc = enc_mod.init_encoder(cfg, seed)
    paths, _ = bn.dump_attention(plan, enc, chunk, out_dir)
    for p in paths:
        click.echo(f"wrote {p}")


@main.command("bench-rtf")
@config_opt
@variant_opt
@chunk_opt
@seed_opt
@out_opt
@click.option("--mode", type=click.Choice(["masked-batch", "incremental"]),
              default="incremental")
@click.option("--repeat", type=click.Choice(["1", "3"]), default="1",
              help="Utterance length multiplier (x3 long-utterance regime).")
@click.option("--durations", default="15,30,60", help="Utterance durations in seconds.")
@click.option("--warmup", type=int, default=1)
@click.option("--runs", type=int, default=3)
def bench_rtf(config_path, variant, chunk_ms, seed, out_dir, mode, repeat, durations,
              warmup, runs):
    """Encoder-only real-time-factor benchmark (serial, monotonic clock)."""
    cfg = _load_config(config_path, variant)
    chunk = enc_mod.ChunkSpec(int(chunk_ms), config=cfg)
    plan = bn.BenchPlan(seed=seed,
                        durations_s=tuple(float(d) for d in durations.split(",")),
                        feature_dim=cfg.feature_dim,
                        repeat_factor=int(repeat),
                        warmup_runs=warmup, timed_runs=runs)
    enc = enc_mod.init_encoder(cfg, seed)
    records = bn.bench_rtf(plan, enc, chunk, mode)
    path = _out_path(out_dir, f"rtf_{cfg.variant}_{mode}_{chunk_ms}ms.csv")
    bn.write_csv(path, ["utterance_id", "audio_duration_s", "encoder_wall_time_s",
                        "rtf", "variant", "mode", "chunk_ms", "repeat_factor"],
                 bn.rtf_rows(records))
    for r in records:
        click.echo(f"utt {r.utterance_id}: {r.audio_duration_s:.1f}s audio,"
                   f" {r.encoder_wall_time_s:.3f}s wall, RTF {r.rtf:.4g}")
    click.echo(f"wrote {path}")


@main.command("decode-demo")
@config_opt
@variant_opt
@chunk_opt
@seed_opt
@click.option("--vocab", type=int, default=16)
@click.option("--duration", type=float, default=2.56, help="Utterance length in seconds.")
def decode_demo(config_path, variant, chunk_ms, seed, vocab, duration):
    """Greedy streaming decode of a synthetic utterance; verifies that
    chunk-by-chunk decoding matches decoding the full encoder output."""
    cfg = _load_config(config_path, variant)
    if config_path is None:
        cfg = replace(cfg, d_model=32, layers=2, heads=2, ffn_dim=64,
                      deform_groups=4, variant=cfg.variant)
    chunk = enc_mod.ChunkSpec(int(chunk_ms), config=cfg)
    enc = enc_mod.init_encoder(cfg, seed)
    plan = bn.BenchPlan(seed=seed, durations_s=(duration,), feature_dim=cfg.feature_dim)
    feats = bn.gen_utterances(plan, cfg.frame_hop_ms)[0]
    outputs, _ = enc_mod.encode_incremental(feats, enc, chunk)
    tail = tr.init_tail(Rng(seed + 1), cfg.d_model, 64, vocab, dtype=np.float32)
    c = chunk.frames_per_chunk
    streamed = tr.greedy_decode(
        [outputs[i:i + c] for i in range(0, outputs.shape[0], c)], tail)
    batch = tr.greedy_decode([outputs], tail)
    click.echo(f"streamed ({len(streamed)} labels): {streamed[:30]}...")
    click.echo(f"batch    ({len(batch)} labels): {batch[:30]}...")
    click.echo(f"match: {streamed == batch}")
    if streamed != batch:
        sys.exit(1)


if __name__ == "__main__":
    main()
