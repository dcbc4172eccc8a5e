"""CLI surface: subcommands, exit codes, CSV round-trips."""

import csv
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from streamconf import bench as bn
from streamconf.cli import main
from streamconf.encoder import EncoderConfig


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_config(tmp_path):
    cfg = EncoderConfig(d_model=16, layers=2, heads=2, ffn_dim=32, conv_kernel=7,
                        deform_groups=4, feature_dim=8)
    path = tmp_path / "config.json"
    path.write_text(cfg.to_json())
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestParams:
    def test_lists_variants_and_deltas(self, runner):
        result = runner.invoke(main, ["params"])
        assert result.exit_code == 0
        for v in ("baseline", "soft", "hard"):
            assert v in result.output
        assert "baseline - hard" in result.output

    def test_csv_round_trip(self, runner, tmp_path):
        out = str(tmp_path / "out")
        result = runner.invoke(main, ["params", "--out", out, "--write-csv"])
        assert result.exit_code == 0
        rows = read_csv(os.path.join(out, "params.csv"))
        assert len(rows) == 3
        deltas = {(r["from"], r["to"]): int(r["delta"]) for r in rows}
        assert deltas[("baseline", "hard")] == (deltas[("baseline", "soft")]
                                                + deltas[("soft", "hard")])


class TestGradcheck:
    def test_passes(self, runner):
        result = runner.invoke(main, ["gradcheck", "--scope", "rnnt", "--seeds", "3"])
        assert result.exit_code == 0
        assert "PASS" in result.output

    def test_corrupt_negative_control(self, runner):
        result = runner.invoke(main, ["gradcheck", "--scope", "ctc", "--seeds", "2",
                                      "--corrupt", "ctc"])
        assert result.exit_code == 1
        assert "FAIL" in result.output


class TestMaskSweep:
    def test_writes_rows(self, runner, tiny_config, tmp_path):
        out = str(tmp_path / "out")
        result = runner.invoke(main, ["mask-sweep", "--config", tiny_config,
                                      "--chunk-ms", "1280", "--out", out,
                                      "--durations", "2.56", "--n-diags", "5,7"])
        assert result.exit_code == 0, result.output
        rows = read_csv(os.path.join(out, "mask_sweep.csv"))
        assert [r["n_diag"] for r in rows] == ["all", "5", "7"]
        assert float(rows[0]["divergence"]) == 0.0
        assert 0 < float(rows[1]["retained_fraction"]) < float(rows[2]["retained_fraction"])

    def test_non_baseline_is_usage_error(self, runner, tiny_config):
        result = runner.invoke(main, ["mask-sweep", "--config", tiny_config,
                                      "--variant", "hard"])
        assert result.exit_code == 2

    def test_bad_chunk_choice(self, runner):
        result = runner.invoke(main, ["mask-sweep", "--chunk-ms", "200"])
        assert result.exit_code == 2


class TestAttnDump:
    def test_writes_layer_files(self, runner, tiny_config, tmp_path):
        out = str(tmp_path / "out")
        result = runner.invoke(main, ["attn-dump", "--config", tiny_config,
                                      "--chunk-ms", "640", "--out", out,
                                      "--durations", "1.28"])
        assert result.exit_code == 0, result.output
        files = sorted(os.listdir(out))
        assert files == ["attention_layer_00.csv", "attention_layer_01.csv"]
        with open(os.path.join(out, files[0])) as fh:
            mat = np.array([[float(v) for v in row] for row in csv.reader(fh)])
        assert mat.shape == (16, 16)
        assert np.abs(mat.sum(axis=1) - 1).max() < 1e-4


class TestBenchRtf:
    def test_records_and_csv(self, runner, tiny_config, tmp_path):
        out = str(tmp_path / "out")
        result = runner.invoke(main, ["bench-rtf", "--config", tiny_config,
                                      "--variant", "hard", "--chunk-ms", "320",
                                      "--out", out, "--durations", "1,2",
                                      "--mode", "incremental"])
        assert result.exit_code == 0, result.output
        rows = read_csv(os.path.join(out, "rtf_hard_incremental_320ms.csv"))
        assert len(rows) == 2
        for row in rows:
            assert float(row["rtf"]) > 0
            assert row["variant"] == "hard"
            assert abs(float(row["rtf"]) - float(row["encoder_wall_time_s"])
                       / float(row["audio_duration_s"])) < 1e-4


class TestDecodeDemo:
    @pytest.mark.parametrize("variant", ["baseline", "soft", "hard"])
    def test_stream_batch_match(self, runner, variant):
        result = runner.invoke(main, ["decode-demo", "--variant", variant,
                                      "--chunk-ms", "640", "--seed", "3"])
        assert result.exit_code == 0, result.output
        assert "match: True" in result.output


class TestCsvWriter:
    def test_six_significant_digits(self, tmp_path):
        path = str(tmp_path / "vals.csv")
        bn.write_csv(path, ["x"], [{"x": 0.123456789}, {"x": 1234567.89}])
        rows = read_csv(path)
        assert rows[0]["x"] == "0.123457"
        assert float(rows[1]["x"]) == pytest.approx(1234567.89, rel=1e-5)

    def test_loglog_slope(self):
        durations = [10, 20, 40, 80]
        assert bn.loglog_slope(durations, [d ** 2 for d in durations]) == pytest.approx(2.0)
        assert bn.loglog_slope(durations, [3 * d for d in durations]) == pytest.approx(1.0)


class TestBenchPlanValidation:
    def test_rejects_bad_plan(self):
        with pytest.raises(ValueError):
            bn.BenchPlan(timed_runs=2)
        with pytest.raises(ValueError):
            bn.BenchPlan(warmup_runs=0)
        with pytest.raises(ValueError):
            bn.BenchPlan(repeat_factor=2)

    def test_repeat_factor_triples_frames(self):
        p1 = bn.BenchPlan(seed=1, durations_s=(1.0,))
        p3 = bn.BenchPlan(seed=1, durations_s=(1.0,), repeat_factor=3)
        u1 = bn.gen_utterances(p1)[0]
        u3 = bn.gen_utterances(p3)[0]
        assert u3.shape[0] == 3 * u1.shape[0]
        assert np.array_equal(u3[:u1.shape[0]], u1)
