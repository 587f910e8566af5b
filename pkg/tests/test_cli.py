import csv

import numpy as np
import pytest

from stressmon.cli import cli_main
from stressmon.signalio import load_signal, load_truth
from stressmon.vitals import load_vitals


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, capsys_disabled=None):
    """Run the full CLI chain once: synth -> extract -> train -> detect."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "gen.cfg"
    cfg.write_text(
        "duration_s = 900\nbase_hr_bpm = 70\nhr_jitter_bpm = 3\n"
        "stress_hr_delta_bpm = 30\nstress_hrv_scale = 0.5\n"
        "episode_count = 1\nepisode_len_s = 120\nnoise_snr_db = 20\nseed = 4\n")
    sig, truth = root / "sig.csv", root / "truth.csv"
    assert cli_main(["synth", "--config", str(cfg),
                     "--out-signal", str(sig), "--out-truth", str(truth)]) == 0
    vit = root / "vitals.csv"
    assert cli_main(["extract", "--in", str(sig), "--truth", str(truth),
                     "--out", str(vit)]) == 0
    ckpt = root / "model.ckpt"
    tcfg = root / "train.cfg"
    tcfg.write_text("epochs = 3\nmax_steps = 30\n")
    assert cli_main(["train", "--vitals", str(vit), "--config", str(tcfg),
                     "--embed-dim", "16", "--blocks", "1", "--heads", "2",
                     "--prompt", "2", "--out", str(ckpt)]) == 0
    det = root / "det.csv"
    assert cli_main(["detect", "--ckpt", str(ckpt), "--vitals", str(vit),
                     "--out", str(det)]) == 0
    return {"root": root, "cfg": cfg, "sig": sig, "truth": truth,
            "vitals": vit, "ckpt": ckpt, "det": det}


class TestChain:
    def test_synth_outputs(self, workspace):
        signal = load_signal(workspace["sig"], "csv")
        assert signal.duration_s == pytest.approx(900.0, abs=0.5)
        truth = load_truth(workspace["truth"])
        assert len(truth.stress_intervals) == 1

    def test_extract_output(self, workspace):
        series, labels = load_vitals(workspace["vitals"])
        assert labels is not None
        assert labels.sum() > 0
        assert np.all((series.hr_bpm > 30) & (series.hr_bpm < 220))

    def test_detect_output_columns(self, workspace):
        with open(workspace["det"]) as fh:
            rows = list(csv.DictReader(fh))
        assert {"time_s", "score", "label", "tau_low", "tau_high",
                "contrib_hr", "contrib_hrv"} <= set(rows[0])
        labels = [int(r["label"]) for r in rows]
        assert set(labels) <= {0, 1}

    def test_eval_command(self, workspace, capsys):
        assert cli_main(["eval", "--pred", str(workspace["det"]),
                         "--truth", str(workspace["vitals"])]) == 0
        out = capsys.readouterr().out
        assert "F1=" in out and "FPR=" in out

    def test_detect_self_calibration(self, workspace):
        out = workspace["root"] / "det_self.csv"
        assert cli_main(["detect", "--ckpt", str(workspace["ckpt"]),
                         "--vitals", str(workspace["vitals"]),
                         "--calib", "self", "--out", str(out)]) == 0
        assert out.exists()


class TestStats:
    def test_bundled_table(self, capsys):
        assert cli_main(["stats"]) == 0
        out = capsys.readouterr().out
        assert "Friedman: statistic=" in out
        assert "Dunn vs UniTS:" in out

    def test_method_subset(self, capsys):
        assert cli_main(["stats", "--methods", "UniTS,USAD,GDN,DAGMM"]) == 0
        out = capsys.readouterr().out
        assert "4 methods" in out


class TestErrors:
    def test_usage_error_exit_1(self, capsys):
        assert cli_main(["synth"]) == 1

    def test_unknown_command_exit_1(self, capsys):
        assert cli_main(["frobnicate"]) == 1

    def test_missing_file_exit_2(self, tmp_path, capsys):
        assert cli_main(["extract", "--in", str(tmp_path / "nope.csv"),
                         "--out", str(tmp_path / "v.csv")]) == 2

    def test_malformed_csv_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("foo,bar\n1,2\n")
        assert cli_main(["extract", "--in", str(bad),
                         "--out", str(tmp_path / "v.csv")]) == 2

    def test_corrupt_checkpoint_exit_2(self, tmp_path, workspace, capsys):
        bad = tmp_path / "bad.ckpt"
        blob = workspace["ckpt"].read_bytes()
        bad.write_bytes(blob[: len(blob) - 10])
        assert cli_main(["detect", "--ckpt", str(bad),
                         "--vitals", str(workspace["vitals"]),
                         "--out", str(tmp_path / "d.csv")]) == 2


class TestSeedEnv:
    def test_env_seed_used(self, monkeypatch, tmp_path, capsys):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text("duration_s = 60\nepisode_count = 0\nseed = 0\n")

        def run(env_seed, out):
            monkeypatch.setenv("STRESSMON_SEED", str(env_seed))
            assert cli_main(["synth", "--config", str(cfg),
                             "--out-signal", str(out),
                             "--out-truth", str(tmp_path / "t.csv")]) == 0
            return out.read_bytes()

        a = run(1, tmp_path / "a.csv")
        b = run(1, tmp_path / "b.csv")
        c = run(2, tmp_path / "c.csv")
        assert a == b
        assert a != c
