import csv
import json
import os

import numpy as np
import pytest

from dive_lab import cli, data
from dive_lab import model as mdl

SMALL = [
    "--num_classes=6", "--n_max=60", "--beta=20", "--dim=8", "--test_per_class=10",
    "--hidden=16", "--epochs=6", "--decay_milestones=4", "--warmup_epochs=1",
]


def run(out, command, *args):
    # later overrides win, so per-test arguments go last
    return cli.main([command, f"--out={out}", *SMALL, *args])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "run"
    assert run(out, "synth", "--seeds=0,1") == 0
    return out


class TestConfig:
    def test_parse_text(self):
        pairs = cli.parse_config_text("# comment\nepochs = 5\n\ntau-grid = 1,2 # trailing\n")
        assert pairs == {"epochs": "5", "tau_grid": "1,2"}
        cfg = cli.build_config(pairs)
        assert cfg.epochs == 5 and cfg.tau_grid == (1.0, 2.0)

    def test_typed_fields(self):
        cfg = cli.build_config({"tau": "auto", "power": "0", "bsce_term": "false", "seeds": "3,4"})
        assert cfg.tau == "auto" and cfg.power == (False,) and cfg.bsce_term is False and cfg.seeds == (3, 4)
        assert cli.build_config({"tau": "2.5"}).tau == 2.5

    def test_env_default_out(self, monkeypatch):
        monkeypatch.setenv("DIVE_LAB_OUT", "/tmp/somewhere")
        assert cli.build_config({}).out == "/tmp/somewhere"

    def test_config_file_and_override(self, tmp_path):
        conf = tmp_path / "exp.cfg"
        conf.write_text("num_classes = 4\nbeta = 1\nseeds = 5\n")
        out = tmp_path / "o"
        assert cli.main(["synth", f"--config={conf}", f"--out={out}", "--n_max=12", "--dim=3"]) == 0
        ds = data.load_dataset(out / "seed_5" / "train.dsb")
        np.testing.assert_array_equal(ds.profile.counts, [12] * 4)

    @pytest.mark.parametrize("bad", [["--no_such_key=1"], ["--epochs=many"], ["stray"], ["--seeds="]])
    def test_invalid_config_exits_3(self, tmp_path, bad):
        assert cli.main(["synth", f"--out={tmp_path}", *bad]) == 3

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["synth", f"--config={tmp_path / 'nope.cfg'}", f"--out={tmp_path}"]) == 3


class TestSynth:
    def test_files_and_profile(self, synth_dir):
        for s in (0, 1):
            sd = synth_dir / f"seed_{s}"
            assert {p.name for p in sd.iterdir()} == {"train.dsb", "test.dsb", "profile.csv"}
        rows = read_rows(synth_dir / "seed_0" / "profile.csv")
        counts = [int(r["count"]) for r in rows]
        assert min(counts) == data.exp_profile(6, 60, 20).counts.min()
        manifest = json.loads((synth_dir / "manifest_synth.json").read_text())
        assert manifest["config"]["num_classes"] == 6

    def test_rerun_identical(self, synth_dir):
        before = {p: p.read_bytes() for p in synth_dir.glob("seed_*/*")}
        assert run(synth_dir, "synth", "--seeds=0,1") == 0
        assert all(p.read_bytes() == b for p, b in before.items())

    def test_balanced(self, tmp_path):
        assert run(tmp_path, "synth", "--beta=1") == 0
        ds = data.load_dataset(tmp_path / "seed_0" / "train.dsb")
        assert len(set(ds.profile.counts.tolist())) == 1

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run(blocker / "sub", "synth") == 2


class TestTrain:
    def test_artifacts(self, synth_dir):
        assert run(synth_dir, "train", "--loss=bsce", "--seeds=0,1") == 0
        od = synth_dir / "seed_0" / "bsce"
        for name in ("model.ckpt", "history.csv", "report.csv", "confusion.csv"):
            assert (od / name).is_file()
        hist = read_rows(od / "history.csv")
        assert list(hist[0]) == ["epoch", "lr", "loss", "acc_all", "acc_many", "acc_medium", "acc_few"]
        assert len(hist) == 6
        assert len(read_rows(synth_dir / "summary_bsce.csv")) >= 2

    def test_zero_lr_flat_history(self, synth_dir):
        assert run(synth_dir, "train", "--lr=0") == 0
        losses = [float(r["loss"]) for r in read_rows(synth_dir / "seed_0" / "ce" / "history.csv")]
        np.testing.assert_allclose(losses, losses[0], rtol=1e-12)

    def test_missing_dataset(self, tmp_path):
        assert run(tmp_path, "train") == 3

    def test_mismatched_datasets(self, synth_dir, tmp_path):
        other = tmp_path / "other"
        assert cli.main(["synth", f"--out={other}", "--num_classes=3", "--n_max=10", "--dim=8"]) == 0
        assert run(synth_dir, "train", f"--test_data={other / 'seed_0' / 'test.dsb'}") == 3

    def test_divergence_exits_4(self, synth_dir):
        assert run(synth_dir, "train", "--lr=1e6", "--momentum=0.99", "--epochs=200",
                   "--decay_milestones=", "--warmup_epochs=0", "--hidden=") == 4

    def test_jobs_match_sequential(self, synth_dir, tmp_path):
        assert run(synth_dir, "train", "--seeds=0,1") == 0
        first = {s: (synth_dir / f"seed_{s}" / "ce" / "history.csv").read_bytes() for s in (0, 1)}
        assert run(synth_dir, "train", "--seeds=0,1", "--jobs", "2") == 0
        assert all((synth_dir / f"seed_{s}" / "ce" / "history.csv").read_bytes() == first[s] for s in (0, 1))


class TestDive:
    def test_auto_tau_artifacts(self, synth_dir):
        assert run(synth_dir, "dive", "--auto-tau", "--tau_grid=1,2,3") == 0
        od = synth_dir / "seed_0" / "dive"
        scan = read_rows(od / "scan.csv")
        assert len(scan) >= 3 * 2
        report = read_rows(od / "report.csv")
        assert [r["model"] for r in report] == ["ce", "bsce", "dive"]
        manifest = json.loads((synth_dir / "manifest_dive.json").read_text())
        for paths in manifest["artifacts"].values():
            assert all(os.path.exists(p) for p in paths)

    def test_fixed_tau(self, synth_dir):
        assert run(synth_dir, "dive", "--no-auto-tau", "--tau=4", "--baseline_ce=false") == 0
        row = read_rows(synth_dir / "seed_0" / "dive" / "distill.csv")[0]
        assert float(row["student_tau"]) == 4.0 and float(row["teacher_tau"]) == 8.0

    def test_alpha_zero_matches_bsce_training(self, synth_dir):
        assert run(synth_dir, "dive", "--alpha=0", "--tau=3", "--baseline_ce=false") == 0
        assert run(synth_dir, "train", "--loss=bsce") == 0
        a = read_rows(synth_dir / "seed_0" / "dive" / "report.csv")
        b = read_rows(synth_dir / "seed_0" / "bsce" / "report.csv")
        assert [r["model"] for r in a] == ["bsce", "dive"]
        dive_row = {k: v for k, v in a[1].items() if k != "model"}
        bsce_row = {k: v for k, v in b[0].items() if k != "model"}
        assert dive_row == bsce_row

    def test_rerun_byte_identical(self, synth_dir):
        names = ("teacher_history.csv", "student_history.csv", "ce_history.csv", "report.csv", "scan.csv")
        assert run(synth_dir, "dive") == 0
        first = {n: (synth_dir / "seed_0" / "dive" / n).read_bytes() for n in names}
        assert run(synth_dir, "dive") == 0
        assert all((synth_dir / "seed_0" / "dive" / n).read_bytes() == first[n] for n in names)


class TestAnalyze:
    @pytest.fixture
    def trained(self, tmp_path):
        out = tmp_path / "an"
        args = [f"--out={out}", "--epochs=30", "--decay_milestones=20,25"]
        assert cli.main(["synth", *args]) == 0
        assert cli.main(["train", "--loss=bsce", *args]) == 0
        return out, args

    def test_histograms(self, trained):
        out, args = trained
        ckpt = out / "seed_0" / "bsce" / "model.ckpt"
        assert cli.main(["analyze-ve", f"--checkpoint={ckpt}", "--tau_grid=1,2,1000", *args]) == 0
        n = data.load_dataset(out / "seed_0" / "train.dsb").n
        files = sorted((out / "analysis").glob("hist_*.csv"))
        assert len(files) == 6
        for f in files:
            assert sum(float(r["virtual_count"]) for r in read_rows(f)) == pytest.approx(n, abs=1e-6)
        flat = read_rows(out / "analysis" / "hist_tau1000_p0.csv")
        v = np.array([float(r["virtual_count"]) for r in flat])
        assert np.max(np.abs(v - n / v.size)) < 1e-3 * n
        assert (out / "analysis" / "virtual_examples.svg").read_text().startswith("<svg")

    def test_kl_strictly_decreasing_on_default_grid(self, trained):
        out, args = trained
        ckpt = out / "seed_0" / "bsce" / "model.ckpt"
        assert cli.main(["analyze-ve", f"--checkpoint={ckpt}", "--power=0", *args]) == 0
        kl = [float(r["kl_to_uniform"]) for r in read_rows(out / "analysis" / "flatness.csv")]
        assert len(kl) == 10
        assert all(b < a for a, b in zip(kl, kl[1:]))

    def test_incompatible_checkpoint(self, synth_dir, tmp_path):
        ckpt = tmp_path / "wrong.ckpt"
        mdl.save_checkpoint(mdl.init_model([5, 3], 0), ckpt)
        assert run(synth_dir, "analyze-ve", f"--checkpoint={ckpt}") == 3
        assert run(synth_dir, "eval", f"--checkpoint={ckpt}") == 3

    def test_missing_checkpoint(self, synth_dir):
        assert run(synth_dir, "analyze-ve") == 3
        assert run(synth_dir, "eval") == 3


class TestEvalAndBinary:
    def test_eval(self, synth_dir):
        assert run(synth_dir, "train") == 0
        ckpt = synth_dir / "seed_0" / "ce" / "model.ckpt"
        assert run(synth_dir, "eval", f"--checkpoint={ckpt}") == 0
        rep = read_rows(synth_dir / "eval" / "model_report.csv")[0]
        ref = read_rows(synth_dir / "seed_0" / "ce" / "report.csv")[0]
        assert rep["acc_all"] == ref["acc_all"]

    def test_binary(self, tmp_path):
        args = ["binary-exp", f"--out={tmp_path}", "--n_head=60", "--n_tail=6", "--dim=4",
                "--seeds=0,1", "--epochs=3", "--decay_milestones=", "--binary_test_per_class=20"]
        assert cli.main(args) == 0
        rows = read_rows(tmp_path / "binary" / "binary_60vs6.csv")
        assert [float(r["epsilon"]) for r in rows] == [0.0, 0.1, 0.2, 0.3, 0.4]
        assert float(rows[0]["ratio"]) == pytest.approx(0.1)
        assert (tmp_path / "binary" / "binary_60vs6.svg").is_file()

    def test_binary_rejects_inverted_counts(self, tmp_path):
        assert cli.main(["binary-exp", f"--out={tmp_path}", "--n_head=5", "--n_tail=10"]) == 3
