import json
import os

import numpy as np
import pytest

from polytopic.cli import main
from polytopic.config import load_config
from polytopic.errors import ConfigError
from polytopic.synthetic import make_fixture


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("fixture")
    make_fixture(outdir, n_docs=200, n_topics=4, dim=8, sigma=0.0, seed=3)
    cfg = json.load(open(outdir / "config.json"))
    cfg.update({"epochs": 6, "lda_iterations": 40, "seeds": [0]})
    json.dump(cfg, open(outdir / "config.json", "w"))
    return outdir


class TestConfig:
    def write_config(self, tmp_path, overrides, base):
        cfg = json.load(open(base / "config.json"))
        cfg.update(overrides)
        path = tmp_path / "config.json"
        json.dump(cfg, open(path, "w"))
        # config paths resolve relative to the config file
        for key in ("manifest",):
            cfg[key] = str(base / cfg[key])
        cfg["embeddings"] = {k: str(base / v) for k, v in
                             json.load(open(base / "config.json"))["embeddings"].items()}
        json.dump(cfg, open(path, "w"))
        return path

    def test_lambda_requires_tcctm(self, tmp_path, fixture_dir):
        path = self.write_config(tmp_path, {"lambda": 0.7, "model": "ctm"}, fixture_dir)
        with pytest.raises(ConfigError, match="lambda requires tcctm"):
            load_config(path)

    def test_dropout_range(self, tmp_path, fixture_dir):
        path = self.write_config(tmp_path, {"dropout": 1.0}, fixture_dir)
        with pytest.raises(ConfigError, match="dropout"):
            load_config(path)

    def test_tau_minimum(self, tmp_path, fixture_dir):
        path = self.write_config(tmp_path, {"tau": 1}, fixture_dir)
        with pytest.raises(ConfigError, match="tau"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path, fixture_dir):
        path = self.write_config(tmp_path, {"bogus_knob": 3}, fixture_dir)
        with pytest.raises(ConfigError, match="bogus_knob"):
            load_config(path)

    def test_missing_manifest_path(self, tmp_path):
        path = tmp_path / "config.json"
        json.dump({"manifest": "nope.json"}, open(path, "w"))
        with pytest.raises(ConfigError, match="manifest"):
            load_config(path)

    def test_seed_override(self, fixture_dir):
        cfg = load_config(fixture_dir / "config.json", seed=99)
        assert cfg.seeds == [99]

    def test_config_hash_stable(self, fixture_dir):
        a = load_config(fixture_dir / "config.json")
        b = load_config(fixture_dir / "config.json")
        assert a.hash() == b.hash()

    def test_full_scale_defaults(self, tmp_path, fixture_dir):
        # minimal config: everything else comes from the baked-in defaults
        path = tmp_path / "minimal.json"
        json.dump({"manifest": str(fixture_dir / "manifest.json"),
                   "model": "prodlda"}, open(path, "w"))
        cfg = load_config(path)
        assert cfg.tau == 100
        assert cfg.lda_iterations == 400
        assert cfg.epochs == 60
        assert cfg.lr == 2e-3
        assert cfg.batch_size == 64
        assert cfg.dropout == 0.2
        assert cfg.hidden == (100, 100)
        assert cfg.lam == 1.0
        assert cfg.vocab_cap == 5000
        assert cfg.precision == "f64"


def manifest_covers_all_files(outdir):
    manifest = json.load(open(outdir / "MANIFEST.json"))
    listed = set(manifest["artifacts"].values())
    on_disk = set()
    for root, _, files in os.walk(outdir):
        for name in files:
            rel = os.path.relpath(os.path.join(root, name), outdir)
            if name not in ("MANIFEST.json", ".polytopic.lock"):
                on_disk.add(rel)
    return listed == on_disk, listed, on_disk


class TestPipeline:
    def test_exit_codes(self, tmp_path, fixture_dir):
        # validation error -> 1
        bad = tmp_path / "bad.json"
        json.dump({"manifest": "missing.json"}, open(bad, "w"))
        assert main(["ingest", "--config", str(bad), "--out", str(tmp_path / "o1")]) == 1
        # runtime error (bad checkpoint) -> 2
        ckpt = tmp_path / "fake.npz"
        np.savez(ckpt, format="other")
        assert main(["eval", "--config", str(fixture_dir / "config.json"),
                     "--out", str(tmp_path / "o2"), "--checkpoint", str(ckpt)]) == 2

    def test_lockfile_blocks_second_writer(self, tmp_path, fixture_dir):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".polytopic.lock").touch()
        rc = main(["ingest", "--config", str(fixture_dir / "config.json"),
                   "--out", str(out)])
        assert rc == 2

    def test_ingest(self, tmp_path, fixture_dir):
        out = tmp_path / "ingest"
        assert main(["ingest", "--config", str(fixture_dir / "config.json"),
                     "--out", str(out)]) == 0
        assert (out / "vocab_en.txt").is_file()
        assert (out / "vocab_xx.txt").is_file()
        assert (out / "bows_en.npz").is_file()
        ok, listed, on_disk = manifest_covers_all_files(out)
        assert ok, (listed, on_disk)
        # stopwords excluded from the vocab
        vocab = (out / "vocab_en.txt").read_text().split()
        assert "the" not in vocab

    def test_full_chain(self, tmp_path, fixture_dir):
        cfg = str(fixture_dir / "config.json")
        lda_out = tmp_path / "lda"
        assert main(["lda", "--config", cfg, "--out", str(lda_out)]) == 0
        assert (lda_out / "lda.npz").is_file()
        labels = [json.loads(l) for l in open(lda_out / "labels.jsonl")]
        assert len(labels) == 200
        assert all(0 <= r["topic"] < 4 for r in labels)

        # label stage from the checkpoint reproduces the labels
        label_out = tmp_path / "label"
        assert main(["label", "--config", cfg, "--out", str(label_out),
                     "--checkpoint", str(lda_out / "lda.npz")]) == 0
        assert (label_out / "labels.jsonl").read_text() == \
               (lda_out / "labels.jsonl").read_text()

        train_out = tmp_path / "train"
        assert main(["train", "--config", cfg, "--out", str(train_out)]) == 0
        assert (train_out / "ntm.npz").is_file()
        log = [json.loads(l) for l in open(train_out / "training_log.jsonl")]
        assert {"epoch", "mean_loss", "elbo_part", "nll_part"} <= set(log[0])

        eval_out = tmp_path / "eval"
        assert main(["eval", "--config", cfg, "--out", str(eval_out),
                     "--checkpoint", str(train_out / "ntm.npz")]) == 0
        report = json.load(open(eval_out / "report.json"))
        # sigma = 0 fixture: the foreign side reuses pivot embeddings
        assert report["match_pct"]["xx"] == 100.0
        assert report["mean_kl"]["xx"] < 1e-9
        assert (eval_out / "confusion_xx.csv").is_file()
        assert (eval_out / "confusion_xx.png").stat().st_size > 0
        assert (eval_out / "topic_counts.png").stat().st_size > 0
        ok, listed, on_disk = manifest_covers_all_files(eval_out)
        assert ok, (listed, on_disk)

    def test_lda_grid_sweep(self, tmp_path, fixture_dir):
        cfg_raw = json.load(open(fixture_dir / "config.json"))
        cfg_raw.update({"lda_grid": [2, 4], "threads": 2})
        path = fixture_dir / "config_grid.json"
        json.dump(cfg_raw, open(path, "w"))
        out = tmp_path / "lda_grid"
        assert main(["lda", "--config", str(path), "--out", str(out)]) == 0
        sweep = (out / "sweep.csv").read_text().splitlines()
        assert sweep[0] == "tau,npmi"
        assert len(sweep) == 3
        assert (out / "sweep.png").stat().st_size > 0
        summary = json.load(open(out / "lda_summary.json"))
        assert summary["tau"] in (2, 4)

    def test_eval_prodlda_coherence_only(self, tmp_path, fixture_dir):
        cfg_raw = json.load(open(fixture_dir / "config.json"))
        cfg_raw["model"] = "prodlda"
        path = fixture_dir / "config_prodlda.json"
        json.dump(cfg_raw, open(path, "w"))
        train_out = tmp_path / "train_p"
        assert main(["train", "--config", str(path), "--out", str(train_out)]) == 0
        eval_out = tmp_path / "eval_p"
        assert main(["eval", "--config", str(path), "--out", str(eval_out),
                     "--checkpoint", str(train_out / "ntm.npz")]) == 0
        report = json.load(open(eval_out / "report.json"))
        assert report["match_pct"] == {}
        assert sum(report["topic_counts_pivot"]) == 200
        assert isinstance(report["npmi"], float)

    def test_train_tcctm_needs_labels(self, tmp_path, fixture_dir):
        cfg_raw = json.load(open(fixture_dir / "config.json"))
        cfg_raw["model"] = "tcctm"
        path = fixture_dir / "config_tcctm.json"
        json.dump(cfg_raw, open(path, "w"))
        rc = main(["train", "--config", str(path), "--out", str(tmp_path / "t")])
        assert rc == 1

    def test_precision_override_f32(self, tmp_path, fixture_dir):
        out = tmp_path / "train_f32"
        assert main(["train", "--config", str(fixture_dir / "config.json"),
                     "--out", str(out), "--precision", "f32"]) == 0
        arrays = np.load(out / "ntm.npz")
        assert arrays["dec.W"].dtype == np.float32

    def test_synth_command(self, tmp_path):
        out = tmp_path / "synth"
        assert main(["synth", "--out", str(out), "--docs", "50", "--seed", "2"]) == 0
        assert (out / "manifest.json").is_file()
        assert (out / "emb_en.pteb").is_file()
        ok, listed, on_disk = manifest_covers_all_files(out)
        assert ok, (listed, on_disk)


class TestRepro:
    def test_repro_tables(self, tmp_path, fixture_dir):
        out = tmp_path / "repro"
        assert main(["repro", "--config", str(fixture_dir / "config.json"),
                     "--out", str(out)]) == 0
        coherence = (out / "coherence.csv").read_text().splitlines()
        assert coherence[0] == "model,seed,npmi"
        models = {line.split(",")[0] for line in coherence[1:]}
        assert models == {"lda", "prodlda", "ctm", "tcctm"}
        transfer = (out / "transfer.csv").read_text().splitlines()
        assert transfer[0].startswith("model,seed,language,match_pct,mean_kl")
        assert any(line.startswith("ctm,0,xx") for line in transfer[1:])
        ok, listed, on_disk = manifest_covers_all_files(out)
        assert ok, (listed, on_disk)
