import io
import os
import subprocess
import sys

import numpy as np
import pytest

from sublm.cli import run

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def write_demo_corpus(tmp_path, rng, sentences=80):
    words = ["paper", "model", "window", "little", "mountain", "river",
             "reading", "table", "garden", "yellow"]
    lines = [" ".join(rng.choice(words, size=6)) for _ in range(sentences)]
    text = "\n".join(lines) + "\n"
    train = tmp_path / "train.txt"
    valid = tmp_path / "valid.txt"
    train.write_text(text)
    valid.write_text(text)
    return train, valid


def write_demo_config(tmp_path, train, valid, **overrides):
    values = dict(variant="syl-sum", d_s=8, d_lm=10, batch_size=4, bptt=5,
                  max_epochs=2, dropout=0.0, seed=1, mode="chars",
                  train=str(train), valid=str(valid))
    values.update(overrides)
    cfg = tmp_path / "demo.cfg"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return cfg


class TestSyllabify:
    def test_paper_example(self, capsys, monkeypatch):
        monkeypatch.setattr(sys, "stdin", io.StringIO("unconstitutional\n"))
        assert run(["syllabify"]) == 0
        assert capsys.readouterr().out == "un-con-sti-tu-tional\n"

    def test_char_mode(self, capsys, monkeypatch):
        monkeypatch.setattr(sys, "stdin", io.StringIO("cat dog\n"))
        assert run(["syllabify", "--mode", "chars"]) == 0
        assert capsys.readouterr().out == "c-a-t d-o-g\n"

    def test_external_mode(self, capsys, monkeypatch, tmp_path):
        overrides = tmp_path / "seg.tsv"
        overrides.write_text("unconstitutional\tun constitution al\n")
        monkeypatch.setattr(sys, "stdin", io.StringIO("unconstitutional\n"))
        assert run(["syllabify", "--mode", "external",
                    "--overrides", str(overrides)]) == 0
        assert capsys.readouterr().out == "un-constitution-al\n"

    def test_missing_pattern_file(self, capsys):
        assert run(["syllabify", "--patterns", "/does/not/exist.pat"]) == 3


class TestParams:
    def test_shipped_5m_config(self, capsys):
        cfg = os.path.join(REPO, "configs", "syl-concat-5m.cfg")
        assert run(["params", "--config", cfg]) == 0
        count = int(capsys.readouterr().out.split("\t")[1])
        assert abs(count - 5e6) < 0.1 * 5e6

    def test_shipped_13m_config(self, capsys):
        cfg = os.path.join(REPO, "configs", "syl-concat-13m.cfg")
        assert run(["params", "--config", cfg]) == 0
        count = int(capsys.readouterr().out.split("\t")[1])
        assert abs(count - 13e6) < 0.1 * 13e6

    def test_malformed_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("variant = syl-sum\nwhat = ever\n")
        assert run(["params", "--config", str(bad)]) == 4


class TestUsage:
    def test_unknown_verb(self, capsys):
        assert run(["frobnicate"]) == 2

    def test_unknown_flag(self, capsys):
        assert run(["syllabify", "--frob"]) == 2

    def test_missing_required_flag(self, capsys):
        assert run(["train"]) == 2


class TestPipeline:
    @pytest.fixture()
    def trained(self, tmp_path, rng, capsys):
        train_f, valid_f = write_demo_corpus(tmp_path, rng)
        cfg = write_demo_config(tmp_path, train_f, valid_f)
        ckpt = tmp_path / "model.ckpt"
        assert run(["train", "--config", str(cfg), "--out", str(ckpt)]) == 0
        out = capsys.readouterr().out
        assert len(out.strip().split("\n")) == 2  # one line per epoch
        for line in out.strip().split("\n"):
            fields = line.split("\t")
            assert len(fields) == 4
        return tmp_path, cfg, ckpt, train_f, valid_f

    def test_build_vocab(self, tmp_path, rng, capsys):
        train_f, _ = write_demo_corpus(tmp_path, rng)
        out_dir = tmp_path / "vocab"
        assert run(["build-vocab", "--corpus", str(train_f), "--mode", "chars",
                    "--out", str(out_dir)]) == 0
        summary = dict(line.split("\t") for line in
                       capsys.readouterr().out.strip().split("\n"))
        assert int(summary["words"]) == 12  # 10 words + <eos> + <unk>
        assert (out_dir / "words.tsv").exists()
        assert (out_dir / "subwords.tsv").exists()

    def test_train_eval_roundtrip(self, trained, capsys):
        tmp_path, cfg, ckpt, train_f, valid_f = trained
        assert run(["eval", "--checkpoint", str(ckpt),
                    "--corpus", str(valid_f)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("ppl\t")
        assert float(out.split("\t")[1]) > 1.0

    def test_eval_determinism(self, trained, capsys):
        tmp_path, cfg, ckpt, train_f, valid_f = trained
        outs = []
        for _ in range(2):
            assert run(["eval", "--checkpoint", str(ckpt),
                        "--corpus", str(valid_f)]) == 0
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1]

    def test_eval_with_wrong_vocab_fails(self, trained, rng, capsys):
        tmp_path, cfg, ckpt, train_f, valid_f = trained
        # retrain the vocabulary on a different corpus into the config's path
        other = tmp_path / "other.txt"
        other.write_text("completely different words here\n" * 30)
        train_f.write_text(other.read_text())
        assert run(["eval", "--checkpoint", str(ckpt),
                    "--corpus", str(valid_f)]) == 5

    def test_missing_corpus_file(self, trained, capsys):
        tmp_path, cfg, ckpt, train_f, valid_f = trained
        assert run(["eval", "--checkpoint", str(ckpt),
                    "--corpus", str(tmp_path / "nope.txt")]) == 3

    def test_analyze_two_models(self, trained, capsys):
        tmp_path, cfg, ckpt, train_f, valid_f = trained
        ckpt2 = tmp_path / "model2.ckpt"
        assert run(["train", "--config", str(cfg), "--out", str(ckpt2),
                    "--seed", "9"]) == 0
        capsys.readouterr()
        out_dir = tmp_path / "reports"
        assert run(["analyze", "--checkpoint", str(ckpt), "--checkpoint",
                    str(ckpt2), "--corpus", str(valid_f),
                    "--out", str(out_dir)]) == 0
        produced = sorted(os.listdir(out_dir))
        assert "report.tsv" in produced
        assert "shared_errors.tsv" in produced
        assert "freq_ppl.tsv" in produced
        assert "pca.tsv" in produced
        assert "records_model.tsv" in produced and "records_model2.tsv" in produced
        shared = (out_dir / "shared_errors.tsv").read_text().strip().split("\n")
        assert shared[0].startswith("p_star\t")
        assert len(shared) == 7  # header + default 6-point grid

    def test_tune_emits_ranked_table(self, tmp_path, rng, capsys, monkeypatch):
        import sublm.training as training_mod
        monkeypatch.setattr(training_mod, "sample_dims",
                            lambda r: (int(r.integers(4, 8)), int(r.integers(8, 12)),
                                       int(r.integers(9, 14))))
        train_f, valid_f = write_demo_corpus(tmp_path, rng, sentences=40)
        cfg = write_demo_config(tmp_path, train_f, valid_f, max_epochs=1)
        assert run(["tune", "--config", str(cfg), "--budget", "30000",
                    "--tolerance", "0.9", "--trials", "2", "--seed", "0"]) == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert out[0] == "rank\td_s\td_hw\td_lm\tparams\tval_ppl\tseed"
        assert len(out) == 3
        ppls = [float(line.split("\t")[5]) for line in out[1:]]
        assert ppls == sorted(ppls)


class TestSubprocess:
    def test_console_entry_point(self):
        result = subprocess.run(
            [sys.executable, "-m", "sublm.cli", "syllabify"],
            input="unconstitutional conditions\n",
            capture_output=True, text=True, timeout=120)
        assert result.returncode == 0
        assert result.stdout == "un-con-sti-tu-tional con-di-tions\n"
