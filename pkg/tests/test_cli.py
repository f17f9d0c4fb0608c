import json

import pytest

from simpledyg.cli import main

TINY = ["--d-model", "8", "--layers", "1", "--max-epochs", "1", "--batch-size", "16", "--T", "6",
        "--log-level", "WARNING"]


@pytest.fixture
def synth_dir(tmp_path):
    rc = main(["synth", "--workdir", str(tmp_path), "--num-egos", "4", "--neighbors", "2", "--period", "2",
               "--T", "6", "--extra-steps", "3", "--seed", "7", "--log-level", "WARNING"])
    assert rc == 0
    return tmp_path


def test_synth_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--kind", "cyclic", "--seed", "7", "--workdir", str(tmp_path / d)]) == 0
    for f in ("synth.edges", "synth.truth.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_help_exits_zero(capsys):
    assert main(["train", "--help"]) == 0
    out = capsys.readouterr().out
    for flag in ("--lr", "--patience", "--d-model", "--special", "--threads", "--workdir", "--config"):
        assert flag in out


def test_unknown_flag_is_usage_error(capsys):
    assert main(["train", "--no-such-flag"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_command_is_usage_error(capsys):
    assert main([]) == 2


def test_config_errors_exit_two(synth_dir, capsys):
    assert main(["train", "--workdir", str(synth_dir)]) == 2
    assert main(["train", "--workdir", str(synth_dir), "--edges", "missing.txt"]) == 2
    assert main(["train", "--workdir", str(synth_dir), "--edges", "synth.edges", "--T", "2"] + TINY[:-4]) == 2
    assert main(["train", "--workdir", str(synth_dir), "--edges", "synth.edges", "--heads", "3"] + TINY) == 2
    assert main(["stats", "--workdir", str(synth_dir), "--edges", "synth.edges"]) == 2


def test_runtime_errors_exit_one(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("a b notatime\n")
    assert main(["ingest", "--workdir", str(tmp_path), "--edges", "bad.txt"]) == 1
    assert "line 1" in capsys.readouterr().err
    assert (tmp_path / "ingest.manifest.json").exists()


def test_config_file_and_flag_precedence(synth_dir):
    (synth_dir / "run.cfg").write_text("# tiny run\nedges = synth.edges\nT=6\nd-model=8\nlayers=1\n"
                                       "max_epochs=1\nbatch_size=16\nseed=3\nlr=0.5\n")
    assert main(["train", "--workdir", str(synth_dir), "--config", str(synth_dir / "run.cfg"), "--lr", "0.01",
                 "--log-level", "WARNING"]) == 0
    cfg = json.loads((synth_dir / "train.manifest.json").read_text())["config"]
    assert cfg["lr"] == 0.01 and cfg["seed"] == 3 and cfg["d_model"] == 8 and cfg["T"] == 6
    (synth_dir / "bad.cfg").write_text("no_such_key=1\n")
    assert main(["train", "--workdir", str(synth_dir), "--config", str(synth_dir / "bad.cfg")]) == 2


def test_threads_env_fallback(synth_dir, monkeypatch):
    monkeypatch.setenv("SIMPLEDYG_THREADS", "2")
    assert main(["stats", "--workdir", str(synth_dir), "--edges", "synth.edges", "--bin-width", "1"]) == 0
    assert json.loads((synth_dir / "stats.manifest.json").read_text())["threads"] == 2
    assert main(["stats", "--workdir", str(synth_dir), "--edges", "synth.edges", "--bin-width", "1",
                 "--threads", "1"]) == 0
    assert json.loads((synth_dir / "stats.manifest.json").read_text())["threads"] == 1


def test_pipeline_outputs(synth_dir):
    w = ["--workdir", str(synth_dir), "--edges", "synth.edges", "--truth", "synth.truth.csv"]
    assert main(["train"] + w + TINY + ["--extra-steps", "3"]) == 0
    log = (synth_dir / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,step,loss,val_ndcg5,val_jaccard,lr" and len(log) == 2
    assert (synth_dir / "model.ckpt").read_bytes().startswith(b"SDYG1\n")

    assert main(["predict"] + w + ["--checkpoint", "model.ckpt", "--log-level", "WARNING"]) == 0
    rows = (synth_dir / "predict.tsv").read_text().splitlines()
    assert len(rows) == 4 and all(len(r.split("\t")) == 4 and r.split("\t")[1] == "6" for r in rows)

    assert main(["multistep"] + w + ["--checkpoint", "model.ckpt", "--log-level", "WARNING"]) == 0
    steps = [r.split("\t")[1] for r in (synth_dir / "multistep.tsv").read_text().splitlines()]
    assert sorted(set(steps)) == ["6", "7", "8"]
    assert (synth_dir / "multistep_scores.csv").read_text().startswith("step,ndcg5,jaccard\n")

    assert main(["eval"] + w + ["--checkpoint", "model.ckpt", "--log-level", "WARNING"]) == 0
    report = (synth_dir / "report.csv").read_text().splitlines()
    assert report[0] == "ndcg5_mean,ndcg5_std,jaccard_mean,jaccard_std,method" and len(report) == 3


def test_checkpoint_vocab_mismatch(synth_dir, tmp_path):
    w = ["--workdir", str(synth_dir), "--edges", "synth.edges"]
    assert main(["train"] + w + TINY) == 0
    (synth_dir / "other.edges").write_text("x y 0\ny z 1\n")
    assert main(["predict", "--workdir", str(synth_dir), "--edges", "other.edges", "--checkpoint", "model.ckpt"]) == 2


def test_tokenize_corpus(synth_dir):
    assert main(["tokenize", "--workdir", str(synth_dir), "--edges", "synth.edges", "--T", "6",
                 "--special", "none", "--temporal", "same"]) == 0
    first = (synth_dir / "corpus.txt").read_text().splitlines()[0].split()
    assert first[0] == "u0" and first[1] == "<|time1|>" and first[-1] == "<|endoftext|>"


def test_ablate_covers_all_variants(synth_dir):
    assert main(["ablate", "--workdir", str(synth_dir), "--edges", "synth.edges", "--truth", "synth.truth.csv"]
                + TINY) == 0
    rows = (synth_dir / "ablation.csv").read_text().splitlines()
    assert rows[0].startswith("special,temporal,")
    pairs = {tuple(r.split(",")[:2]) for r in rows[1:]}
    assert len(rows) == 10 and len(pairs) == 9


def test_manifest_replay_is_bit_identical(synth_dir, tmp_path):
    edges, truth = str(synth_dir / "synth.edges"), str(synth_dir / "synth.truth.csv")
    a = tmp_path / "a"
    assert main(["eval", "--workdir", str(a), "--edges", edges, "--truth", truth, "--save-checkpoints", "ck"]
                + TINY) == 0
    manifest = a / "eval.manifest.json"
    for d in ("b", "c"):
        assert main(["--from-manifest", str(manifest), "--workdir", str(tmp_path / d), "--threads", "1"]) == 0
    for f in ("ck/run0.ckpt", "report.csv"):
        assert (a / f).read_bytes() == (tmp_path / "b" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()


def test_manifest_rejects_changed_inputs(synth_dir, tmp_path):
    edges = synth_dir / "synth.edges"
    assert main(["stats", "--workdir", str(tmp_path), "--edges", str(edges), "--bin-width", "1"]) == 0
    edges.write_text(edges.read_text() + "u0 u1 5.5\n")
    assert main(["--from-manifest", str(tmp_path / "stats.manifest.json"), "--workdir", str(tmp_path / "r")]) == 2
