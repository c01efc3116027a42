import json
import time
from pathlib import Path

import numpy as np
import pytest

from zstts.cli import main
from zstts.config import RunConfig, apply_overrides, load_config
from zstts.errors import ConfigError
from zstts.features import read_container

SMALL = """\
# tiny config for CLI tests
corpus.n_speakers = 8
corpus.utts_per_speaker = 4
extractor.dim = 16
split.ratios = 0.5,0.25,0.25
train.max_steps = 150
train.batch_size = 8
train.warmup = 30
train.lr_scale = 2.0
model.hidden = 32
"""


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.cfg").write_text(SMALL)
    cfg = str(root / "small.cfg")
    assert main(["gen-corpus", "--config", cfg, "--out", str(root / "corp")]) == 0
    assert main(["train", "--config", cfg, "--corpus", str(root / "corp"), "--run-dir", str(root / "sep")]) == 0
    assert main(["train", "--config", cfg, "--corpus", str(root / "corp"), "--run-dir", str(root / "com"),
                 "--set", "model.mode=common", "--set", "train.max_steps=20"]) == 0
    return root, cfg


def first_test_utts(corp: Path, n=2):
    lines = (corp / "test.tsv").read_text().splitlines()[1:]
    return [l.split("\t")[0] for l in lines[:n]]


def test_gen_corpus_layout_and_determinism(ws, capsys):
    root, cfg = ws
    corp = root / "corp"
    for name in ("manifest.tsv", "train.tsv", "val.tsv", "test.tsv", "speakers.tsv", "config.resolved.txt"):
        assert (corp / name).is_file(), name
    assert len(list((corp / "feat").iterdir())) == 32
    before = tree(corp)
    assert main(["gen-corpus", "--config", cfg, "--out", str(corp)]) == 1
    assert "--overwrite" in capsys.readouterr().err
    assert main(["gen-corpus", "--config", cfg, "--out", str(corp), "--overwrite"]) == 0
    assert tree(corp) == before


def test_gen_corpus_bad_ratios(tmp_path, capsys):
    code = main(["gen-corpus", "--out", str(tmp_path / "c"), "--set", "split.ratios=0.5,0.3,0.3"])
    assert code == 1
    assert "split" in capsys.readouterr().err
    assert not (tmp_path / "c").exists()


def test_overwrite_keeps_foreign_files(ws, tmp_path):
    root, cfg = ws
    out = tmp_path / "c"
    out.mkdir()
    (out / "notes.txt").write_text("mine")
    assert main(["gen-corpus", "--config", cfg, "--out", str(out), "--overwrite"]) == 0
    assert (out / "notes.txt").read_text() == "mine"


def test_train_outputs(ws):
    root, _ = ws
    run = root / "sep"
    for name in ("last.ckpt", "best.ckpt", "metrics.tsv", "config.resolved.txt", "layer_weights.tsv", "val_report.tsv"):
        assert (run / name).is_file(), name
    resolved = load_config(run / "config.resolved.txt")
    assert resolved.model.mode == "separate" and resolved.model.aggregator == "attentive"
    assert resolved.model.ssl_dim == 16 and resolved.train.max_steps == 150
    assert len((run / "layer_weights.tsv").read_text().splitlines()) == 3  # header + 2 roles
    assert len((root / "com" / "layer_weights.tsv").read_text().splitlines()) == 2


def test_export_weights(ws, tmp_path):
    root, _ = ws
    assert main(["export-weights", "--checkpoint", str(root / "sep" / "last.ckpt"), "--out", str(tmp_path / "w.tsv")]) == 0
    rows = [l.split("\t") for l in (tmp_path / "w.tsv").read_text().splitlines()[1:]]
    assert [r[0] for r in rows] == ["acoustic", "duration"]
    assert all(abs(sum(map(float, r[1:])) - 1) < 1e-5 for r in rows)


def test_train_common_with_duration_ref_rejected(ws, tmp_path):
    root, cfg = ws
    code = main(["train", "--config", cfg, "--corpus", str(root / "corp"), "--run-dir", str(tmp_path / "r"),
                 "--set", "model.mode=common", "--set", "synth.duration_ref=x"])
    assert code == 1


def test_train_missing_manifest_fails_fast(tmp_path):
    t0 = time.perf_counter()
    assert main(["train", "--corpus", str(tmp_path / "nowhere"), "--run-dir", str(tmp_path / "r")]) == 2
    assert time.perf_counter() - t0 < 2.0
    assert not (tmp_path / "r").exists()


def test_train_refuses_nonempty_run_dir(ws):
    root, cfg = ws
    assert main(["train", "--config", cfg, "--corpus", str(root / "corp"), "--run-dir", str(root / "sep")]) == 1


def test_resume_continues(ws, tmp_path):
    root, cfg = ws
    run = tmp_path / "r"
    common = ["--config", cfg, "--corpus", str(root / "corp"), "--run-dir", str(run)]
    assert main(["train", *common, "--set", "train.max_steps=4"]) == 0
    assert main(["train", *common, "--set", "train.max_steps=6", "--resume"]) == 0
    steps = [l.split("\t")[0] for l in (run / "metrics.tsv").read_text().splitlines()[1:]]
    assert steps == [str(s) for s in range(1, 7)]
    assert main(["train", *common, "--set", "train.max_steps=8", "--set", "model.mode=common", "--resume"]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(ws, tmp_path):
    root, cfg = ws
    code = main(["train", "--config", cfg, "--corpus", str(root / "corp"), "--run-dir", str(tmp_path / "r"),
                 "--set", "train.lr_scale=1e36", "--set", "train.max_steps=20"])
    assert code == 3
    assert (tmp_path / "r" / "last.ckpt").is_file()


def synth(root, out, *extra):
    return main(["synth", "--checkpoint", str(root / "sep" / "last.ckpt"), "--manifest", str(root / "corp" / "manifest.tsv"),
                 "--out", str(out), *extra])


def test_synth_defaulting_and_consistency(ws, tmp_path, capsys):
    root, _ = ws
    a, _ = first_test_utts(root / "corp")
    assert synth(root, tmp_path / "x.fea", "--utt", a, "--acoustic-ref", a) == 0
    printed = capsys.readouterr().out
    assert synth(root, tmp_path / "y.fea", "--utt", a, "--acoustic-ref", a, "--duration-ref", a) == 0
    assert (tmp_path / "x.fea").read_bytes() == (tmp_path / "y.fea").read_bytes()
    mel, _ = read_container(tmp_path / "x.fea")
    meta = json.loads((tmp_path / "x.fea.json").read_text())
    assert mel.shape[1] == meta["n_frames"] == meta["duration_sum"]
    assert f"duration sum {meta['duration_sum']}" in printed
    listing = (tmp_path / "x.fea.durations.txt").read_text().splitlines()
    assert sum(int(l.split("\t")[2]) for l in listing[1:]) == meta["duration_sum"]


def test_synth_rhythm_transfer_provenance(ws, tmp_path):
    root, _ = ws
    a, b = first_test_utts(root / "corp", 6)[::5]
    (tmp_path / "ph.txt").write_text("1, 2 3 4\n5 0")
    assert synth(root, tmp_path / "t.fea", "--phonemes", str(tmp_path / "ph.txt"), "--acoustic-ref", a, "--duration-ref", b) == 0
    meta = json.loads((tmp_path / "t.fea.json").read_text())
    assert (meta["acoustic_ref"], meta["duration_ref"], meta["rhythm_transfer"]) == (a, b, True)
    assert meta["n_phonemes"] == 6


def test_synth_common_checkpoint_rejects_duration_ref(ws, tmp_path):
    root, _ = ws
    a, b = first_test_utts(root / "corp")
    code = main(["synth", "--checkpoint", str(root / "com" / "last.ckpt"), "--manifest", str(root / "corp" / "manifest.tsv"),
                 "--utt", a, "--acoustic-ref", a, "--duration-ref", b, "--out", str(tmp_path / "z.fea")])
    assert code == 1


def test_synth_unknown_utterance(ws, tmp_path):
    root, _ = ws
    assert synth(root, tmp_path / "q.fea", "--utt", "nobody_000", "--acoustic-ref", "nobody_000") == 2


def test_eval_reports(ws, tmp_path, capsys):
    root, _ = ws
    ck, test = str(root / "sep" / "last.ckpt"), str(root / "corp" / "test.tsv")
    for cond in ("parallel", "non-parallel"):
        assert main(["eval", "--checkpoint", ck, "--manifest", test, "--condition", cond,
                     "--report", str(tmp_path / f"{cond}.tsv"), "--train-manifest", str(root / "corp" / "train.tsv")]) == 0
        out = capsys.readouterr().out
        assert "Spec." in out and "Dur." in out
        summary = json.loads((tmp_path / f"{cond}.tsv.json").read_text())
        assert summary["condition"] == cond and {"spec_mel_mae", "dur_rmse_ms"} <= set(summary)
    first = (tmp_path / "non-parallel.tsv").read_bytes()
    main(["eval", "--checkpoint", ck, "--manifest", test, "--condition", "non-parallel",
          "--report", str(tmp_path / "non-parallel.tsv")])
    assert (tmp_path / "non-parallel.tsv").read_bytes() == first


def test_eval_bad_condition_and_overlap(ws, tmp_path):
    root, _ = ws
    ck = str(root / "sep" / "last.ckpt")
    assert main(["eval", "--checkpoint", ck, "--manifest", str(root / "corp" / "test.tsv"), "--condition", "oracle",
                 "--report", str(tmp_path / "r.tsv")]) == 1
    assert main(["eval", "--checkpoint", ck, "--manifest", str(root / "corp" / "train.tsv"), "--condition", "parallel",
                 "--report", str(tmp_path / "r.tsv"), "--train-manifest", str(root / "corp" / "train.tsv")]) == 2


def test_rhythm_transfer_command(ws, tmp_path):
    root, cfg = ws
    out = tmp_path / "rates.tsv"
    assert main(["rhythm-transfer", "--config", cfg, "--checkpoint", str(root / "sep" / "last.ckpt"),
                 "--out", str(out), "--n-texts", "4"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("speaker\tacoustic_ref\tduration_ref\toriginal") and len(lines) == 5
    assert main(["rhythm-transfer", "--config", cfg, "--checkpoint", str(root / "com" / "last.ckpt"),
                 "--out", str(out), "--n-texts", "4"]) == 2


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["train", "--no-such-flag"]) == 1
    assert main(["train", "--set", "nonsense"]) == 1
    assert main(["train", "--set", "train.max_steps=abc"]) == 1


def test_config_overrides():
    cfg = apply_overrides(RunConfig(), {"train.max_steps": "7", "model.mode": "common", "split.ratios": "0.6,0.2,0.2"})
    r = cfg.resolved()
    assert r.train.max_steps == 7 and r.model.mode == "common" and r.split_ratios == (0.6, 0.2, 0.2)
    assert r.model.ssl_layers == r.extractor.n_blocks + 1
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), {"model.ssl_dim": "3"})
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), {"train.nope": "1"})


def test_resolved_config_reloads(ws, tmp_path):
    root, _ = ws
    text = (root / "sep" / "config.resolved.txt").read_text()
    assert load_config(root / "sep" / "config.resolved.txt") == load_config(root / "small.cfg")
    (tmp_path / "bad.cfg").write_text(text.replace("model.ssl_dim = 16", "model.ssl_dim = 17"))
    with pytest.raises(ConfigError, match="ssl_dim"):
        load_config(tmp_path / "bad.cfg")


def test_desk_scale_smoke_run(tmp_path):
    # default (desk-scale) corpus, 10 training steps
    assert main(["--threads", "4", "gen-corpus", "--out", str(tmp_path / "corp")]) == 0
    t0 = time.perf_counter()
    assert main(["train", "--corpus", str(tmp_path / "corp"), "--run-dir", str(tmp_path / "run"),
                 "--set", "train.max_steps=10"]) == 0
    assert time.perf_counter() - t0 < 60
    rows = (tmp_path / "run" / "metrics.tsv").read_text().splitlines()
    assert len(rows) == 11 and np.isfinite(float(rows[-1].split("\t")[2]))
