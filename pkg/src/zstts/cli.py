"""Command-line entry point: ``python -m zstts <subcommand> ...``.

Subcommands
-----------
gen-corpus       generate the synthetic corpus and its speaker split
train            train a model on a generated corpus
synth            synthesize one mel, optionally with a separate rhythm reference
eval             objective evaluation (parallel or non-parallel)
rhythm-transfer  swap rhythm between two fresh synthetic speakers
export-weights   write the layer-weight matrix of a checkpoint

Exit codes: 0 success, 1 usage or configuration error, 2 data or
validation error, 3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, dump_config, load_config
from .corpus import Manifest, generate_corpus, load_manifest, load_utterances, split, write_manifest
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateDurationError,
    FormatError,
    InvalidArgumentError,
    ManifestValidationError,
    ProtocolError,
    TrainingDivergedError,
)
from .evaluation import (
    CONDITIONS,
    run_objective_eval,
    run_rhythm_transfer_eval,
    speaking_rate,
    write_layer_weights,
)
from .features import load_external, write_container
from .acoustic import phoneme_sequence
from .training import load_model, resume, train

log = logging.getLogger("zstts")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
RESOLVED_NAME = "config.resolved.txt"
CORPUS_ITEMS = ("manifest.tsv", "train.tsv", "val.tsv", "test.tsv", "speakers.tsv", RESOLVED_NAME, "mel", "wav", "feat")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zstts", description="Zero-shot TTS conditioning experiments at desk scale.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=1, help="worker threads; 1 gives bit-exact reruns")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="generate corpus + split manifests")
    _add_config_args(p)
    p.add_argument("--out", help="output directory (default: corpus_dir from the config)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--overwrite", action="store_true", help="replace an existing corpus in --out")

    p = sub.add_parser("train", help="train a model")
    _add_config_args(p)
    p.add_argument("--corpus", help="corpus directory (default: corpus_dir)")
    p.add_argument("--run-dir", help="output directory (default: run_dir)")
    p.add_argument("--resume", action="store_true", help="continue from <run-dir>/last.ckpt")
    p.add_argument("--overwrite", action="store_true", help="train from scratch into a non-empty run dir")

    p = sub.add_parser("synth", help="synthesize one utterance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="manifest used to resolve utterance ids")
    text = p.add_mutually_exclusive_group(required=True)
    text.add_argument("--utt", help="take the text (phoneme ids) of this utterance")
    text.add_argument("--phonemes", help="file with comma/whitespace-separated phoneme ids")
    p.add_argument("--acoustic-ref", required=True, help="utterance id or feature file")
    p.add_argument("--duration-ref", help="utterance id or feature file (separate mode only)")
    p.add_argument("--teacher-forced", action="store_true", help="use --utt's ground-truth durations")
    p.add_argument("--out", required=True, help="output mel container path")

    p = sub.add_parser("eval", help="objective evaluation on unseen speakers")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="test manifest")
    p.add_argument("--condition", required=True, choices=CONDITIONS)
    p.add_argument("--seed", type=int, default=0, help="reference draw seed (non-parallel)")
    p.add_argument("--report", required=True, help="report path (TSV; summary at <report>.json)")
    p.add_argument("--train-manifest", help="training manifest, used to verify the speakers are unseen")
    p.add_argument("--model-id", default=None)

    p = sub.add_parser("rhythm-transfer", help="rhythm swap between a fast and a slow unseen speaker")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="speaking-rate table path")
    p.add_argument("--fast-rate", type=float, default=0.7)
    p.add_argument("--slow-rate", type=float, default=1.4)
    p.add_argument("--n-texts", type=int, default=20)
    p.add_argument("--text-seed", type=int, default=7)

    p = sub.add_parser("export-weights", help="write the layer-weight matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------


def _config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.threads != 1:
        overrides.append(f"train.threads={args.threads}")
    return load_config(args.config, overrides)


def _prepare_out(path: Path, overwrite: bool, owned: tuple[str, ...] | None = None):
    """Refuse a non-empty ``path`` unless ``overwrite``; then remove only what we own."""
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise UsageError(f"{path} is not empty; pass --overwrite to replace it")
        for name in owned or ():
            target = path / name
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
    path.mkdir(parents=True, exist_ok=True)


def cmd_gen_corpus(args) -> int:
    if args.seed is not None:
        args.overrides = [f"seed={args.seed}"] + list(args.overrides)
    cfg = _config(args)
    out = Path(args.out or cfg.corpus_dir)
    _prepare_out(out, args.overwrite, CORPUS_ITEMS)
    manifest = generate_corpus(cfg.corpus, cfg.seed, out, cfg.extractor, cfg.extractor_seed, args.threads)
    parts = split(manifest, cfg.split_ratios, cfg.seed)
    for name, part in zip(("train", "val", "test"), parts):
        write_manifest(part, out / f"{name}.tsv")
    (out / RESOLVED_NAME).write_text(dump_config(cfg))
    print(f"wrote {len(manifest)} utterances from {len(manifest.speakers)} speakers to {out}")
    for name, part in zip(("train", "val", "test"), parts):
        print(f"  {name:<5} {len(part.speakers):3d} speakers {len(part):5d} utterances")
    return EXIT_OK


def _need(path: Path) -> Path:
    if not path.is_file():
        raise ManifestValidationError(f"missing manifest {path}")
    return path


def cmd_train(args) -> int:
    cfg = _config(args)
    corpus = Path(args.corpus or cfg.corpus_dir)
    run_dir = Path(args.run_dir or cfg.run_dir)
    train_path = _need(corpus / "train.tsv")
    _need(corpus / "val.tsv")
    tcfg = cfg.train.__class__(**{**cfg.train.__dict__, "checkpoint_dir": str(run_dir)})
    if args.resume:
        if not (run_dir / "last.ckpt").is_file():
            raise CheckpointError(f"nothing to resume in {run_dir}")
    else:
        _prepare_out(run_dir, args.overwrite, ("last.ckpt", "best.ckpt", "metrics.tsv", RESOLVED_NAME, "val_report.tsv",
                                               "val_report.tsv.json", "layer_weights.tsv"))
    train_utts = load_utterances(load_manifest(train_path), cfg.extractor, cfg.extractor_seed, args.threads)
    val_manifest = load_manifest(corpus / "val.tsv")
    stack = train_utts[0].stack
    if (stack.n_layers, stack.dim) != (cfg.model.ssl_layers, cfg.model.ssl_dim):
        raise DataError(
            f"features have {stack.n_layers} layers x {stack.dim} dims, config expects "
            f"{cfg.model.ssl_layers} x {cfg.model.ssl_dim}"
        )
    (run_dir / RESOLVED_NAME).write_text(dump_config(cfg))
    if args.resume:
        trainer = resume(run_dir / "last.ckpt", tcfg, train_utts)
    else:
        trainer = train(tcfg, train_utts)
    last = trainer.history[-1] if trainer.history else {}
    print(f"trained {trainer.step} steps; final train mel-MAE {last.get('mel_mae', float('nan')):.4f}")
    roles, matrix = trainer.model.layer_weight_matrix()
    write_layer_weights(run_dir / "layer_weights.tsv", roles, matrix)
    if len(val_manifest):
        val_utts = load_utterances(val_manifest, cfg.extractor, cfg.extractor_seed, args.threads)
        report = run_objective_eval(trainer.model, val_utts, "parallel", train_speakers={u.speaker_id for u in train_utts})
        report.write(run_dir / "val_report.tsv")
        s = report.summary()
        print(f"unseen-speaker validation: Spec. {s['spec_mel_mae']:.4f}  Dur. {s['dur_rmse_ms']:.2f} ms")
    if cfg.synth_acoustic_ref:
        utts = {u.utt_id: u for u in train_utts}
        utts.update({u.utt_id: u for u in load_utterances(val_manifest, cfg.extractor, cfg.extractor_seed)})
        _preview(trainer.model, utts, cfg, run_dir)
    return EXIT_OK


def _preview(model, utts, cfg: RunConfig, run_dir: Path):
    try:
        ac = utts[cfg.synth_acoustic_ref]
        du = utts[cfg.synth_duration_ref] if cfg.synth_duration_ref else None
    except KeyError as exc:
        raise ManifestValidationError(f"preview reference {exc} not found", str(exc)) from exc
    ph = phoneme_sequence(ac.phonemes, model.cfg.n_classes)
    result = model.synthesize(ph, ac.stack, None if du is None else du.stack)
    _write_synth(run_dir / "preview.fea", result, model.cfg.hop_seconds, ac.utt_id, du.utt_id if du else ac.utt_id, ac.phonemes)


def _resolve_ref(ref: str, manifest: Manifest | None):
    p = Path(ref)
    if p.suffix == ".fea" and p.is_file():
        return load_external(p), ref
    if manifest is None:
        raise UsageError(f"reference {ref!r} is not a feature file and no --manifest was given")
    for r in manifest.records:
        if r.utt_id == ref:
            if r.feat_path == "-":
                raise DataError(f"utterance {ref} has no cached features")
            return load_external(manifest.resolve(r.feat_path)), ref
    raise ManifestValidationError(f"utterance {ref} not in manifest", ref)


def _write_synth(out: Path, result, hop: float, ac_id: str, du_id: str, phonemes) -> dict:
    out.parent.mkdir(parents=True, exist_ok=True)
    write_container(out, result.mel.frames[None], hop)
    d = result.durations_used
    lines = ["index\tphoneme\tframes\tpredicted"]
    for i, (c, f, pr) in enumerate(zip(phonemes, d, result.predicted_durations_frames)):
        lines.append(f"{i}\t{c}\t{f}\t{pr}")
    out.with_name(out.name + ".durations.txt").write_text("\n".join(lines) + "\n")
    meta = {
        "acoustic_ref": ac_id,
        "duration_ref": du_id,
        "rhythm_transfer": ac_id != du_id,
        "n_phonemes": int(len(d)),
        "n_frames": int(result.mel.frames.shape[0]),
        "duration_sum": int(np.sum(d)),
        "speaking_rate": speaking_rate(d, hop),
    }
    out.with_name(out.name + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def _read_phonemes(path) -> list[int]:
    raw = Path(path).read_text().replace(",", " ").split()
    try:
        return [int(v) for v in raw]
    except ValueError as exc:
        raise DataError(f"{path}: phoneme ids must be integers") from exc


def cmd_synth(args) -> int:
    model, _ = load_model(args.checkpoint)
    if args.duration_ref and model.cfg.mode == "common":
        raise UsageError("--duration-ref needs a separate-conditioning checkpoint (this one is common)")
    manifest = load_manifest(args.manifest, validate=False) if args.manifest else None
    teacher = None
    if args.utt:
        if manifest is None:
            raise UsageError("--utt needs --manifest")
        rec = next((r for r in manifest.records if r.utt_id == args.utt), None)
        if rec is None:
            raise ManifestValidationError(f"utterance {args.utt} not in manifest", args.utt)
        phonemes = rec.phonemes
        teacher = rec.durations if args.teacher_forced else None
    else:
        if args.teacher_forced:
            raise UsageError("--teacher-forced needs --utt")
        phonemes = _read_phonemes(args.phonemes)
    ac_stack, ac_id = _resolve_ref(args.acoustic_ref, manifest)
    du_stack, du_id = (None, ac_id)
    if args.duration_ref:
        du_stack, du_id = _resolve_ref(args.duration_ref, manifest)
    ph = phoneme_sequence(phonemes, model.cfg.n_classes)
    result = model.synthesize(ph, ac_stack, du_stack, teacher_durations=teacher)
    meta = _write_synth(Path(args.out), result, model.cfg.hop_seconds, ac_id, du_id, phonemes)
    print(f"frames {meta['n_frames']} (duration sum {meta['duration_sum']}), "
          f"speaking rate {meta['speaking_rate']:.3f} phonemes/s")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    manifest = load_manifest(args.manifest)
    train_speakers = None
    if args.train_manifest:
        train_speakers = load_manifest(args.train_manifest, validate=False).speakers
    utts = load_utterances(manifest, threads=args.threads)
    if any(u.stack is None for u in utts):
        raise DataError("test manifest lacks cached features")
    report = run_objective_eval(
        model, utts, args.condition, args.seed, train_speakers, args.model_id or Path(args.checkpoint).stem
    )
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    report.write(args.report)
    s = report.summary()
    print(f"{s['condition']}: Spec. {s['spec_mel_mae']:.4f}  Dur. {s['dur_rmse_ms']:.2f} ms  ({s['n_utterances']} utterances)")
    return EXIT_OK


def cmd_rhythm_transfer(args) -> int:
    from .corpus import CorpusModel
    from .experiments import rhythm_pair, rhythm_texts

    cfg = _config(args)
    model, _ = load_model(args.checkpoint)
    if model.cfg.mode != "separate":
        raise ProtocolError("rhythm transfer needs a separate-conditioning checkpoint")
    if (model.cfg.ssl_layers, model.cfg.ssl_dim) != (cfg.model.ssl_layers, cfg.model.ssl_dim):
        raise ConfigError("extractor section of the config does not match the checkpoint's feature dims")
    corpus = CorpusModel(cfg.corpus, cfg.seed)
    texts = rhythm_texts(corpus, args.n_texts, args.text_seed)
    a, b = rhythm_pair(corpus, cfg.extractor, texts, args.fast_rate, args.slow_rate, base_index=max(900, cfg.corpus.n_speakers))
    table = run_rhythm_transfer_eval(model, a, b, texts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_text())
    sys.stdout.write(table.to_text())
    for row in table.rows[:2]:
        print(f"{row['name']}: {sum(table.closer_to_duration_ref(row))}/{len(texts)} texts closer to the duration reference")
    return EXIT_OK


def cmd_export_weights(args) -> int:
    model, _ = load_model(args.checkpoint)
    roles, matrix = model.layer_weight_matrix()
    write_layer_weights(args.out, roles, matrix)
    for role, row in zip(roles, matrix):
        print(role, " ".join(f"{v:.3f}" for v in row))
    return EXIT_OK


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "rhythm-transfer": cmd_rhythm_transfer,
    "export-weights": cmd_export_weights,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"zstts: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DegenerateDurationError as exc:
        print(f"zstts: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ConfigError, InvalidArgumentError) as exc:
        print(f"zstts: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"zstts: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FormatError, ManifestValidationError, CheckpointError, ProtocolError, OSError) as exc:
        print(f"zstts: error: {exc}", file=sys.stderr)
        return EXIT_DATA
