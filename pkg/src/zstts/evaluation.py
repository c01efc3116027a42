"""Objective evaluation, rhythm-transfer measurement and layer-weight export.

Conventions
-----------
* ``mel_mae``: mean of |pred - target| over all T * M entries.
* ``duration_rmse_ms``: RMSE in frames times the hop, in milliseconds. The
  aggregate over a test set pools squared errors over every phoneme of
  every utterance before the square root.
* ``speaking_rate``: phonemes per second, ``P / (sum(d) * hop)``.

Protocol
--------
Mels are always generated with the ground-truth durations of the test
utterance, so predicted and target mels align frame for frame. Durations
are compared predictor-vs-ground-truth. Under the parallel condition each
utterance is its own reference. Under the non-parallel condition one
reference utterance per speaker is drawn with the seed and reused for all
that speaker's other utterances; the reference itself is not scored.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acoustic import AcousticModel, phoneme_sequence, to_frames
from .corpus import Utterance
from .errors import InvalidArgumentError, ProtocolError

CONDITIONS = ("parallel", "non-parallel")


def mel_mae(pred, target) -> float:
    pred = getattr(pred, "frames", pred)
    target = getattr(target, "frames", target)
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ProtocolError(f"mel shapes differ {pred.shape} vs {target.shape}; durations were not teacher-forced")
    return float(np.mean(np.abs(pred - target)))


def duration_rmse_ms(pred_frames, target_frames, hop_seconds: float) -> float:
    pred = np.asarray(pred_frames, dtype=np.float64)
    target = np.asarray(target_frames, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"duration lengths differ: {pred.shape} vs {target.shape}")
    return float(np.sqrt(np.mean((pred - target) ** 2)) * hop_seconds * 1000.0)


def speaking_rate(durations_frames, hop_seconds: float) -> float:
    d = np.asarray(durations_frames)
    total = float(d.sum())
    if total < 1:
        raise InvalidArgumentError("speaking rate undefined for zero total duration")
    return d.size / (total * hop_seconds)


@dataclass
class EvalReport:
    condition: str
    model_id: str
    hop_seconds: float
    entries: list[dict] = field(default_factory=list)

    @property
    def mel_mae(self) -> float:
        return float(np.mean([e["mel_mae"] for e in self.entries]))

    @property
    def duration_rmse_ms(self) -> float:
        sq = sum(e["dur_sq_err"] for e in self.entries)
        n = sum(e["n_phonemes"] for e in self.entries)
        return math.sqrt(sq / n) * self.hop_seconds * 1000.0

    def summary(self) -> dict:
        return {
            "condition": self.condition,
            "model": self.model_id,
            "n_utterances": len(self.entries),
            "spec_mel_mae": self.mel_mae,
            "dur_rmse_ms": self.duration_rmse_ms,
        }

    def write(self, path) -> None:
        """Per-utterance TSV at ``path`` plus ``<path>.json`` with the aggregate."""
        path = Path(path)
        cols = ["utt_id", "speaker_id", "ref_id", "n_phonemes", "mel_mae", "dur_rmse_ms", "dur_sq_err"]
        lines = ["\t".join(cols)]
        for e in self.entries:
            lines.append("\t".join(str(e[c]) if isinstance(e[c], (str, int)) else repr(float(e[c])) for c in cols))
        s = self.summary()
        lines.append(f"# aggregate\tSpec.={s['spec_mel_mae']!r}\tDur.={s['dur_rmse_ms']!r}")
        path.write_text("\n".join(lines) + "\n")
        path.with_name(path.name + ".json").write_text(json.dumps(s, indent=2, sort_keys=True) + "\n")


def choose_references(utts: list[Utterance], seed: int) -> dict[str, Utterance]:
    """One seeded-random reference utterance per speaker."""
    by_spk: dict[str, list[Utterance]] = {}
    for u in sorted(utts, key=lambda u: u.utt_id):
        by_spk.setdefault(u.speaker_id, []).append(u)
    rng = np.random.default_rng(seed)
    return {spk: group[int(rng.integers(len(group)))] for spk, group in sorted(by_spk.items())}


def run_objective_eval(
    model: AcousticModel,
    test_utts: list[Utterance],
    condition: str = "parallel",
    seed: int = 0,
    train_speakers=None,
    model_id: str = "model",
    batch_size: int = 16,
) -> EvalReport:
    if condition not in CONDITIONS:
        raise InvalidArgumentError(f"condition must be one of {CONDITIONS}, got {condition!r}")
    utts = sorted(test_utts, key=lambda u: u.utt_id)
    if train_speakers is not None:
        overlap = sorted({u.speaker_id for u in utts} & set(train_speakers))
        if overlap:
            raise ProtocolError(f"test speakers seen in training: {overlap}")
    if condition == "parallel":
        pairs = [(u, u) for u in utts]
    else:
        refs = choose_references(utts, seed)
        pairs = [(u, refs[u.speaker_id]) for u in utts if u is not refs[u.speaker_id]]
    hop = model.cfg.hop_seconds
    report = EvalReport(condition, model_id, hop)
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i : i + batch_size]
        items = [p[0] for p in chunk]
        refs_list = [p[1] for p in chunk]
        batch = model.make_batch(items, {role: refs_list for role in model.cfg.roles})
        mel, logdur, _ = model.forward(batch)
        for b, (u, ref) in enumerate(chunk):
            T, P = u.n_frames, len(u.phonemes)
            pred_frames = to_frames(logdur[b, :P])
            err = pred_frames.astype(np.float64) - u.durations
            report.entries.append(
                {
                    "utt_id": u.utt_id,
                    "speaker_id": u.speaker_id,
                    "ref_id": ref.utt_id,
                    "n_phonemes": P,
                    "mel_mae": mel_mae(mel[b, :T], u.mel),
                    "dur_rmse_ms": duration_rmse_ms(pred_frames, u.durations, hop),
                    "dur_sq_err": float(np.sum(err * err)),
                }
            )
    return report


@dataclass
class RhythmSpeaker:
    speaker_id: str
    reference: object  # RepresentationStack (or mel for the stats baseline)
    original_rates: list[float]

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.original_rates))


@dataclass
class RhythmTransferTable:
    """Speaking rates mirroring the original / reference (Dur.) / generated layout."""

    rows: list[dict]
    per_text: dict[str, list[float]]

    def closer_to_duration_ref(self, row: dict) -> list[bool]:
        gen = self.per_text[row["name"]]
        return [abs(g - row["reference_dur_rate"]) < abs(g - row["original_rate"]) for g in gen]

    def to_text(self) -> str:
        lines = ["speaker\tacoustic_ref\tduration_ref\toriginal\treference(Dur.)\tgenerated_mean\tgenerated_std"]
        for r in self.rows:
            lines.append(
                f"{r['name']}\t{r['acoustic']}\t{r['duration']}\t{r['original_rate']:.3f}\t"
                f"{r['reference_dur_rate']:.3f}\t{r['generated_mean']:.3f}\t{r['generated_std']:.3f}"
            )
        return "\n".join(lines) + "\n"


def run_rhythm_transfer_eval(
    model: AcousticModel, speaker_a: RhythmSpeaker, speaker_b: RhythmSpeaker, texts: list
) -> RhythmTransferTable:
    """Swap rhythm between two speakers over ``texts`` (lists of phoneme ids)."""
    if model.cfg.mode != "separate":
        raise ProtocolError("rhythm transfer needs a separate-conditioning model")
    if not texts:
        raise InvalidArgumentError("no texts given")
    hop = model.cfg.hop_seconds
    combos = [
        (f"{speaker_a.speaker_id}<-{speaker_b.speaker_id}", speaker_a, speaker_b),
        (f"{speaker_b.speaker_id}<-{speaker_a.speaker_id}", speaker_b, speaker_a),
        (f"{speaker_a.speaker_id}", speaker_a, speaker_a),
        (f"{speaker_b.speaker_id}", speaker_b, speaker_b),
    ]
    rows, per_text = [], {}
    for name, ac, du in combos:
        rates = []
        for text in texts:
            ph = phoneme_sequence(text, model.cfg.n_classes)
            result = model.synthesize(ph, ac.reference, du.reference)
            rates.append(speaking_rate(result.durations_used, hop))
        per_text[name] = rates
        rows.append(
            {
                "name": name,
                "acoustic": ac.speaker_id,
                "duration": du.speaker_id,
                "original_rate": ac.mean_rate,
                "reference_dur_rate": du.mean_rate,
                "generated_mean": float(np.mean(rates)),
                "generated_std": float(np.std(rates)),
            }
        )
    return RhythmTransferTable(rows, per_text)


def export_layer_weights(model: AcousticModel) -> tuple[list[str], np.ndarray]:
    """Softmax layer weights, one row per embedding role, one column per layer."""
    return model.layer_weight_matrix()


def write_layer_weights(path, roles: list[str], matrix: np.ndarray) -> None:
    """Tab-separated heatmap matrix: header ``role layer0 .. layerL``, one row per role."""
    header = ["role"] + [f"layer{i}" for i in range(matrix.shape[1])]
    lines = ["\t".join(header)]
    for role, row in zip(roles, matrix):
        lines.append("\t".join([role] + [f"{v:.6f}" for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_layer_weights(path) -> tuple[list[str], np.ndarray]:
    rows = Path(path).read_text().strip().splitlines()[1:]
    roles = [r.split("\t")[0] for r in rows]
    return roles, np.array([[float(v) for v in r.split("\t")[1:]] for r in rows])


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
