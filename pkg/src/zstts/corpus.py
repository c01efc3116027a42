"""Synthetic multi-speaker corpus with independent timbre and rhythm factors.

Generative model
----------------
Corpus-wide (drawn from the corpus seed):

* ``templates[c, m]``: log-mel template of phoneme class ``c``, a floor of -3
  plus two Gaussian "formant" bumps.
* ``base_log_dur[c]``: log of the mean duration (frames) of class ``c``.
* a smooth 3-function basis over mel bins used for speaker gain curves.

Per speaker, timbre and rhythm come from two separate random streams:

* timbre: gain curve ``g = sum_k z_k basis_k`` with ``z ~ N(0, timbre_scale)``
  and spectral tilt ``tau ~ U(tilt_range)``, applied as ``tau * ramp`` where
  ``ramp`` runs linearly from -1 to 1 across bins;
* rhythm: rate multiplier ``r ~ U(rate_range)`` (multiplies durations, so
  larger is slower) and per-phoneme jitter ``sigma ~ U(jitter_range)``.

Per utterance: a phoneme string without immediate repeats, durations
``d_p = max(1, round(exp(N(base_log_dur[c_p] + ln r, sigma))))``, a small
utterance-level gain offset ``u @ basis + u_tilt * ramp`` with every
coefficient ``~ N(0, utt_gain_jitter)`` (channel variation in the same smooth
space as timbre), and a log-mel built by repeating
``templates[c_p] + g + tau * ramp + offset`` for ``d_p`` frames plus Gaussian
noise. The waveform is a bank of constant-frequency tones at the mel-bin
centre frequencies whose amplitudes follow ``exp(log-mel)``, linearly
interpolated between frame centres.

Each utterance's randomness comes from ``(seed, speaker index, utterance
index)``, so records can be generated in any order.

Manifest format
---------------
Tab-separated text with a header row and columns::

    utt_id  speaker_id  phonemes  durations  mel_path  wav_path  feat_path

``phonemes`` and ``durations`` are comma-separated integers. Paths are
relative to the manifest's directory; ``feat_path`` is ``-`` when no cached
features exist. ``speakers.tsv`` next to the manifest lists each speaker's
generative factors.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ManifestValidationError
from .features import (
    ExtractorConfig,
    RepresentationStack,
    Waveform,
    extract,
    load_external,
    read_container,
    read_wav,
    save_external,
    write_container,
    write_wav,
    HEADER_SIZE,
)

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["utt_id", "speaker_id", "phonemes", "durations", "mel_path", "wav_path", "feat_path"]


@dataclass(frozen=True)
class CorpusConfig:
    n_speakers: int = 32
    utts_per_speaker: int = 20
    n_classes: int = 12
    min_phonemes: int = 8
    max_phonemes: int = 16
    n_mels: int = 20
    mel_hop: float = 0.01
    sample_rate: int = 16000
    rate_range: tuple[float, float] = (0.6, 1.6)
    jitter_range: tuple[float, float] = (0.05, 0.15)
    base_dur_range: tuple[float, float] = (6.0, 12.0)
    tilt_range: tuple[float, float] = (-1.0, 1.0)
    n_timbre_factors: int = 3
    timbre_scale: float = 0.5
    utt_gain_jitter: float = 0.25
    noise_std: float = 0.05
    f_lo: float = 150.0
    f_hi: float = 6000.0
    amplitude: float = 0.05

    def validate(self):
        if self.n_speakers < 1 or self.utts_per_speaker < 1:
            raise ConfigError("n_speakers and utts_per_speaker must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes (phoneme inventory) must be >= 2")
        if not 1 <= self.min_phonemes <= self.max_phonemes:
            raise ConfigError("need 1 <= min_phonemes <= max_phonemes")
        lo, hi = self.rate_range
        if not 0 < lo <= hi:
            raise ConfigError("rate_range must satisfy 0 < lo <= hi")
        if self.n_mels < 2:
            raise ConfigError("n_mels must be >= 2")

    @property
    def hop_samples(self) -> int:
        return int(round(self.mel_hop * self.sample_rate))


@dataclass
class SpeakerProfile:
    speaker_id: str
    rate: float
    jitter: float
    tilt: float
    timbre_factors: np.ndarray
    gain: np.ndarray

    def timbre_offset(self, ramp: np.ndarray) -> np.ndarray:
        return self.gain + self.tilt * ramp


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    phonemes: np.ndarray
    durations: np.ndarray
    mel: np.ndarray
    stack: RepresentationStack | None = None
    wave: Waveform | None = None

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())


@dataclass
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    phonemes: list[int]
    durations: list[int]
    mel_path: str
    wav_path: str
    feat_path: str = "-"


@dataclass
class Manifest:
    records: list[UtteranceRecord]
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records})

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def by_speaker(self) -> dict[str, list[UtteranceRecord]]:
        out: dict[str, list[UtteranceRecord]] = {}
        for r in self.records:
            out.setdefault(r.speaker_id, []).append(r)
        return out


class CorpusModel:
    """Corpus-wide generative parameters plus speaker/utterance samplers."""

    def __init__(self, cfg: CorpusConfig = CorpusConfig(), seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng([seed, 0])
        M, C = cfg.n_mels, cfg.n_classes
        m = np.arange(M)
        templates = np.full((C, M), -3.0)
        for c in range(C):
            for _ in range(2):
                centre = rng.uniform(0, M - 1)
                width = rng.uniform(1.5, 3.0)
                height = rng.uniform(1.5, 3.0)
                templates[c] += height * np.exp(-0.5 * ((m - centre) / width) ** 2)
        self.templates = templates
        lo, hi = cfg.base_dur_range
        self.base_log_dur = np.log(rng.uniform(lo, hi, size=C))
        self.basis = np.stack([np.cos(np.pi * k * (m + 0.5) / M) for k in range(1, cfg.n_timbre_factors + 1)])
        self.ramp = np.linspace(-1.0, 1.0, M)
        mel_lo, mel_hi = _hz_to_mel(cfg.f_lo), _hz_to_mel(cfg.f_hi)
        self.bin_freqs = _mel_to_hz(np.linspace(mel_lo, mel_hi, M))

    # -- sampling -----------------------------------------------------------

    def speaker(self, index: int, rate: float | None = None, speaker_id: str | None = None) -> SpeakerProfile:
        """Sample speaker ``index``; ``rate`` overrides the sampled rate factor."""
        cfg = self.cfg
        timbre_rng = np.random.default_rng([self.seed, 1, index, 0])
        rhythm_rng = np.random.default_rng([self.seed, 1, index, 1])
        z = timbre_rng.normal(0, cfg.timbre_scale, size=cfg.n_timbre_factors)
        tilt = timbre_rng.uniform(*cfg.tilt_range)
        r = rhythm_rng.uniform(*cfg.rate_range)
        jitter = rhythm_rng.uniform(*cfg.jitter_range)
        if rate is not None:
            if rate <= 0:
                raise ConfigError("rate must be positive")
            r = rate
        return SpeakerProfile(
            speaker_id=speaker_id or f"spk{index:03d}",
            rate=float(r),
            jitter=float(jitter),
            tilt=float(tilt),
            timbre_factors=z,
            gain=z @ self.basis,
        )

    def text(self, rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        P = int(rng.integers(cfg.min_phonemes, cfg.max_phonemes + 1))
        out = np.empty(P, dtype=np.int64)
        prev = -1
        for p in range(P):
            c = int(rng.integers(cfg.n_classes - (1 if prev >= 0 else 0)))
            if prev >= 0 and c >= prev:
                c += 1
            out[p] = prev = c
        return out

    def durations(self, phonemes: np.ndarray, spk: SpeakerProfile, rng: np.random.Generator) -> np.ndarray:
        mu = self.base_log_dur[phonemes] + math.log(spk.rate)
        d = np.round(np.exp(rng.normal(mu, spk.jitter)))
        return np.maximum(d, 1).astype(np.int64)

    def render_mel(self, phonemes, durations, spk: SpeakerProfile, rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        # utterance-level channel variation lives in the same smooth space as timbre
        u = rng.normal(0, cfg.utt_gain_jitter, size=cfg.n_timbre_factors + 1)
        offset = spk.timbre_offset(self.ramp) + u[:-1] @ self.basis + u[-1] * self.ramp
        frames = np.repeat(self.templates[phonemes] + offset, durations, axis=0)
        frames = frames + rng.normal(0, cfg.noise_std, size=frames.shape)
        return frames.astype(np.float32)

    def render_wave(self, mel: np.ndarray, rng: np.random.Generator) -> Waveform:
        cfg = self.cfg
        hop = cfg.hop_samples
        T = mel.shape[0]
        n = np.arange(T * hop)
        centres = (np.arange(T) + 0.5) * hop
        amp = cfg.amplitude * np.exp(mel.astype(np.float64))
        phases = rng.uniform(0, 2 * np.pi, size=cfg.n_mels)
        out = np.zeros(n.size)
        for m in range(cfg.n_mels):
            a = np.interp(n, centres, amp[:, m])
            out += a * np.sin(2 * np.pi * self.bin_freqs[m] * n / cfg.sample_rate + phases[m])
        return Waveform(np.clip(out, -1.0, 1.0), cfg.sample_rate)

    def utterance(
        self,
        spk: SpeakerProfile,
        speaker_index: int,
        utt_index: int,
        phonemes: np.ndarray | None = None,
        with_wave: bool = True,
    ) -> Utterance:
        """Render one utterance; ``phonemes`` fixes the text (for parallel data)."""
        rng = np.random.default_rng([self.seed, 2, speaker_index, utt_index])
        text = self.text(rng)
        if phonemes is not None:
            text = np.asarray(phonemes, dtype=np.int64)
        dur = self.durations(text, spk, rng)
        mel = self.render_mel(text, dur, spk, rng)
        wave = self.render_wave(mel, rng) if with_wave else None
        return Utterance(f"{spk.speaker_id}_{utt_index:03d}", spk.speaker_id, text, dur, mel, wave=wave)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


# ---------------------------------------------------------------------------
# on-disk corpus
# ---------------------------------------------------------------------------


def generate_corpus(
    cfg: CorpusConfig,
    seed: int,
    out_dir,
    extractor_cfg: ExtractorConfig | None = ExtractorConfig(),
    extractor_seed: int = 0,
    threads: int = 1,
) -> Manifest:
    """Write a full corpus under ``out_dir`` and return its manifest.

    Writes ``manifest.tsv``, ``speakers.tsv`` and ``mel/``, ``wav/`` (and
    ``feat/`` when ``extractor_cfg`` is given) data trees.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    for sub in ("mel", "wav") + (("feat",) if extractor_cfg is not None else ()):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    model = CorpusModel(cfg, seed)
    speakers = [model.speaker(i) for i in range(cfg.n_speakers)]

    def work(job):
        si, ui = job
        spk = speakers[si]
        utt = model.utterance(spk, si, ui)
        mel_rel, wav_rel = f"mel/{utt.utt_id}.fea", f"wav/{utt.utt_id}.wav"
        write_container(out_dir / mel_rel, utt.mel[None], cfg.mel_hop)
        write_wav(out_dir / wav_rel, utt.wave)
        feat_rel = "-"
        if extractor_cfg is not None:
            feat_rel = f"feat/{utt.utt_id}.fea"
            # features come from the stored PCM so cached and recomputed features agree
            save_external(extract(read_wav(out_dir / wav_rel), extractor_cfg, extractor_seed), out_dir / feat_rel)
        return UtteranceRecord(
            utt.utt_id, spk.speaker_id, utt.phonemes.tolist(), utt.durations.tolist(), mel_rel, wav_rel, feat_rel
        )

    jobs = [(si, ui) for si in range(cfg.n_speakers) for ui in range(cfg.utts_per_speaker)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]
    manifest = Manifest(records, out_dir)
    write_manifest(manifest, out_dir / "manifest.tsv")
    write_speakers(speakers, out_dir / "speakers.tsv")
    return manifest


def write_speakers(speakers: list[SpeakerProfile], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["speaker_id", "rate", "jitter", "tilt", "timbre_factors"])
        for s in speakers:
            w.writerow([s.speaker_id, repr(s.rate), repr(s.jitter), repr(s.tilt), ",".join(repr(float(v)) for v in s.timbre_factors)])


def read_speakers(path) -> dict[str, dict]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            out[row["speaker_id"]] = {
                "rate": float(row["rate"]),
                "jitter": float(row["jitter"]),
                "tilt": float(row["tilt"]),
                "timbre_factors": [float(v) for v in row["timbre_factors"].split(",")],
            }
    return out


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            w.writerow(
                [
                    r.utt_id,
                    r.speaker_id,
                    ",".join(map(str, r.phonemes)),
                    ",".join(map(str, r.durations)),
                    r.mel_path,
                    r.wav_path,
                    r.feat_path,
                ]
            )


def _mel_frames(path: Path) -> int:
    with open(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
    if len(header) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated header")
    _, _, _, F, _, _ = struct.unpack("<8sIIIId", header)
    return F


def load_manifest(path, validate: bool = True) -> Manifest:
    """Parse a manifest; with ``validate`` every record's files and lengths are checked."""
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            log.warning("manifest %s is empty", path)
            return Manifest([], path.parent)
        if header != MANIFEST_COLUMNS:
            raise ManifestValidationError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestValidationError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} columns", None)
            utt_id = row[0]
            try:
                phonemes = [int(v) for v in row[2].split(",")]
                durations = [int(v) for v in row[3].split(",")]
            except ValueError as exc:
                raise ManifestValidationError(f"record {utt_id}: bad integer list ({exc})", utt_id) from exc
            records.append(UtteranceRecord(utt_id, row[1], phonemes, durations, row[4], row[5], row[6]))
    manifest = Manifest(records, path.parent)
    if not records:
        log.warning("manifest %s has no records", path)
    if validate:
        validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: Manifest) -> None:
    for r in manifest.records:
        if len(r.phonemes) != len(r.durations) or not r.phonemes:
            raise ManifestValidationError(f"record {r.utt_id}: phoneme/duration count mismatch", r.utt_id)
        if any(d < 0 for d in r.durations) or sum(r.durations) < 1:
            raise ManifestValidationError(f"record {r.utt_id}: durations must be >= 0 with sum >= 1", r.utt_id)
        paths = [r.mel_path, r.wav_path] + ([r.feat_path] if r.feat_path != "-" else [])
        for rel in paths:
            if not manifest.resolve(rel).is_file():
                raise ManifestValidationError(f"record {r.utt_id}: missing file {rel}", r.utt_id)
        T = _mel_frames(manifest.resolve(r.mel_path))
        if T != sum(r.durations):
            raise ManifestValidationError(
                f"record {r.utt_id}: mel has {T} frames but durations sum to {sum(r.durations)}", r.utt_id
            )


def split_speakers(speakers: list[str], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list[str], list[str], list[str]]:
    """Partition speaker ids into train/val/test.

    Validation and test receive ``floor(ratio * n_speakers)`` speakers each;
    the remainder goes to train. Speakers are sorted, then shuffled with
    ``seed``.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    speakers = sorted(set(speakers))
    n = len(speakers)
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"{n} speakers cannot fill three nonempty splits at ratios {ratios}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [speakers[i] for i in order]
    return shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :]


def split(manifest: Manifest, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Manifest, Manifest, Manifest]:
    """Speaker-disjoint train/val/test manifests (see :func:`split_speakers`)."""
    groups = [set(g) for g in split_speakers(manifest.speakers, ratios, seed)]
    return tuple(Manifest([r for r in manifest.records if r.speaker_id in g], manifest.root) for g in groups)


def load_utterances(
    manifest: Manifest,
    extractor_cfg: ExtractorConfig | None = None,
    extractor_seed: int = 0,
    threads: int = 1,
) -> list[Utterance]:
    """Load mels and representation stacks for every record.

    Cached feature files are used when present; otherwise features are
    extracted from the waveform with ``extractor_cfg``.
    """

    def work(r: UtteranceRecord) -> Utterance:
        mel, _ = read_container(manifest.resolve(r.mel_path))
        if r.feat_path != "-":
            stack = load_external(manifest.resolve(r.feat_path))
        elif extractor_cfg is not None:
            stack = extract(read_wav(manifest.resolve(r.wav_path)), extractor_cfg, extractor_seed)
        else:
            stack = None
        return Utterance(
            r.utt_id,
            r.speaker_id,
            np.asarray(r.phonemes, dtype=np.int64),
            np.asarray(r.durations, dtype=np.int64),
            mel[0],
            stack,
        )

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(work, manifest.records))
    return [work(r) for r in manifest.records]


def in_memory_corpus(
    cfg: CorpusConfig,
    seed: int,
    extractor_cfg: ExtractorConfig = ExtractorConfig(),
    extractor_seed: int = 0,
) -> tuple[CorpusModel, list[SpeakerProfile], list[Utterance]]:
    """Generate the corpus without touching disk (features from 16-bit-quantised audio)."""
    model = CorpusModel(cfg, seed)
    speakers = [model.speaker(i) for i in range(cfg.n_speakers)]
    utts = []
    for si, spk in enumerate(speakers):
        for ui in range(cfg.utts_per_speaker):
            utt = model.utterance(spk, si, ui)
            utt.stack = extract(quantize(utt.wave), extractor_cfg, extractor_seed)
            utts.append(utt)
    return model, speakers, utts


def quantize(w: Waveform) -> Waveform:
    """Round-trip through 16-bit PCM, matching what ``write_wav``/``read_wav`` produce."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767).astype(np.int16)
    return Waveform(pcm.astype(np.float64) / 32767.0, w.sample_rate)
