"""Desk-scale experiment recipes shared by the acceptance tests, demos and CLI.

The standard setup is one synthetic corpus (32 speakers x 20 utterances,
seed 0), a 32-dim pseudo-SSL extractor, and a speaker split of 0.7/0.1/0.2
so that six unseen speakers are available for testing. Models are trained
for 2000 steps per seed with attentive pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .acoustic import ModelConfig
from .corpus import CorpusConfig, CorpusModel, SpeakerProfile, Utterance, in_memory_corpus, quantize, split_speakers
from .evaluation import RhythmSpeaker, speaking_rate
from .features import ExtractorConfig, extract
from .training import TrainConfig, Trainer, train

DESK_CORPUS = CorpusConfig()
DESK_EXTRACTOR = ExtractorConfig(dim=32)
DESK_SPLIT = (0.7, 0.1, 0.2)
DESK_STEPS = 2000


def desk_model_config(mode: str = "separate", aggregator: str = "attentive", **overrides) -> ModelConfig:
    return ModelConfig(
        n_classes=DESK_CORPUS.n_classes,
        n_mels=DESK_CORPUS.n_mels,
        hop_seconds=DESK_CORPUS.mel_hop,
        ssl_layers=DESK_EXTRACTOR.n_blocks + 1,
        ssl_dim=DESK_EXTRACTOR.dim,
        mode=mode,
        aggregator=aggregator,
        **overrides,
    )


@dataclass
class ZeroShotData:
    corpus: CorpusModel
    speakers: list[SpeakerProfile]
    train: list[Utterance]
    val: list[Utterance]
    test: list[Utterance]
    extractor: ExtractorConfig = field(default=DESK_EXTRACTOR)

    @property
    def train_speakers(self) -> set[str]:
        return {u.speaker_id for u in self.train}

    def profile(self, speaker_id: str) -> SpeakerProfile:
        return next(s for s in self.speakers if s.speaker_id == speaker_id)


@lru_cache(maxsize=4)
def desk_data(
    corpus_seed: int = 0,
    split_seed: int = 0,
    corpus_cfg: CorpusConfig = DESK_CORPUS,
    extractor_cfg: ExtractorConfig = DESK_EXTRACTOR,
    ratios: tuple = DESK_SPLIT,
) -> ZeroShotData:
    """Generate (once per process) the in-memory corpus and its speaker split."""
    model, speakers, utts = in_memory_corpus(corpus_cfg, corpus_seed, extractor_cfg)
    tr, va, te = (set(g) for g in split_speakers([s.speaker_id for s in speakers], ratios, split_seed))
    pick = lambda ids: [u for u in utts if u.speaker_id in ids]  # noqa: E731
    return ZeroShotData(model, speakers, pick(tr), pick(va), pick(te), extractor_cfg)


def train_desk(
    data: ZeroShotData,
    mode: str,
    seed: int,
    steps: int = DESK_STEPS,
    aggregator: str = "attentive",
    checkpoint_dir=None,
    **train_overrides,
) -> Trainer:
    cfg = TrainConfig(
        model=desk_model_config(mode, aggregator),
        max_steps=steps,
        seed=seed,
        checkpoint_dir=None if checkpoint_dir is None else str(checkpoint_dir),
        **train_overrides,
    )
    return train(cfg, data.train)


def new_speaker(corpus: CorpusModel, index: int, rate: float, name: str) -> SpeakerProfile:
    """A speaker outside the corpus (index >= n_speakers) with a forced rate factor."""
    if index < corpus.cfg.n_speakers:
        raise ValueError("new speakers need an index beyond the corpus")
    return corpus.speaker(index, rate=rate, speaker_id=name)


def rhythm_texts(corpus: CorpusModel, n: int = 20, seed: int = 7) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 0x7E27])
    return [corpus.text(rng) for _ in range(n)]


def rhythm_speaker(
    corpus: CorpusModel, extractor: ExtractorConfig, spk: SpeakerProfile, index: int, texts, ref_utt: int = 0
) -> RhythmSpeaker:
    """Reference stack from one fresh utterance; original rates from ground-truth renderings of ``texts``."""
    hop = corpus.cfg.mel_hop
    ref = corpus.utterance(spk, index, ref_utt)
    stack = extract(quantize(ref.wave), extractor)
    rates = []
    for k, text in enumerate(texts):
        u = corpus.utterance(spk, index, 1000 + k, phonemes=text, with_wave=False)
        rates.append(speaking_rate(u.durations, hop))
    return RhythmSpeaker(spk.speaker_id, stack, rates)


def rhythm_pair(
    corpus: CorpusModel,
    extractor: ExtractorConfig,
    texts,
    fast_rate: float = 0.7,
    slow_rate: float = 1.4,
    base_index: int = 900,
) -> tuple[RhythmSpeaker, RhythmSpeaker]:
    """Two unseen speakers: A is fast (rate factor 0.7), B is slow (1.4)."""
    a = new_speaker(corpus, base_index, fast_rate, "fastA")
    b = new_speaker(corpus, base_index + 1, slow_rate, "slowB")
    return (
        rhythm_speaker(corpus, extractor, a, base_index, texts),
        rhythm_speaker(corpus, extractor, b, base_index + 1, texts),
    )


def layer_mass(weights: np.ndarray, start: int) -> float:
    """Weight mass on layers ``start..L``."""
    return float(np.asarray(weights)[start:].sum())


def deep_start(n_layers: int) -> int:
    """First layer index counted as deep: ``ceil(L / 2)`` for ``L = n_layers - 1`` blocks."""
    L = n_layers - 1
    return -(-L // 2)
