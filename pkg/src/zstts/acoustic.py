"""Non-autoregressive acoustic model with common or separate speaker conditioning.

Data flow (batched, right-padded, masks zero the padding after every block)::

    phoneme features --enc_in--> conv blocks --(+ enc_proj(e_shared))--> h
    h --(+ dur_proj(e_dur))--> conv blocks --> dp_out --> log(d + 1)
    h --length regulator(durations)--(+ dec_proj(e_ac))--> conv blocks --> dec_out --> log-mel

In ``common`` mode one embedder produces ``e_shared``, used at all three
injection points. In ``separate`` mode the encoder is unconditioned and two
independent embedders produce ``e_dur`` (duration role) and ``e_ac``
(acoustic role). With teacher-forced durations the mel therefore depends on
the acoustic reference only, and the predicted durations depend on the
duration reference only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .embedding import SSLEmbedder, SpeakerEmbedding, StatsEmbedder, pad_mels, pad_stacks
from .errors import ConfigError, DegenerateDurationError, InvalidArgumentError
from .features import RepresentationStack
from .layers import ConvBlock, Linear
from .numerics import Module

MODES = ("common", "separate")
AGGREGATORS = ("average", "attentive", "stats")


@dataclass
class ModelConfig:
    n_classes: int = 12
    n_mels: int = 20
    hop_seconds: float = 0.01
    ssl_layers: int = 7
    ssl_dim: int = 64
    embed_dim: int = 16
    hidden: int = 32
    enc_blocks: int = 2
    dp_blocks: int = 2
    dec_blocks: int = 2
    kernel: int = 3
    lstm_hidden: int = 0
    mode: str = "separate"
    aggregator: str = "attentive"
    stats_seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        for f in ("n_classes", "n_mels", "ssl_layers", "ssl_dim", "embed_dim", "hidden", "kernel"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd")

    @property
    def ling_dim(self) -> int:
        return self.n_classes + 1

    @property
    def roles(self) -> tuple[str, ...]:
        return ("shared",) if self.mode == "common" else ("acoustic", "duration")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class PhonemeSequence:
    linguistic_vectors: np.ndarray
    durations_frames: np.ndarray | None = None
    utt_id: str = ""

    def __post_init__(self):
        if self.linguistic_vectors.ndim != 2 or self.linguistic_vectors.shape[0] < 1:
            raise InvalidArgumentError("need at least one phoneme")
        if self.durations_frames is not None:
            d = np.asarray(self.durations_frames)
            if d.shape != (self.linguistic_vectors.shape[0],) or d.sum() < 1 or np.any(d < 0):
                raise InvalidArgumentError("durations must be nonnegative, one per phoneme, summing to >= 1")

    @property
    def n_phonemes(self) -> int:
        return self.linguistic_vectors.shape[0]


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    hop_seconds: float

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class SynthesisResult:
    mel: MelSpectrogram
    predicted_durations_frames: np.ndarray
    durations_used: np.ndarray
    embeddings: list[SpeakerEmbedding] = field(default_factory=list)


def linguistic_features(phonemes, n_classes: int) -> np.ndarray:
    """One-hot phoneme class plus relative position in [0, 1]."""
    phonemes = np.asarray(phonemes, dtype=np.int64)
    P = phonemes.size
    if P == 0:
        raise InvalidArgumentError("empty phoneme sequence")
    if phonemes.min() < 0 or phonemes.max() >= n_classes:
        raise InvalidArgumentError(f"phoneme ids must lie in [0, {n_classes})")
    out = np.zeros((P, n_classes + 1))
    out[np.arange(P), phonemes] = 1.0
    out[:, -1] = np.arange(P) / max(P - 1, 1)
    return out


def phoneme_sequence(phonemes, n_classes: int, durations=None, utt_id: str = "") -> PhonemeSequence:
    d = None if durations is None else np.asarray(durations, dtype=np.int64)
    return PhonemeSequence(linguistic_features(phonemes, n_classes), d, utt_id)


def to_frames(log_durations) -> np.ndarray:
    """Map log(frames + 1) predictions to integer frames, rounding half away from zero."""
    v = np.expm1(np.asarray(log_durations, dtype=np.float64))
    # expm1 error can push exact .5 cases a hair below; snap within 1e-9
    r = np.sign(v) * np.floor(np.abs(v) + 0.5 + 1e-9)
    return np.maximum(r, 0).astype(np.int64)


def length_regulate(hidden: np.ndarray, durations) -> np.ndarray:
    """Repeat row p of ``hidden`` durations[p] times; zero-duration rows vanish."""
    durations = np.asarray(durations, dtype=np.int64)
    if durations.shape != (hidden.shape[0],):
        raise InvalidArgumentError("one duration per phoneme required")
    if np.any(durations < 0):
        raise InvalidArgumentError("durations must be nonnegative")
    if durations.sum() < 1:
        raise DegenerateDurationError("all durations are zero; nothing to expand")
    return np.repeat(hidden, durations, axis=0)


def log_duration_target(durations) -> np.ndarray:
    return np.log1p(np.asarray(durations, dtype=np.float64))


@dataclass
class Batch:
    ling: np.ndarray  # [B, P, D_ling]
    pmask: np.ndarray  # [B, P]
    durations: np.ndarray  # [B, P] int, teacher-forced
    refs: dict  # role -> (array, mask)
    target_mel: np.ndarray | None = None  # [B, T, M]
    tmask: np.ndarray | None = None  # [B, T]
    target_logdur: np.ndarray | None = None  # [B, P]


class AcousticModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng([seed, 0xAC])
        H, E = cfg.hidden, cfg.embed_dim
        self.embedders = [self._make_embedder(role, rng) for role in cfg.roles]
        self.enc_in = Linear("enc.in", cfg.ling_dim, H, rng, dtype)
        self.enc_blocks = [ConvBlock(f"enc.block{i}", H, cfg.kernel, rng, dtype) for i in range(cfg.enc_blocks)]
        self.enc_proj = Linear("enc.cond", E, H, rng, dtype) if cfg.mode == "common" else None
        self.dur_proj = Linear("dur.cond", E, H, rng, dtype)
        self.dp_blocks = [ConvBlock(f"dur.block{i}", H, cfg.kernel, rng, dtype) for i in range(cfg.dp_blocks)]
        self.dp_out = Linear("dur.out", H, 1, rng, dtype)
        self.dec_proj = Linear("dec.cond", E, H, rng, dtype)
        self.dec_blocks = [ConvBlock(f"dec.block{i}", H, cfg.kernel, rng, dtype) for i in range(cfg.dec_blocks)]
        self.dec_out = Linear("dec.out", H, cfg.n_mels, rng, dtype)

    def _make_embedder(self, role, rng):
        cfg = self.cfg
        if cfg.aggregator == "stats":
            return StatsEmbedder(role, cfg.n_mels, cfg.embed_dim, cfg.stats_seed, self.dtype)
        return SSLEmbedder(
            role, cfg.ssl_layers, cfg.ssl_dim, cfg.embed_dim, cfg.aggregator, rng, cfg.lstm_hidden or None, self.dtype
        )

    # -- embedding ---------------------------------------------------------

    def embedder(self, role: str):
        for e in self.embedders:
            if e.role == role:
                return e
        raise InvalidArgumentError(f"model in {self.cfg.mode} mode has no {role!r} embedder")

    def ref_batch(self, refs):
        """Pad a list of references (stacks, or mels for the stats baseline)."""
        if self.cfg.aggregator == "stats":
            return pad_mels([r.frames if isinstance(r, MelSpectrogram) else r for r in refs], self.dtype)
        return pad_stacks(refs, self.dtype)

    def embed(self, role: str, ref) -> SpeakerEmbedding:
        X, mask = self.ref_batch([ref])
        e, _ = self.embedder(role).forward(X, mask)
        return SpeakerEmbedding(e[0], role)

    def layer_weight_matrix(self) -> tuple[list[str], np.ndarray]:
        """Rows: embedder roles; columns: layer index. Softmax-normalised."""
        rows = [e for e in self.embedders if isinstance(e, SSLEmbedder)]
        return [e.role for e in rows], np.array([e.layer_weights.weights() for e in rows], dtype=np.float64)

    # -- batched forward/backward -----------------------------------------

    def _encode(self, ling, pmask, e):
        pm = pmask[..., None].astype(self.dtype)
        h, c_in = self.enc_in.forward(ling)
        h = h * pm
        blocks = []
        for blk in self.enc_blocks:
            h, c = blk.forward(h, pmask)
            blocks.append(c)
        c_proj = None
        if self.enc_proj is not None:
            if e is None:
                raise InvalidArgumentError("common-mode encoder needs the shared embedding")
            pe, c_proj = self.enc_proj.forward(e)
            h = (h + pe[:, None]) * pm
        elif e is not None:
            raise InvalidArgumentError("separate-mode encoder takes no embedding")
        return h, (pm, c_in, blocks, c_proj)

    def _encode_backward(self, dh, cache):
        pm, c_in, blocks, c_proj = cache
        dh = dh * pm
        de = None
        if c_proj is not None:
            de = self.enc_proj.backward(dh.sum(axis=1), c_proj)
        for blk, c in zip(reversed(self.enc_blocks), reversed(blocks)):
            dh = blk.backward(dh, c)
        self.enc_in.backward(dh * pm, c_in)
        return de

    def _predict(self, h, pmask, e_dur):
        pm = pmask[..., None].astype(self.dtype)
        pe, c_proj = self.dur_proj.forward(e_dur)
        x = (h + pe[:, None]) * pm
        blocks = []
        for blk in self.dp_blocks:
            x, c = blk.forward(x, pmask)
            blocks.append(c)
        out, c_out = self.dp_out.forward(x)
        return out[..., 0] * pmask, (pm, c_proj, blocks, c_out)

    def _predict_backward(self, dout, cache):
        pm, c_proj, blocks, c_out = cache
        dx = self.dp_out.backward((dout[..., None] * pm), c_out)
        for blk, c in zip(reversed(self.dp_blocks), reversed(blocks)):
            dx = blk.backward(dx, c)
        dx = dx * pm
        de = self.dur_proj.backward(dx.sum(axis=1), c_proj)
        return dx, de

    @staticmethod
    def _regulate(h, durations):
        B, P, H = h.shape
        totals = durations.sum(axis=1)
        if np.any(totals < 1):
            raise DegenerateDurationError("an utterance has all-zero durations")
        T = int(totals.max())
        b_idx = np.repeat(np.repeat(np.arange(B), P), durations.reshape(-1))
        p_idx = np.repeat(np.tile(np.arange(P), B), durations.reshape(-1))
        starts = np.concatenate([[0], np.cumsum(totals)[:-1]])
        t_idx = np.arange(b_idx.size) - np.repeat(starts, totals)
        frames = np.zeros((B, T, H), dtype=h.dtype)
        frames[b_idx, t_idx] = h[b_idx, p_idx]
        tmask = np.zeros((B, T), dtype=bool)
        tmask[b_idx, t_idx] = True
        return frames, tmask, (b_idx, p_idx, t_idx, h.shape)

    @staticmethod
    def _regulate_backward(dframes, cache):
        b_idx, p_idx, t_idx, shape = cache
        dh = np.zeros(shape, dtype=dframes.dtype)
        np.add.at(dh, (b_idx, p_idx), dframes[b_idx, t_idx])
        return dh

    def _decode(self, frames, tmask, e_ac):
        tm = tmask[..., None].astype(self.dtype)
        pe, c_proj = self.dec_proj.forward(e_ac)
        x = (frames + pe[:, None]) * tm
        blocks = []
        for blk in self.dec_blocks:
            x, c = blk.forward(x, tmask)
            blocks.append(c)
        mel, c_out = self.dec_out.forward(x)
        return mel * tm, (tm, c_proj, blocks, c_out)

    def _decode_backward(self, dmel, cache):
        tm, c_proj, blocks, c_out = cache
        dx = self.dec_out.backward(dmel * tm, c_out)
        for blk, c in zip(reversed(self.dec_blocks), reversed(blocks)):
            dx = blk.backward(dx, c)
        dx = dx * tm
        de = self.dec_proj.backward(dx.sum(axis=1), c_proj)
        return dx, de

    def forward(self, batch: Batch):
        """Teacher-forced forward pass -> (mel [B,T,M], log-durations [B,P], cache)."""
        emb, emb_caches = {}, {}
        for embedder in self.embedders:
            X, mask = batch.refs[embedder.role]
            emb[embedder.role], emb_caches[embedder.role] = embedder.forward(X, mask)
        common = self.cfg.mode == "common"
        e_dur = emb["shared"] if common else emb["duration"]
        e_ac = emb["shared"] if common else emb["acoustic"]
        ling = batch.ling.astype(self.dtype, copy=False)
        h, c_enc = self._encode(ling, batch.pmask, emb["shared"] if common else None)
        logdur, c_dp = self._predict(h, batch.pmask, e_dur)
        frames, tmask, c_lr = self._regulate(h, batch.durations)
        mel, c_dec = self._decode(frames, tmask, e_ac)
        return mel, logdur, (emb_caches, c_enc, c_dp, c_lr, c_dec, tmask)

    def backward(self, dmel, dlogdur, cache):
        emb_caches, c_enc, c_dp, c_lr, c_dec, _ = cache
        dframes, de_ac = self._decode_backward(dmel, c_dec)
        dh = self._regulate_backward(dframes, c_lr)
        dh_dp, de_dur = self._predict_backward(dlogdur, c_dp)
        dh = dh + dh_dp
        de_enc = self._encode_backward(dh, c_enc)
        if self.cfg.mode == "common":
            de = de_ac + de_dur + de_enc
            self.embedders[0].backward(de, emb_caches["shared"])
        else:
            self.embedder("acoustic").backward(de_ac, emb_caches["acoustic"])
            self.embedder("duration").backward(de_dur, emb_caches["duration"])

    def make_batch(self, utts, refs_by_role: dict | None = None) -> Batch:
        """Assemble a padded batch from corpus utterances.

        ``refs_by_role`` maps each role to one reference per utterance; by
        default every utterance is its own reference.
        """
        cfg = self.cfg
        B = len(utts)
        P = max(len(u.phonemes) for u in utts)
        ling = np.zeros((B, P, cfg.ling_dim), dtype=self.dtype)
        pmask = np.zeros((B, P), dtype=bool)
        durations = np.zeros((B, P), dtype=np.int64)
        for b, u in enumerate(utts):
            n = len(u.phonemes)
            ling[b, :n] = linguistic_features(u.phonemes, cfg.n_classes)
            pmask[b, :n] = True
            durations[b, :n] = u.durations
        target_mel, tmask = pad_mels([u.mel for u in utts], self.dtype)
        target_logdur = (np.log1p(durations) * pmask).astype(self.dtype)
        refs = {}
        for role in cfg.roles:
            src = utts if refs_by_role is None else refs_by_role[role]
            refs[role] = self.ref_batch([self._ref_of(u) for u in src])
        return Batch(ling, pmask, durations, refs, target_mel, tmask, target_logdur)

    def _ref_of(self, utt):
        if self.cfg.aggregator == "stats":
            return utt.mel
        if utt.stack is None:
            raise InvalidArgumentError(f"utterance {utt.utt_id} has no representation stack")
        return utt.stack

    # -- single-utterance API ----------------------------------------------

    def _check_ph(self, ph: PhonemeSequence):
        if ph.linguistic_vectors.shape[1] != self.cfg.ling_dim:
            raise ConfigError(
                f"linguistic vector width {ph.linguistic_vectors.shape[1]} != model's {self.cfg.ling_dim}"
            )

    def encode(self, ph: PhonemeSequence, e: SpeakerEmbedding | None = None) -> np.ndarray:
        self._check_ph(ph)
        ling = ph.linguistic_vectors[None].astype(self.dtype)
        mask = np.ones((1, ph.n_phonemes), dtype=bool)
        vec = None if e is None else np.asarray(e.vector, dtype=self.dtype)[None]
        h, _ = self._encode(ling, mask, vec)
        return h[0]

    def predict_duration(self, hidden: np.ndarray, e_dur: SpeakerEmbedding) -> np.ndarray:
        if hidden.ndim != 2 or hidden.shape[0] < 1:
            raise InvalidArgumentError("hidden must be a nonempty [P, H] array")
        mask = np.ones((1, hidden.shape[0]), dtype=bool)
        out, _ = self._predict(hidden[None].astype(self.dtype), mask, np.asarray(e_dur.vector, dtype=self.dtype)[None])
        return out[0]

    def decode(self, frames: np.ndarray, e_ac: SpeakerEmbedding) -> MelSpectrogram:
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InvalidArgumentError("need at least one frame to decode")
        tmask = np.ones((1, frames.shape[0]), dtype=bool)
        mel, _ = self._decode(frames[None].astype(self.dtype), tmask, np.asarray(e_ac.vector, dtype=self.dtype)[None])
        return MelSpectrogram(mel[0], self.cfg.hop_seconds)

    def synthesize(
        self,
        ph: PhonemeSequence,
        ref_acoustic,
        ref_duration=None,
        mode: str | None = None,
        teacher_durations=None,
    ) -> SynthesisResult:
        """Synthesize a mel for ``ph``.

        In separate mode ``ref_duration`` (default: ``ref_acoustic``) drives
        the duration predictor; passing a different reference performs
        rhythm transfer. Common mode rejects a distinct ``ref_duration``.
        """
        mode = mode or self.cfg.mode
        if mode != self.cfg.mode:
            raise InvalidArgumentError(f"model was built for {self.cfg.mode} conditioning, not {mode}")
        if mode == "common":
            if ref_duration is not None and ref_duration is not ref_acoustic and not _same_ref(ref_duration, ref_acoustic):
                raise InvalidArgumentError("common conditioning cannot take a separate duration reference")
            e = self.embed("shared", ref_acoustic)
            e_ac = e_dur = e
            h = self.encode(ph, e)
            used = [e]
        else:
            if ref_duration is None:
                ref_duration = ref_acoustic
            e_ac = self.embed("acoustic", ref_acoustic)
            e_dur = self.embed("duration", ref_duration)
            h = self.encode(ph)
            used = [e_ac, e_dur]
        predicted = to_frames(self.predict_duration(h, e_dur))
        durations = predicted if teacher_durations is None else np.asarray(teacher_durations, dtype=np.int64)
        frames = length_regulate(h, durations)
        mel = self.decode(frames, e_ac)
        return SynthesisResult(mel, predicted, durations, used)

    # -- state -------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.parameters()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = set(params) - set(tensors)
        if missing:
            raise InvalidArgumentError(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = tensors[name]
            if arr.shape != p.value.shape:
                raise InvalidArgumentError(f"shape mismatch for {name}: {arr.shape} vs {p.value.shape}")
            p.value[...] = arr


def _same_ref(a, b) -> bool:
    if isinstance(a, RepresentationStack) and isinstance(b, RepresentationStack):
        return a == b
    if isinstance(a, MelSpectrogram) and isinstance(b, MelSpectrogram):
        return a.hop_seconds == b.hop_seconds and np.array_equal(a.frames, b.frames)
    return False
