"""Frozen pseudo-SSL feature extractor and the layered feature-file container.

The extractor is a fixed random hierarchy standing in for a pretrained
self-supervised speech model. Layer 0 is a strided filterbank front end over
raw samples; layers 1..L are frozen residual blocks. Each block low-passes
its residual path (frame t averaged with t-1) and feeds the frame-to-frame
difference through a random linear mix and tanh, so deeper layers carry
progressively more temporal-dynamics information and progressively less of
the static spectral shape of layer 0.

Feature file layout (little-endian)::

    magic     8 bytes  b"ZSTTSFEA"
    version   uint32   FEATURE_VERSION
    n_layers  uint32   L + 1
    n_frames  uint32   F
    dim       uint32   D_l
    hop       float64  seconds between frames
    payload   float32  n_layers * n_frames * dim values, layer-major then frame-major

Mel spectrograms reuse the container with n_layers = 1 and dim = M.
"""

from __future__ import annotations

import enum
import functools
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, InvalidArgumentError

FEATURE_MAGIC = b"ZSTTSFEA"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<8sIIIId")
HEADER_SIZE = _HEADER.size


class Source(enum.Enum):
    PSEUDO = "pseudo"
    EXTERNAL = "external"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidArgumentError("waveform must be a nonempty 1-D array")
        if self.sample_rate <= 0:
            raise InvalidArgumentError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class RepresentationStack:
    """Per-layer frame sequences, shape [L + 1, F, D_l], float32."""

    data: np.ndarray
    hop_seconds: float
    source: Source = Source.PSEUDO

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidArgumentError(f"stack data must be 3-D [layers, frames, dim], got {self.data.shape}")
        if self.hop_seconds <= 0:
            raise InvalidArgumentError("hop_seconds must be positive")

    @property
    def n_layers(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, RepresentationStack):
            return NotImplemented
        return (
            self.hop_seconds == other.hop_seconds
            and self.data.shape == other.data.shape
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class ExtractorConfig:
    sample_rate: int = 16000
    window: int = 400
    stride: int = 320
    n_filters: int = 32
    f_min: float = 80.0
    f_max: float = 7600.0
    n_blocks: int = 6
    dim: int = 64
    residual_decay: float = 0.6
    block_gain: float = 2.0
    log_floor: float = 1e-4

    @property
    def hop_seconds(self) -> float:
        return self.stride / self.sample_rate

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window:
            return 0
        return (n_samples - self.window) // self.stride + 1


class PseudoSSL:
    """Frozen extractor; all weights are drawn once from ``seed``."""

    def __init__(self, cfg: ExtractorConfig = ExtractorConfig(), seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng([seed, 0x55])
        n = np.arange(cfg.window)
        hann = 0.5 - 0.5 * np.cos(2 * np.pi * (n + 0.5) / cfg.window)
        freqs = np.geomspace(cfg.f_min, cfg.f_max, cfg.n_filters)
        phase = 2 * np.pi * np.outer(n, freqs) / cfg.sample_rate
        norm = 2.0 / hann.sum()
        self.kernels = np.concatenate([hann[:, None] * np.cos(phase), hann[:, None] * np.sin(phase)], axis=1) * norm
        self.front_W = rng.normal(0, 1 / np.sqrt(cfg.n_filters), size=(cfg.n_filters, cfg.dim))
        self.front_b = rng.uniform(-0.5, 0.5, size=cfg.dim)
        self.block_W = [
            rng.normal(0, cfg.block_gain / np.sqrt(cfg.dim), size=(cfg.dim, cfg.dim)) for _ in range(cfg.n_blocks)
        ]
        self.block_b = [rng.uniform(-1, 1, size=cfg.dim) for _ in range(cfg.n_blocks)]
        for arr in [self.kernels, self.front_W, self.front_b, *self.block_W, *self.block_b]:
            arr.setflags(write=False)

    def frontend(self, samples: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        F = cfg.n_frames(samples.size)
        frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.window)[:: cfg.stride][:F]
        resp = frames @ self.kernels
        K = cfg.n_filters
        energy = resp[:, :K] ** 2 + resp[:, K:] ** 2
        # log10 energy mapped to roughly unit scale for typical speech-like input
        logE = (np.log10(energy + cfg.log_floor) + 2.0) / 2.0
        return logE @ self.front_W + self.front_b

    def __call__(self, w: Waveform) -> RepresentationStack:
        cfg = self.cfg
        if w.sample_rate != cfg.sample_rate:
            raise InvalidArgumentError(f"waveform sample rate {w.sample_rate} != extractor rate {cfg.sample_rate}")
        if w.samples.size < cfg.window:
            raise InvalidArgumentError(
                f"waveform too short: {w.samples.size} samples, need at least {cfg.window} for one frame"
            )
        h = self.frontend(w.samples)
        layers = [h]
        for W, b in zip(self.block_W, self.block_b):
            prev = np.concatenate([h[:1], h[:-1]], axis=0)
            smooth = 0.5 * (h + prev)
            delta = h - prev
            h = cfg.residual_decay * smooth + np.tanh(delta @ W + b)
            layers.append(h)
        data = np.stack(layers).astype(np.float32)
        return RepresentationStack(data, cfg.hop_seconds, Source.PSEUDO)


@functools.lru_cache(maxsize=8)
def get_extractor(cfg: ExtractorConfig = ExtractorConfig(), seed: int = 0) -> PseudoSSL:
    return PseudoSSL(cfg, seed)


def extract(w: Waveform, cfg: ExtractorConfig = ExtractorConfig(), seed: int = 0) -> RepresentationStack:
    """Run the frozen extractor; output is deterministic in (w, cfg, seed)."""
    return get_extractor(cfg, seed)(w)


# ---------------------------------------------------------------------------
# container I/O
# ---------------------------------------------------------------------------


def write_container(path, data: np.ndarray, hop_seconds: float) -> None:
    data = np.asarray(data)
    if data.ndim != 3:
        raise InvalidArgumentError("container payload must be 3-D")
    L, F, D = data.shape
    if F == 0:
        raise InvalidArgumentError("refusing to write a container with zero frames")
    if not np.all(np.isfinite(data)):
        raise DataError("refusing to write non-finite values")
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, L, F, D, float(hop_seconds))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_container(path) -> tuple[np.ndarray, float]:
    blob = Path(path).read_bytes()
    if len(blob) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, L, F, D, hop = _HEADER.unpack_from(blob, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = HEADER_SIZE + 4 * L * F * D
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size {len(blob) - HEADER_SIZE} bytes, header implies {expected - HEADER_SIZE}")
    if not hop > 0:
        raise FormatError(f"{path}: hop must be positive, got {hop}")
    data = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).reshape(L, F, D).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite entries in payload")
    return data, hop


def save_external(stack: RepresentationStack, path) -> None:
    if stack.n_frames == 0:
        raise InvalidArgumentError("stack has zero frames")
    write_container(path, stack.data, stack.hop_seconds)


def load_external(path) -> RepresentationStack:
    """Load features computed elsewhere.

    Accepts the container written by :func:`save_external`, or a ``.npz``
    archive holding one ``[F, D]`` array per layer under ``layer0``,
    ``layer1``, ... plus a scalar ``hop_seconds`` (the shape a real SSL
    model's per-layer dump naturally takes).
    """
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            names = sorted((k for k in z.files if k.startswith("layer")), key=lambda k: int(k[5:]))
            if not names or "hop_seconds" not in z.files:
                raise FormatError(f"{path}: expected layer0..layerL arrays and hop_seconds")
            layers = [z[k] for k in names]
            hop = float(z["hop_seconds"])
        for k, a in zip(names, layers):
            if a.ndim != 2:
                raise FormatError(f"{path}: {k} must be [frames, dim], got shape {a.shape}")
        return stack_from_layers(layers, hop)
    data, hop = read_container(path)
    return RepresentationStack(data, hop, Source.EXTERNAL)


def stack_from_layers(layers: list[np.ndarray], hop_seconds: float) -> RepresentationStack:
    """Build a stack from per-layer [F, D] arrays, checking they agree in shape."""
    shapes = {np.shape(a) for a in layers}
    if len(shapes) != 1:
        raise FormatError(f"layers disagree in shape: {sorted(shapes)}")
    data = np.stack([np.asarray(a, dtype=np.float32) for a in layers])
    if not np.all(np.isfinite(data)):
        raise DataError("non-finite entries in layers")
    return RepresentationStack(data, hop_seconds, Source.EXTERNAL)


def write_wav(path, w: Waveform) -> None:
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2 or wf.getnchannels() != 1:
            raise FormatError(f"{path}: expected mono 16-bit PCM")
        rate = wf.getframerate()
        pcm = np.frombuffer(wf.readframes(wf.getnframes()), dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32767.0, rate)
