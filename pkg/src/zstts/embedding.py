"""Speaker embeddings from layered representations.

An :class:`SSLEmbedder` is a softmax-normalised weighted sum over layers
followed by an aggregator that collapses frames into one vector of length
E. Two aggregators are provided:

* :class:`AveragePool` -- masked mean over frames (bitwise invariant to frame
  order), then a linear map D_l -> E.
* :class:`AttentivePool` -- forward LSTM over frames, scalar score
  ``s_f = v . tanh(h_f) + c`` per frame, softmax attention over valid
  frames, attention-weighted sum of hidden states, then a linear map H -> E.

Batches are padded on the right; ``mask[b, f]`` marks valid frames. Since
the LSTM runs forward, padding never influences valid hidden states.

:class:`StatsEmbedder` is the frozen statistics-pooling baseline: per-bin
mean and population standard deviation of a mel spectrogram, concatenated
and mapped to E by a fixed seeded projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .features import RepresentationStack
from .layers import LSTM, Linear
from .numerics import Module, Parameter, masked_softmax, softmax, softmax_backward

ROLES = ("shared", "acoustic", "duration")


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidArgumentError(f"unknown embedding role {self.role!r}")


class LayerWeights(Module):
    """Learnable logits over L + 1 layers; ``weights()`` is their softmax."""

    def __init__(self, name: str, n_layers: int, dtype=np.float32):
        self.logits = Parameter(f"{name}.logits", np.zeros(n_layers, dtype=dtype))

    @property
    def n_layers(self) -> int:
        return self.logits.value.size

    def weights(self) -> np.ndarray:
        return softmax(self.logits.value)

    def forward(self, stacks: np.ndarray):
        """stacks [B, L+1, F, D] -> frames [B, F, D]."""
        if stacks.shape[1] != self.n_layers:
            raise InvalidArgumentError(f"stack has {stacks.shape[1]} layers, weights expect {self.n_layers}")
        w = self.weights().astype(stacks.dtype)
        return np.einsum("l,blfd->bfd", w, stacks), (w, stacks)

    def backward(self, dframes, cache):
        w, stacks = cache
        dw = np.einsum("bfd,blfd->l", dframes, stacks)
        self.logits.grad += softmax_backward(w, dw)


def weighted_sum(stack: RepresentationStack, lw: LayerWeights) -> np.ndarray:
    """Single-utterance weighted sum: [L+1, F, D] -> [F, D]."""
    if stack.n_layers != lw.n_layers:
        raise InvalidArgumentError(f"stack has {stack.n_layers} layers, weights expect {lw.n_layers}")
    out, _ = lw.forward(stack.data[None].astype(lw.logits.value.dtype))
    return out[0]


class AveragePool(Module):
    def __init__(self, name: str, dim: int, embed_dim: int, rng, dtype=np.float32):
        self.proj = Linear(f"{name}.proj", dim, embed_dim, rng, dtype)

    def forward(self, frames, mask):
        m = mask[..., None].astype(frames.dtype)
        count = m.sum(axis=1)
        if np.any(count == 0):
            raise InvalidArgumentError("average pooling needs at least one frame")
        # summing sorted values fixes the reduction order, so any frame
        # permutation gives a bit-identical mean
        pooled = np.sort(frames * m, axis=1).sum(axis=1) / count
        e, p_cache = self.proj.forward(pooled)
        return e, (m, count, p_cache)

    def backward(self, de, cache):
        m, count, p_cache = cache
        dpooled = self.proj.backward(de, p_cache)
        return (dpooled / count)[:, None, :] * m


class AttentivePool(Module):
    def __init__(self, name: str, dim: int, hidden: int, embed_dim: int, rng, dtype=np.float32):
        self.lstm = LSTM(f"{name}.lstm", dim, hidden, rng, dtype)
        bound = 1.0 / np.sqrt(hidden)
        self.score_v = Parameter(f"{name}.score_v", rng.uniform(-bound, bound, size=hidden).astype(dtype))
        self.score_c = Parameter(f"{name}.score_c", np.zeros(1, dtype=dtype))
        self.proj = Linear(f"{name}.proj", hidden, embed_dim, rng, dtype)

    def forward(self, frames, mask):
        if np.any(mask.sum(axis=1) == 0):
            raise InvalidArgumentError("attentive pooling needs at least one frame")
        hs, l_cache = self.lstm.forward(frames)
        th = np.tanh(hs)
        scores = th @ self.score_v.value + self.score_c.value[0]
        attn = masked_softmax(scores, mask).astype(frames.dtype)
        pooled = np.einsum("bf,bfh->bh", attn, hs)
        e, p_cache = self.proj.forward(pooled)
        return e, (hs, th, attn, l_cache, p_cache)

    def attention(self, frames, mask):
        """Attention weights only, for inspection."""
        hs, _ = self.lstm.forward(frames)
        scores = np.tanh(hs) @ self.score_v.value + self.score_c.value[0]
        return masked_softmax(scores, mask)

    def backward(self, de, cache):
        hs, th, attn, l_cache, p_cache = cache
        dpooled = self.proj.backward(de, p_cache)
        dattn = np.einsum("bh,bfh->bf", dpooled, hs)
        dscores = softmax_backward(attn, dattn)
        self.score_v.grad += np.einsum("bf,bfh->h", dscores, th)
        self.score_c.grad += dscores.sum()
        dhs = attn[..., None] * dpooled[:, None, :]
        dhs += dscores[..., None] * self.score_v.value * (1 - th * th)
        return self.lstm.backward(dhs, l_cache)


class SSLEmbedder(Module):
    """Layer weighted-sum plus aggregation, producing one embedding per utterance."""

    def __init__(
        self,
        role: str,
        n_layers: int,
        dim: int,
        embed_dim: int,
        aggregator: str,
        rng: np.random.Generator,
        lstm_hidden: int | None = None,
        dtype=np.float32,
    ):
        if role not in ROLES:
            raise InvalidArgumentError(f"unknown embedding role {role!r}")
        self.role = role
        self.aggregator = aggregator
        name = f"embed.{role}"
        self.layer_weights = LayerWeights(f"{name}.layer", n_layers, dtype)
        if aggregator == "average":
            self.pool = AveragePool(f"{name}.avg", dim, embed_dim, rng, dtype)
        elif aggregator == "attentive":
            self.pool = AttentivePool(f"{name}.att", dim, lstm_hidden or embed_dim, embed_dim, rng, dtype)
        else:
            raise InvalidArgumentError(f"unknown aggregator {aggregator!r}")

    def forward(self, stacks, mask):
        frames, w_cache = self.layer_weights.forward(stacks)
        e, p_cache = self.pool.forward(frames, mask)
        return e, (w_cache, p_cache)

    def backward(self, de, cache):
        w_cache, p_cache = cache
        dframes = self.pool.backward(de, p_cache)
        self.layer_weights.backward(dframes, w_cache)

    def embed(self, stack: RepresentationStack) -> SpeakerEmbedding:
        S, mask = pad_stacks([stack], self.layer_weights.logits.value.dtype)
        e, _ = self.forward(S, mask)
        return SpeakerEmbedding(e[0], self.role)


class StatsEmbedder(Module):
    """Frozen mean+std statistics pooling over a mel spectrogram (baseline).

    Standard deviation uses the population convention (divide by T). The
    projection is drawn once from ``seed`` and never trained, so the
    embedding is a deterministic function of the mel.
    """

    def __init__(self, role: str, n_mels: int, embed_dim: int, seed: int = 0, dtype=np.float32):
        self.role = role
        rng = np.random.default_rng([seed, 0x5747])
        self.projection = (rng.normal(0, 1 / np.sqrt(2 * n_mels), size=(2 * n_mels, embed_dim))).astype(dtype)

    @staticmethod
    def statistics(mels, mask):
        m = mask[..., None].astype(mels.dtype)
        n = m.sum(axis=1)
        if np.any(n < 2):
            raise InvalidArgumentError("statistics pooling needs at least 2 frames")
        mean = (mels * m).sum(axis=1) / n
        var = (((mels - mean[:, None]) * m) ** 2).sum(axis=1) / n
        return np.concatenate([mean, np.sqrt(var)], axis=-1)

    def forward(self, mels, mask):
        return self.statistics(mels, mask) @ self.projection, None

    def backward(self, de, cache):
        pass

    def embed(self, mel: np.ndarray) -> SpeakerEmbedding:
        mel = np.asarray(mel, dtype=self.projection.dtype)
        e, _ = self.forward(mel[None], np.ones((1, mel.shape[0]), dtype=bool))
        return SpeakerEmbedding(e[0], self.role)


def baseline_stats_embedding(mel: np.ndarray, embed_dim: int = 16, seed: int = 0) -> SpeakerEmbedding:
    """Statistics-pooling baseline embedding of a [T, M] log-mel (T >= 2)."""
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[0] < 2:
        raise InvalidArgumentError("baseline embedding needs a [T, M] mel with T >= 2")
    return StatsEmbedder("shared", mel.shape[1], embed_dim, seed, dtype=np.float64).embed(mel)


def pad_stacks(stacks: list[RepresentationStack], dtype=np.float32):
    """Right-pad stacks to a common frame count: -> ([B, L+1, F, D], mask [B, F])."""
    if not stacks:
        raise InvalidArgumentError("no stacks to pad")
    L, D = stacks[0].n_layers, stacks[0].dim
    for s in stacks:
        if (s.n_layers, s.dim) != (L, D):
            raise InvalidArgumentError("stacks in a batch must share layer count and dim")
    F = max(s.n_frames for s in stacks)
    S = np.zeros((len(stacks), L, F, D), dtype=dtype)
    mask = np.zeros((len(stacks), F), dtype=bool)
    for b, s in enumerate(stacks):
        S[b, :, : s.n_frames] = s.data
        mask[b, : s.n_frames] = True
    return S, mask


def pad_mels(mels: list[np.ndarray], dtype=np.float32):
    T = max(m.shape[0] for m in mels)
    M = mels[0].shape[1]
    out = np.zeros((len(mels), T, M), dtype=dtype)
    mask = np.zeros((len(mels), T), dtype=bool)
    for b, m in enumerate(mels):
        out[b, : m.shape[0]] = m
        mask[b, : m.shape[0]] = True
    return out, mask
