"""Small double-precision gradient-check problems, one per learnable block.

Each builder takes a seed and returns ``(loss_fn, grad_fn, params)`` for
:func:`zstts.numerics.grad_check`. Losses are random projections of the
block output, so every output entry contributes. Batches hold two items of
different lengths so masking is exercised too.
"""

import numpy as np

from zstts.acoustic import AcousticModel, ModelConfig
from zstts.embedding import AttentivePool, AveragePool, LayerWeights
from zstts.layers import LSTM, ConvBlock, Conv1d, Linear

F64 = np.float64


def _mask(lengths, T):
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


def _projected(forward, backward, params, out_shape, rng):
    R = rng.normal(size=out_shape)

    def loss():
        out = forward()
        return float((out * R).sum())

    def grad():
        for p in params:
            p.zero_grad()
        backward(R)

    return loss, grad, params


def linear(seed):
    rng = np.random.default_rng(seed)
    lin = Linear("lin", 5, 3, rng, F64)
    x = rng.normal(size=(2, 4, 5))
    cache = {}

    def fwd():
        y, cache["c"] = lin.forward(x)
        return y

    return _projected(fwd, lambda R: (fwd(), lin.backward(R, cache["c"])), lin.parameters(), (2, 4, 3), rng)


def conv1d(seed):
    rng = np.random.default_rng(seed)
    conv = Conv1d("conv", 3, 4, 3, rng, F64)
    x = rng.normal(size=(2, 6, 3))
    cache = {}

    def fwd():
        y, cache["c"] = conv.forward(x)
        return y

    return _projected(fwd, lambda R: (fwd(), conv.backward(R, cache["c"])), conv.parameters(), (2, 6, 4), rng)


def conv_block(seed):
    rng = np.random.default_rng(seed)
    blk = ConvBlock("blk", 4, 3, rng, F64)
    mask = _mask([6, 4], 6)
    x = rng.normal(size=(2, 6, 4)) * mask[..., None]
    cache = {}

    def fwd():
        y, cache["c"] = blk.forward(x, mask)
        return y

    return _projected(fwd, lambda R: (fwd(), blk.backward(R, cache["c"])), blk.parameters(), (2, 6, 4), rng)


def lstm(seed):
    rng = np.random.default_rng(seed)
    cell = LSTM("lstm", 3, 4, rng, F64)
    x = rng.normal(size=(2, 5, 3))
    cache = {}

    def fwd():
        y, cache["c"] = cell.forward(x)
        return y

    return _projected(fwd, lambda R: (fwd(), cell.backward(R, cache["c"])), cell.parameters(), (2, 5, 4), rng)


def layer_weights(seed):
    rng = np.random.default_rng(seed)
    lw = LayerWeights("lw", 4, F64)
    lw.logits.value[...] = rng.normal(size=4)
    stacks = rng.normal(size=(2, 4, 5, 3))
    cache = {}

    def fwd():
        y, cache["c"] = lw.forward(stacks)
        return y

    return _projected(fwd, lambda R: (fwd(), lw.backward(R, cache["c"])), lw.parameters(), (2, 5, 3), rng)


def average_pool(seed):
    rng = np.random.default_rng(seed)
    pool = AveragePool("avg", 8, 3, rng, F64)
    mask = _mask([4, 2], 4)
    frames = rng.normal(size=(2, 4, 8))
    cache = {}

    def fwd():
        y, cache["c"] = pool.forward(frames, mask)
        return y

    return _projected(fwd, lambda R: (fwd(), pool.backward(R, cache["c"])), pool.parameters(), (2, 3), rng)


def attentive_pool(seed):
    """Attention aggregator on 4 frames x 8 dims (plus a shorter padded item)."""
    rng = np.random.default_rng(seed)
    pool = AttentivePool("att", 8, 5, 3, rng, F64)
    pool.score_v.value[...] = rng.normal(size=5)  # non-trivial attention
    mask = _mask([4, 3], 4)
    frames = rng.normal(size=(2, 4, 8))
    cache = {}

    def fwd():
        y, cache["c"] = pool.forward(frames, mask)
        return y

    return _projected(fwd, lambda R: (fwd(), pool.backward(R, cache["c"])), pool.parameters(), (2, 3), rng)


def _tiny_model(seed, mode="common", aggregator="average"):
    cfg = ModelConfig(
        n_classes=4, n_mels=3, ssl_layers=3, ssl_dim=4, embed_dim=3, hidden=5, enc_blocks=1, dp_blocks=1,
        dec_blocks=1, mode=mode, aggregator=aggregator,
    )
    return AcousticModel(cfg, seed=seed, dtype=F64)


def encoder(seed):
    rng = np.random.default_rng(seed)
    m = _tiny_model(seed, "common")
    pmask = _mask([4, 3], 4)
    ling = rng.normal(size=(2, 4, m.cfg.ling_dim)) * pmask[..., None]
    e = rng.normal(size=(2, 3))
    params = m.enc_in.parameters() + [p for b in m.enc_blocks for p in b.parameters()] + m.enc_proj.parameters()
    cache = {}

    def fwd():
        h, cache["c"] = m._encode(ling, pmask, e)
        return h

    return _projected(fwd, lambda R: (fwd(), m._encode_backward(R, cache["c"])), params, (2, 4, 5), rng)


def duration_predictor(seed):
    rng = np.random.default_rng(seed)
    m = _tiny_model(seed, "separate")
    pmask = _mask([4, 2], 4)
    h = rng.normal(size=(2, 4, 5)) * pmask[..., None]
    e = rng.normal(size=(2, 3))
    params = m.dur_proj.parameters() + [p for b in m.dp_blocks for p in b.parameters()] + m.dp_out.parameters()
    cache = {}

    def fwd():
        out, cache["c"] = m._predict(h, pmask, e)
        return out

    return _projected(fwd, lambda R: (fwd(), m._predict_backward(R, cache["c"])), params, (2, 4), rng)


def decoder(seed):
    rng = np.random.default_rng(seed)
    m = _tiny_model(seed, "separate")
    tmask = _mask([6, 4], 6)
    frames = rng.normal(size=(2, 6, 5)) * tmask[..., None]
    e = rng.normal(size=(2, 3))
    params = m.dec_proj.parameters() + [p for b in m.dec_blocks for p in b.parameters()] + m.dec_out.parameters()
    cache = {}

    def fwd():
        mel, cache["c"] = m._decode(frames, tmask, e)
        return mel

    return _projected(fwd, lambda R: (fwd(), m._decode_backward(R, cache["c"])), params, (2, 6, 3), rng)


def full_model(seed, mode, aggregator):
    """End-to-end: references -> embeddings -> encoder/predictor/LR/decoder."""
    rng = np.random.default_rng(seed)
    m = _tiny_model(seed, mode, aggregator)
    B, P = 2, 3
    pmask = _mask([3, 2], P)
    ling = rng.normal(size=(B, P, m.cfg.ling_dim)) * pmask[..., None]
    durations = np.array([[2, 1, 2], [1, 3, 0]])
    refs = {}
    for role in m.cfg.roles:
        if aggregator == "stats":
            refs[role] = (rng.normal(size=(B, 5, 3)), _mask([5, 4], 5))
        else:
            refs[role] = (rng.normal(size=(B, 3, 4, 4)), _mask([4, 3], 4))
    from zstts.acoustic import Batch

    batch = Batch(ling, pmask, durations, refs)
    mel, ld, _ = m.forward(batch)
    Rm, Rd = rng.normal(size=mel.shape), rng.normal(size=ld.shape)

    def loss():
        mel, ld, _ = m.forward(batch)
        return float((mel * Rm).sum() + (ld * Rd).sum())

    def grad():
        m.zero_grad()
        _, _, c = m.forward(batch)
        m.backward(Rm, Rd, c)

    return loss, grad, m.parameters()


BLOCKS = {
    "layer_weights": layer_weights,
    "average_pool": average_pool,
    "attentive_pool": attentive_pool,
    "encoder": encoder,
    "duration_predictor": duration_predictor,
    "decoder": decoder,
}

PRIMITIVES = {"linear": linear, "conv1d": conv1d, "conv_block": conv_block, "lstm": lstm}
