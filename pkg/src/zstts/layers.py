"""Layers with hand-written backward passes.

Every layer follows the same calling convention::

    y, cache = layer.forward(x)
    dx = layer.backward(dy, cache)   # accumulates into parameter .grad

Caches are returned rather than stored on the layer, so one layer may be
applied several times before any backward call.
"""

from __future__ import annotations

import numpy as np

from .numerics import Module, Parameter, uniform_init


def sigmoid(x):
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Linear(Module):
    """y = x @ W + b over the last axis."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32, bias=True):
        self.n_in, self.n_out = n_in, n_out
        self.W = Parameter(f"{name}.W", uniform_init(rng, (n_in, n_out), n_in, dtype))
        self.b = Parameter(f"{name}.b", uniform_init(rng, (n_out,), n_in, dtype)) if bias else None

    def forward(self, x):
        y = x @ self.W.value
        if self.b is not None:
            y = y + self.b.value
        return y, x

    def backward(self, dy, x):
        self.W.grad += x.reshape(-1, self.n_in).T @ dy.reshape(-1, self.n_out)
        if self.b is not None:
            self.b.grad += dy.reshape(-1, self.n_out).sum(axis=0)
        return dy @ self.W.value.T


class Conv1d(Module):
    """'Same'-padded 1-D convolution over the time axis of [B, T, C] inputs.

    Positions past the end of a sequence must already be zero in ``x`` so
    batched and unbatched outputs agree on the valid region.
    """

    def __init__(self, name: str, n_in: int, n_out: int, kernel: int, rng: np.random.Generator, dtype=np.float32):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.n_in, self.n_out, self.kernel = n_in, n_out, kernel
        fan_in = n_in * kernel
        self.W = Parameter(f"{name}.W", uniform_init(rng, (fan_in, n_out), fan_in, dtype))
        self.b = Parameter(f"{name}.b", uniform_init(rng, (n_out,), fan_in, dtype))

    def _cols(self, x):
        B, T, C = x.shape
        half = self.kernel // 2
        xp = np.pad(x, ((0, 0), (half, half), (0, 0)))
        return np.concatenate([xp[:, j : j + T] for j in range(self.kernel)], axis=-1)

    def forward(self, x):
        cols = self._cols(x)
        return cols @ self.W.value + self.b.value, (cols, x.shape)

    def backward(self, dy, cache):
        cols, (B, T, C) = cache
        kc = self.kernel * C
        self.W.grad += cols.reshape(-1, kc).T @ dy.reshape(-1, self.n_out)
        self.b.grad += dy.reshape(-1, self.n_out).sum(axis=0)
        dcols = dy @ self.W.value.T
        half = self.kernel // 2
        dxp = np.zeros((B, T + 2 * half, C), dtype=dy.dtype)
        for j in range(self.kernel):
            dxp[:, j : j + T] += dcols[..., j * C : (j + 1) * C]
        return dxp[:, half : half + T]


class ConvBlock(Module):
    """Residual block: x + relu(conv(x)), re-masked so padding stays zero."""

    def __init__(self, name: str, channels: int, kernel: int, rng, dtype=np.float32):
        self.conv = Conv1d(f"{name}.conv", channels, channels, kernel, rng, dtype)

    def forward(self, x, mask):
        a, c_cache = self.conv.forward(x)
        r = np.maximum(a, 0)
        m = mask[..., None]
        y = (x + r) * m
        return y, (a, c_cache, m)

    def backward(self, dy, cache):
        a, c_cache, m = cache
        dy = dy * m
        da = dy * (a > 0)
        return dy + self.conv.backward(da, c_cache)


class LSTM(Module):
    """Single-direction LSTM over [B, T, I] returning all hidden states [B, T, H].

    Gate order is (input, forget, cell, output). The forget-gate bias starts
    at +1 on top of the uniform init.
    """

    def __init__(self, name: str, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.n_in, self.hidden = n_in, hidden
        H = hidden
        self.Wx = Parameter(f"{name}.Wx", uniform_init(rng, (n_in, 4 * H), H, dtype))
        self.Wh = Parameter(f"{name}.Wh", uniform_init(rng, (H, 4 * H), H, dtype))
        b = uniform_init(rng, (4 * H,), H, dtype)
        b[H : 2 * H] += 1
        self.b = Parameter(f"{name}.b", b)

    def forward(self, x):
        B, T, _ = x.shape
        H = self.hidden
        dtype = x.dtype
        xw = x @ self.Wx.value + self.b.value
        Wh = self.Wh.value
        h = np.zeros((B, H), dtype)
        c = np.zeros((B, H), dtype)
        hs = np.empty((B, T, H), dtype)
        gates = np.empty((T, 4, B, H), dtype)
        cs = np.empty((T + 1, B, H), dtype)
        tcs = np.empty((T, B, H), dtype)
        cs[0] = c
        for t in range(T):
            a = xw[:, t] + h @ Wh
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H : 2 * H])
            g = np.tanh(a[:, 2 * H : 3 * H])
            o = sigmoid(a[:, 3 * H :])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t] = h
            gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, g, o
            cs[t + 1] = c
            tcs[t] = tc
        return hs, (x, hs, gates, cs, tcs)

    def backward(self, dhs, cache):
        x, hs, gates, cs, tcs = cache
        B, T, _ = x.shape
        H = self.hidden
        Wh = self.Wh.value
        dtype = dhs.dtype
        da_all = np.empty((B, T, 4 * H), dtype)
        dh_next = np.zeros((B, H), dtype)
        dc_next = np.zeros((B, H), dtype)
        for t in range(T - 1, -1, -1):
            i, f, g, o = gates[t]
            tc = tcs[t]
            dh = dhs[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * cs[t]
            dc_next = dc * f
            da = da_all[:, t]
            da[:, :H] = di * i * (1 - i)
            da[:, H : 2 * H] = df * f * (1 - f)
            da[:, 2 * H : 3 * H] = dg * (1 - g * g)
            da[:, 3 * H :] = do * o * (1 - o)
            dh_next = da @ Wh.T
        h_prev = np.concatenate([np.zeros((B, 1, H), dtype), hs[:, :-1]], axis=1)
        self.Wh.grad += h_prev.reshape(-1, H).T @ da_all.reshape(-1, 4 * H)
        self.Wx.grad += x.reshape(-1, self.n_in).T @ da_all.reshape(-1, 4 * H)
        self.b.grad += da_all.reshape(-1, 4 * H).sum(axis=0)
        return da_all @ self.Wx.value.T
