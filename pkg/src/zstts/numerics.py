"""Parameters, softmax, Adam, the Noam schedule and a finite-difference gradient checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import CheckInvalidError, InvalidArgumentError, TrainingDivergedError


class Parameter:
    """A named learnable tensor with a gradient buffer of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


class Module:
    """Container that discovers Parameters and sub-Modules among its attributes.

    Discovery follows attribute insertion order, so parameter order is stable
    for a given constructor.
    """

    def parameters(self) -> list[Parameter]:
        out = []
        for value in vars(self).values():
            out.extend(_collect(value))
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def _collect(value) -> list[Parameter]:
    if isinstance(value, Parameter):
        return [value]
    if isinstance(value, Module):
        return value.parameters()
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_collect(v))
        return out
    return []


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn in float64 then cast."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------


def softmax(v) -> np.ndarray:
    """Numerically stable softmax of a 1-D vector."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size == 0:
        raise InvalidArgumentError("softmax expects a nonempty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("softmax input has non-finite entries")
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient w.r.t. logits given gradient w.r.t. softmax output."""
    dot = np.sum(probs * dprobs, axis=axis, keepdims=True)
    return probs * (dprobs - dot)


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to entries where ``mask`` is true.

    Every row must have at least one unmasked entry.
    """
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_scale: float = 1.0
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, params: Iterable[Parameter]):
        for p in params:
            if p.name not in self.first_moment:
                self.first_moment[p.name] = np.zeros_like(p.value)
                self.second_moment[p.name] = np.zeros_like(p.value)


def adam_step(params: list[Parameter], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    A parameter whose gradient is identically zero is skipped entirely
    (values and moments untouched), so an all-zero gradient leaves every
    value unchanged regardless of accumulated momentum. The step counter
    advances by one either way.
    """
    if not lr > 0:
        raise InvalidArgumentError(f"learning rate must be positive, got {lr}")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingDivergedError(f"non-finite gradient in {p.name}", param_name=p.name)
    state.ensure(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        g = p.grad
        if not g.any():
            continue
        m = state.first_moment[p.name]
        v = state.second_moment[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.value -= (lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.value.dtype)


def noam_lr(step: int, model_dim: int, warmup: int, scale: float = 1.0) -> float:
    """Linear warmup for ``warmup`` steps, then inverse-square-root decay."""
    if step < 1:
        raise InvalidArgumentError(f"noam_lr step must be >= 1, got {step}")
    if model_dim < 1 or warmup < 1:
        raise InvalidArgumentError("model_dim and warmup must be positive")
    return scale * model_dim**-0.5 * min(step**-0.5, step * warmup**-1.5)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(
    loss_fn: Callable[[], float],
    grad_fn: Callable[[], None],
    params: list[Parameter],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` returns the scalar loss at the current parameter values.
    ``grad_fn`` must leave the analytic gradient in each ``p.grad`` (it is
    responsible for zeroing first). The relative error per entry is
    ``|a - n| / max(|a|, |n|, floor)``; ``max_entries`` subsamples large
    tensors with a seeded generator.
    """
    base = float(loss_fn())
    again = float(loss_fn())
    if base != again:
        raise CheckInvalidError(f"forward is not deterministic: {base!r} != {again!r}")

    grad_fn()
    analytic = {p.name: p.grad.copy() for p in params}
    rng = np.random.default_rng(seed)
    report = {}
    for p in params:
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = analytic[p.name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn())
            flat[i] = orig - eps
            f_minus = float(loss_fn())
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(a_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        report[p.name] = worst
    return GradCheckReport(report, tol)
