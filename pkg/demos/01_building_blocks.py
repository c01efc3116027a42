"""
Building blocks
===============

The pieces everything else is made of: a stable softmax, the warmup
learning-rate schedule, a finite-difference gradient check, and the length
regulator that turns one vector per phoneme into one vector per frame.
"""

import numpy as np

from zstts import length_regulate
from zstts.layers import Conv1d
from zstts.numerics import grad_check, noam_lr, softmax

# softmax is shift invariant, so huge logits are fine
print(softmax([1.0, 2.0]))
print(softmax([1000.0, 1001.0]))

# the schedule rises linearly for `warmup` steps, then decays as step^-1/2
for step in (1, 100, 400, 800, 1600, 3200):
    print(f"step {step:5d}  lr {noam_lr(step, 256, 400):.2e}")

# every layer carries its own backward pass; the gradient check compares it
# with central differences in float64
rng = np.random.default_rng(0)
conv = Conv1d("demo.conv", 3, 4, 3, rng, np.float64)
x = rng.normal(size=(2, 6, 3))
R = rng.normal(size=(2, 6, 4))


def loss():
    return float((conv.forward(x)[0] * R).sum())


def grad():
    for p in conv.parameters():
        p.zero_grad()
    _, cache = conv.forward(x)
    conv.backward(R, cache)


report = grad_check(loss, grad, conv.parameters())
print("conv1d gradient check:", "ok" if report.passed else "FAILED", f"(worst rel. error {report.worst:.1e})")

# the length regulator repeats phoneme vectors by their durations;
# a zero duration drops the phoneme entirely
h = np.array([[1.0], [2.0], [3.0]])
print(length_regulate(h, [2, 1, 3]).ravel())
print(length_regulate(h, [2, 0, 3]).ravel())
