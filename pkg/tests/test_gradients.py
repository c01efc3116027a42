import numpy as np
import pytest

import gradcases
from zstts.numerics import grad_check


@pytest.mark.parametrize("name", sorted(gradcases.PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1])
def test_primitive_gradients(name, seed):
    rep = grad_check(*gradcases.PRIMITIVES[name](seed), eps=1e-5, tol=1e-4)
    assert rep.passed, rep.max_rel_error


@pytest.mark.parametrize("name", sorted(gradcases.BLOCKS))
def test_block_gradients(name):
    rep = grad_check(*gradcases.BLOCKS[name](11), eps=1e-5, tol=1e-4)
    assert rep.passed, rep.max_rel_error


@pytest.mark.parametrize("mode", ["common", "separate"])
@pytest.mark.parametrize("aggregator", ["average", "attentive", "stats"])
def test_full_model_gradients(mode, aggregator):
    rep = grad_check(*gradcases.full_model(3, mode, aggregator), eps=1e-5, tol=1e-4, max_entries=15)
    assert rep.passed, rep.max_rel_error


def test_stats_embedder_has_no_parameters():
    loss, grad, params = gradcases.full_model(0, "separate", "stats")
    assert not any(p.name.startswith("embed.") for p in params)


def test_separate_mode_both_layer_weights_receive_gradient():
    loss, grad, params = gradcases.full_model(5, "separate", "attentive")
    grad()
    norms = {p.name: float(np.abs(p.grad).sum()) for p in params if p.name.endswith("layer.logits")}
    assert set(norms) == {"embed.acoustic.layer.logits", "embed.duration.layer.logits"}
    assert all(v > 0 for v in norms.values())
