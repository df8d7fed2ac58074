import time

import numpy as np
import pytest

from gaplab.neural_lm import GradientCheckError, LmConfig, gradient_check, make_sample


TINY = LmConfig(
    embed_dim=6, hidden_dim=8, num_layers=2, dropout_prob=0.0,
    batch_size=2, bptt_len=5, vocab_size=12, seed=0,
)


def test_lstm_gradients_match_finite_differences():
    started = time.perf_counter()
    err = gradient_check(TINY)
    elapsed = time.perf_counter() - started
    assert err < 1e-4
    assert elapsed < 10.0


def test_single_layer_variant():
    cfg = LmConfig(
        embed_dim=5, hidden_dim=7, num_layers=1, dropout_prob=0.0,
        batch_size=3, bptt_len=4, vocab_size=10, seed=1,
    )
    assert gradient_check(cfg) < 1e-4


def test_linear_degenerate_near_exact():
    # Zero recurrent layers + quadratic readout: the loss is quadratic in
    # every coordinate, so central differences are exact to roundoff.
    cfg = LmConfig(
        embed_dim=6, hidden_dim=8, num_layers=0, dropout_prob=0.0,
        batch_size=2, bptt_len=5, vocab_size=12, seed=0,
    )
    assert gradient_check(cfg, objective="quadratic") < 1e-8


def test_dropout_rejected():
    cfg = LmConfig(
        embed_dim=4, hidden_dim=4, num_layers=1, dropout_prob=0.2,
        batch_size=2, vocab_size=8, seed=0,
    )
    with pytest.raises(GradientCheckError, match="dropout"):
        gradient_check(cfg)


def test_large_dims_rejected():
    cfg = LmConfig(
        embed_dim=64, hidden_dim=64, num_layers=1, dropout_prob=0.0,
        batch_size=2, vocab_size=32, seed=0,
    )
    with pytest.raises(GradientCheckError, match="dims"):
        gradient_check(cfg)


def test_explicit_sample_accepted():
    inputs, targets = make_sample(TINY, batch=2, length=3, seed=5)
    assert gradient_check(TINY, sample=(inputs, targets)) < 1e-4
