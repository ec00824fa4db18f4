"""
Tests for the Transformer classifier: parameter counts, shapes, end-to-end
gradients and checkpoint round trips.
"""
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import autodiff as ad
from autodiff import Tensor
from classifier import build, count_parameters, expected_parameter_count, load_checkpoint, save_checkpoint
from errors import ConfigError, DimensionError
from models import ModelConfig, TokenizerConfig
from trainer import cross_entropy
from variant_mappings import all_variants, get_variant

H = 1e-5


def test_parameter_counts():
    """Baseline 159,814 and champion 164,430 trainable parameters, 4,616 apart."""
    baseline = build(ModelConfig(), TokenizerConfig(variant="baseline"), seed=0)
    champion = build(ModelConfig(), TokenizerConfig(), seed=0)
    assert count_parameters(baseline) == 159814, count_parameters(baseline)
    assert count_parameters(champion) == 164430, count_parameters(champion)
    assert count_parameters(champion) - count_parameters(baseline) == 4616
    assert expected_parameter_count(ModelConfig(), 216, 8) == 164430
    print("[PASS] Parameter counts")


def test_every_variant_builds():
    """Each named variant builds and matches its closed-form count."""
    for name in all_variants():
        spec = get_variant(name)
        model = build(spec.model, spec.tokenizer, seed=0)
        expected = expected_parameter_count(spec.model, spec.tokenizer.token_dim,
                                            spec.tokenizer.pooling_param_count)
        assert count_parameters(model) == expected, name
    print("[PASS] Every variant builds")


def test_forward_shapes():
    """(B, 9, 128) windows -> (B, 6) logits for B in {1, 7}."""
    model = build(ModelConfig(), TokenizerConfig(), seed=1)
    rng = np.random.default_rng(0)
    for batch in (1, 7):
        logits = model.predict_logits(rng.standard_normal((batch, 9, 128)))
        assert logits.shape == (batch, 6), f"Got {logits.shape}"
        assert np.all(np.isfinite(logits))
    print("[PASS] Forward shapes")


def test_attention_rows_are_distributions():
    """Every attention row over the CLS + 15 positions sums to 1."""
    model = build(ModelConfig(), TokenizerConfig(), seed=2)
    h = Tensor(np.random.default_rng(7).standard_normal((3, 16, 64)) * 3.0)
    with ad.no_grad():
        for i in range(model.model_cfg.n_layers):
            weights = model.attention_weights(h, f"layers.{i}.attn").data
            assert weights.shape == (3, 4, 16, 16), weights.shape
            assert np.all(weights >= 0.0)
            assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-12)
    print("[PASS] Attention rows sum to 1")


def test_batch_rows_independent():
    """A window's logits do not depend on its batch mates or their order."""
    model = build(ModelConfig(), TokenizerConfig(), seed=1)
    windows = np.random.default_rng(8).standard_normal((5, 9, 128))
    logits = model.predict_logits(windows)
    reversed_logits = model.predict_logits(windows[::-1].copy())[::-1]
    assert np.allclose(logits, reversed_logits, atol=1e-10)
    for b in range(len(windows)):
        single = model.predict_logits(windows[b:b + 1])
        assert np.allclose(single[0], logits[b], atol=1e-10), b

    zeros = model.forward(Tensor(np.zeros((4, 15, 216))))
    assert np.allclose(zeros.data, zeros.data[:1], atol=1e-12)
    print("[PASS] Batch rows independent")


def test_wrong_token_shape():
    model = build(ModelConfig(), TokenizerConfig(), seed=0)
    with pytest.raises(DimensionError):
        model.forward(Tensor(np.zeros((2, 15, 144))))
    print("[PASS] Wrong token shape rejected")


def test_token_dim_mismatch():
    with pytest.raises(ConfigError):
        build(ModelConfig(token_dim=144), TokenizerConfig(), seed=0)
    print("[PASS] token_dim mismatch rejected")


def test_seeded_initialization():
    """Same seed -> identical weights; different seed -> different weights."""
    a = build(ModelConfig(), TokenizerConfig(), seed=3).parameters()
    b = build(ModelConfig(), TokenizerConfig(), seed=3).parameters()
    c = build(ModelConfig(), TokenizerConfig(), seed=4).parameters()
    assert all(np.array_equal(a[n].data, b[n].data) for n in a)
    assert not np.array_equal(a["input_proj.weight"].data, c["input_proj.weight"].data)
    print("[PASS] Seeded initialization")


def test_initial_logits_near_uniform():
    """The scaled head keeps the first loss close to ln 6."""
    model = build(ModelConfig(), TokenizerConfig(), seed=0)
    windows = np.random.default_rng(5).standard_normal((32, 9, 128))
    labels = np.arange(32) % 6
    with ad.no_grad():
        loss = cross_entropy(model.forward_windows(windows), labels).item()
    assert abs(loss - np.log(6.0)) < 0.15, f"Got {loss}"
    print("[PASS] Initial loss near ln 6")


def _pick_parameters(params, rng):
    """Indices spread over every parameter group, GeM exponents included."""
    groups = ["input_proj", "cls_token", "attn", "ffn", "ln", "head", "tokenizer.gem_p"]
    picks = []
    names = list(params)
    for group in groups:
        members = [n for n in names if group in n]
        assert members, f"no parameters in group {group}"
        for _ in range(3 if group != "cls_token" else 2):
            name = members[rng.integers(len(members))]
            index = tuple(rng.integers(s) for s in params[name].shape)
            picks.append((name, index))
    return picks


def test_end_to_end_gradients():
    """Loss gradient vs central differences on 20 parameters across all groups."""
    model = build(ModelConfig(dropout=0.0), TokenizerConfig(), seed=2)
    rng = np.random.default_rng(6)
    windows = rng.standard_normal((3, 9, 128))
    labels = np.array([0, 3, 5])
    params = model.parameters()
    # move the exponents off their shared initial value
    params["tokenizer.gem_p.level3"].data[:] = rng.uniform(2.0, 4.0, size=8)

    model.zero_grad()
    cross_entropy(model.forward_windows(windows), labels).backward()
    picks = _pick_parameters(params, rng)
    assert len(picks) >= 20

    def loss_value() -> float:
        with ad.no_grad():
            return cross_entropy(model.forward_windows(windows), labels).item()

    for name, index in picks:
        tensor = params[name]
        analytic = tensor.grad[index]
        orig = tensor.data[index]
        tensor.data[index] = orig + H
        plus = loss_value()
        tensor.data[index] = orig - H
        minus = loss_value()
        tensor.data[index] = orig
        numeric = (plus - minus) / (2 * H)
        assert abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric)) + 1e-8, \
            f"{name}{index}: analytic {analytic:.6e} vs numeric {numeric:.6e}"
    print("[PASS] End-to-end gradients")


def test_checkpoint_round_trip():
    """A saved model reloads with identical parameters and logits."""
    model = build(ModelConfig(), TokenizerConfig(depth_set=(1, 2, 3)), seed=7)
    model.parameters()["tokenizer.gem_p.level2"].data[:] = [2.1, 2.9, 3.3, 3.7]
    path = Path(tempfile.mkdtemp()) / "model.json"
    save_checkpoint(model, path, extra={"note": "test"})

    loaded, extra = load_checkpoint(path)
    assert extra == {"note": "test"}
    assert loaded.tokenizer_cfg.depth_set == (1, 2, 3)
    original, restored = model.parameters(), loaded.parameters()
    assert list(original) == list(restored)
    assert all(np.array_equal(original[n].data, restored[n].data) for n in original)
    windows = np.random.default_rng(8).standard_normal((4, 9, 128))
    assert np.array_equal(model.predict_logits(windows), loaded.predict_logits(windows))
    print("[PASS] Checkpoint round trip")


def test_missing_checkpoint():
    with pytest.raises(ConfigError):
        load_checkpoint(Path(tempfile.mkdtemp()) / "absent.json")
    print("[PASS] Missing checkpoint")


def run_all_tests():
    """Run all tests."""
    print("Testing classifier...\n")

    test_parameter_counts()
    test_every_variant_builds()
    test_forward_shapes()
    test_attention_rows_are_distributions()
    test_batch_rows_independent()
    test_wrong_token_shape()
    test_token_dim_mismatch()
    test_seeded_initialization()
    test_initial_logits_near_uniform()
    test_end_to_end_gradients()
    test_checkpoint_round_trip()
    test_missing_checkpoint()

    print("\n" + "=" * 50)
    print("All classifier tests passed!")
    print("=" * 50)


if __name__ == '__main__':
    run_all_tests()
