"""
Tests for the reverse-mode autodiff engine.

Checks forward values, gradients against central finite differences,
gradient accumulation through shared nodes, and the usage errors.
"""
import os
import sys

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import autodiff as ad
from autodiff import Tensor, parameter
from errors import AutodiffUsageError, DimensionError, NumericDomainError

H = 1e-5


def numeric_grad(fn, x: np.ndarray) -> np.ndarray:
    """Central differences of scalar ``fn`` over every element of ``x``."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + H
        plus = fn(x)
        x[idx] = orig - H
        minus = fn(x)
        x[idx] = orig
        grad[idx] = (plus - minus) / (2 * H)
    return grad


def check_grad(build, x0: np.ndarray, tol: float = 1e-6):
    """Compare the analytic gradient of ``build(Tensor)`` with finite differences."""
    x = parameter(x0)
    build(x).backward()
    numeric = numeric_grad(lambda arr: build(Tensor(arr)).item(), x0.copy())
    diff = np.abs(x.grad - numeric)
    bound = tol * np.maximum(np.abs(x.grad), np.abs(numeric)) + 1e-8
    assert np.all(diff <= bound), f"max abs error {diff.max():.2e}"


def test_quadratic_gradient():
    """d/dx sum(x*x) = 2x."""
    x = parameter([1.0, -2.0, 3.0])
    (x * x).sum().backward()
    assert np.allclose(x.grad, [2.0, -4.0, 6.0]), f"Got {x.grad}"
    print("[PASS] Quadratic gradient")


def test_shared_node_accumulates():
    """Both paths through a reused node contribute: d/dx (x*x + x) = 2x + 1."""
    x = parameter([0.5, 1.5])
    y = x * x
    (y + x).sum().backward()
    assert np.allclose(x.grad, [2.0, 4.0]), f"Got {x.grad}"
    print("[PASS] Gradient accumulation over shared nodes")


def test_leaf_grads_accumulate_across_backward_calls():
    """A second forward/backward adds to the leaf gradient until zero_grad."""
    x = parameter([1.0])
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    assert np.allclose(x.grad, [6.0]), f"Got {x.grad}"
    x.zero_grad()
    assert x.grad is None
    print("[PASS] Leaf gradients accumulate")


def test_elementwise_gradients():
    """exp, log, abs, division and power match finite differences."""
    rng = np.random.default_rng(0)
    x0 = rng.uniform(0.5, 2.0, size=(3, 4))
    check_grad(lambda x: ad.exp(x).sum(), x0)
    check_grad(lambda x: ad.log(x).sum(), x0)
    check_grad(lambda x: (1.0 / x).sum(), x0)
    check_grad(lambda x: (x ** 2.5).sum(), x0)
    check_grad(lambda x: ((x - 1.2).abs() * x).sum(), x0)
    print("[PASS] Elementwise gradients")


def test_tensor_exponent_gradient():
    """pow with a learnable exponent: d/dp x^p = x^p ln x."""
    x = np.array([0.5, 1.5, 2.5])
    p = parameter([3.0, 3.0, 3.0])
    (Tensor(x) ** p).sum().backward()
    assert np.allclose(p.grad, x ** 3.0 * np.log(x)), f"Got {p.grad}"
    print("[PASS] Exponent gradient")


def test_matmul_and_linear_gradients():
    """matmul, linear and transpose agree with finite differences."""
    rng = np.random.default_rng(1)
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)
    x0 = rng.standard_normal((2, 5, 4))
    check_grad(lambda x: ad.linear(x, Tensor(w), Tensor(b)).sum(), x0)
    a = rng.standard_normal((2, 3, 4))
    check_grad(lambda x: (ad.matmul(Tensor(a), x.transpose(0, 2, 1)) ** 2).sum(),
               rng.standard_normal((2, 3, 4)))
    check_grad(lambda x: (ad.linear(Tensor(x0), x, Tensor(b)) ** 2).sum(), w.copy())
    print("[PASS] Matrix product gradients")


def test_softmax_layer_norm_gelu_gradients():
    """Non-linear primitives match finite differences."""
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((3, 6))
    weights = Tensor(rng.standard_normal((3, 6)))
    check_grad(lambda x: (ad.softmax(x) * weights).sum(), x0)
    check_grad(lambda x: (ad.log_softmax(x) * weights).sum(), x0)
    check_grad(lambda x: (ad.gelu(x) * weights).sum(), x0)
    gain, bias = Tensor(rng.uniform(0.5, 1.5, 6)), Tensor(rng.standard_normal(6))
    check_grad(lambda x: (ad.layer_norm(x, gain, bias) * weights).sum(), x0)
    print("[PASS] Softmax, layer norm and GELU gradients")


def test_shape_ops_gradients():
    """Reshape, slicing, concatenation and broadcast_to route gradients correctly."""
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((2, 3, 4))
    weights = rng.standard_normal((2, 5, 4))

    def build(x):
        head = ad.broadcast_to(x[:, 0, :].reshape(2, 1, 4), (2, 2, 4))
        joined = ad.concat([head, x], axis=1)
        return (joined * Tensor(weights)).sum()

    check_grad(build, x0)
    check_grad(lambda x: (x.mean(axis=-1) ** 2).sum(), x0)
    print("[PASS] Shape operation gradients")


def test_log_softmax_is_stable():
    """Large logits do not overflow."""
    out = ad.log_softmax(Tensor([[1000.0, 0.0, -1000.0]]))
    assert np.all(np.isfinite(out.data)), f"Got {out.data}"
    assert abs(out.data[0, 0]) < 1e-12
    print("[PASS] Stable log-softmax")


def test_mismatched_shapes_rejected():
    """Implicit broadcasting between different non-scalar shapes is an error."""
    with pytest.raises(DimensionError) as exc:
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3,)))
    assert "(2, 3)" in str(exc.value) and "(3,)" in str(exc.value)
    print("[PASS] Shape mismatch raises")


def test_domain_errors():
    """log of non-positive values and a negative base with a learnable exponent fail."""
    with pytest.raises(NumericDomainError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(NumericDomainError):
        Tensor([-1.0]) ** parameter([2.0])
    with pytest.raises(NumericDomainError):
        Tensor([1.0]) / Tensor([0.0])
    print("[PASS] Domain errors")


def test_gelu_is_tanh_form():
    """GELU uses the tanh approximation, measurably apart from the erf form at x=1."""
    x = np.array([-2.0, -1.0, 0.0, 0.5, 1.0, 3.0])
    expected = 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))
    assert np.allclose(ad.gelu(Tensor(x)).data, expected, atol=1e-15)
    at_one = ad.gelu(Tensor(np.array([1.0]))).data[0]
    assert abs(at_one - 0.841192) < 1e-6, at_one
    assert abs(at_one - 0.8413447460685429) > 1e-4
    print("[PASS] GELU tanh form")


def test_backward_twice_raises():
    """A graph can be differentiated once."""
    x = parameter([1.0, 2.0])
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(AutodiffUsageError):
        loss.backward()
    print("[PASS] Second backward raises")


def test_backward_needs_scalar():
    x = parameter([1.0, 2.0])
    with pytest.raises(AutodiffUsageError):
        (x * 2.0).backward()
    print("[PASS] Non-scalar backward raises")


def test_no_grad_records_nothing():
    """Operations inside no_grad produce tensors without a graph."""
    x = parameter([1.0, 2.0])
    with ad.no_grad():
        y = (x * x).sum()
    assert not y.requires_grad
    print("[PASS] no_grad")


def test_dropout():
    """Inverted dropout keeps the expected value and is the identity in eval mode."""
    x = Tensor(np.ones(10000))
    rng = np.random.default_rng(0)
    out = ad.dropout(x, 0.1, rng, train_mode=True)
    assert abs(out.data.mean() - 1.0) < 0.03, f"Got mean {out.data.mean()}"
    assert ad.dropout(x, 0.1, None, train_mode=False) is x
    print("[PASS] Dropout")


def test_debug_checks_catch_non_finite():
    ad.set_debug_checks(True)
    try:
        with pytest.raises(NumericDomainError):
            ad.exp(Tensor([1000.0]))
    finally:
        ad.set_debug_checks(False)
    print("[PASS] Debug finiteness checks")


def run_all_tests():
    """Run all tests."""
    print("Testing autodiff engine...\n")

    test_quadratic_gradient()
    test_shared_node_accumulates()
    test_leaf_grads_accumulate_across_backward_calls()
    test_elementwise_gradients()
    test_tensor_exponent_gradient()
    test_matmul_and_linear_gradients()
    test_softmax_layer_norm_gelu_gradients()
    test_gelu_is_tanh_form()
    test_shape_ops_gradients()
    test_log_softmax_is_stable()
    test_mismatched_shapes_rejected()
    test_domain_errors()
    test_backward_twice_raises()
    test_backward_needs_scalar()
    test_no_grad_records_nothing()
    test_dropout()
    test_debug_checks_catch_non_finite()

    print("\n" + "=" * 50)
    print("All autodiff tests passed!")
    print("=" * 50)


if __name__ == '__main__':
    run_all_tests()
