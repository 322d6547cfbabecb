import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from latformer.attention import masked_attention, masked_self_attention, softmax_rows
from latformer.errors import DegenerateRow
from latformer.lattice import Reflect, Translate, apply_action
from latformer.masks import mask_for_action


def test_softmax_examples():
    assert np.allclose(softmax_rows(np.array([[0.0, 0.0]])), [[0.5, 0.5]])
    assert np.allclose(softmax_rows(np.array([[1000.0, 1000.0, 1000.0]])), [[1 / 3] * 3])
    assert np.allclose(softmax_rows(np.array([[np.log(1.0), np.log(3.0)]])), [[0.25, 0.75]])


def test_all_ones_mask_is_plain_attention(rng):
    q, k, v = rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    plain = softmax_rows(q @ k.T / np.sqrt(3)) @ v
    assert np.allclose(masked_attention(q, k, v, np.ones((4, 5))), plain)


def test_binary_mask_selects_values(rng):
    x = rng.normal(size=(6, 4)) * 30
    m = mask_for_action(Translate((2,)), 6)
    assert np.allclose(masked_self_attention(x, m), m @ x, atol=1e-12)


def test_zero_mask_row_is_degenerate():
    m = np.eye(3)
    m[1] = 0
    with pytest.raises(DegenerateRow):
        masked_self_attention(np.eye(3), m)


def test_self_attention_translation_of_identity():
    out = masked_self_attention(np.eye(3), mask_for_action(Translate((1,)), 3))
    assert np.allclose(out, apply_action(Translate((1,)), np.eye(3), ndim=1))


def test_identity_mask_returns_input(rng):
    x = rng.normal(size=(5, 3))
    assert np.allclose(masked_self_attention(x, np.eye(5)), x)


def test_reflection_reverses_rows(rng):
    x = rng.normal(size=(5, 4))
    assert np.allclose(masked_self_attention(x, mask_for_action(Reflect((True,)), 5)), x[::-1])


def test_shape_errors(rng):
    with pytest.raises(ValueError):
        masked_attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        masked_attention(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 2)))


def test_torch_inputs_keep_gradients(rng):
    x = torch.tensor(rng.normal(size=(4, 3)), requires_grad=True)
    m = torch.full((4, 4), 0.5, dtype=torch.float64)
    masked_self_attention(x, m).sum().backward()
    assert x.grad is not None and torch.isfinite(x.grad).all()


def test_far_below_max_support_does_not_underflow():
    # the only allowed key scores ~ -2000 below the row maximum
    q = np.array([[40.0, 0.0]])
    k = np.array([[40.0, 0.0], [-40.0, 0.0]])
    v = np.array([[1.0], [7.0]])
    out = masked_attention(q, k, v, np.array([[0.0, 1.0]]))
    assert np.allclose(out, [[7.0]])


@given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_row_scaling_invariance(n, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, 3))
    m = r.uniform(0.05, 1.0, size=(n, n))
    scale = r.uniform(0.1, 10.0, size=(n, 1))
    assert np.allclose(masked_self_attention(x, m), masked_self_attention(x, m * scale))


@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_softmax_permutation_equivariance(n, seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(n, n)) * 5
    p = np.eye(n)[r.permutation(n)]
    assert np.allclose(softmax_rows(p @ a @ p.T), p @ softmax_rows(a) @ p.T)


@given(st.integers(1, 7), st.integers(0, 2 ** 32 - 1))
def test_selection_exactness_for_any_one_hot_mask(n, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, 3)) * 10
    m = np.eye(n)[r.integers(0, n, size=n)]
    assert np.allclose(masked_self_attention(x, m), m @ x, atol=1e-12)
