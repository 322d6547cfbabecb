"""Scaled dot-product attention with a post-softmax multiplicative mask.

The weights are ``A = softmax(Q K^T / sqrt(d)) * M``, renormalised to sum
to one per row before multiplying the values. Inputs may be numpy arrays
(computed in float64 and returned as numpy) or torch tensors (kept on the
autograd graph). Leading batch axes are supported.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .errors import DegenerateRow

__all__ = ["softmax_rows", "masked_attention", "masked_attention_from_scores", "masked_self_attention"]

DEGENERATE_EPS = 1e-12


def _to_torch(*arrays):
    numpy_in = any(isinstance(a, np.ndarray) or not torch.is_tensor(a) for a in arrays)
    if numpy_in:
        return True, [torch.as_tensor(np.asarray(a, dtype=np.float64)) for a in arrays]
    return False, list(arrays)


def softmax_rows(m):
    """Row-wise softmax with max subtraction."""
    numpy_in, (t,) = _to_torch(m)
    t = t - t.amax(dim=-1, keepdim=True).detach()
    e = torch.exp(t)
    out = e / e.sum(dim=-1, keepdim=True)
    return out.numpy() if numpy_in else out


def masked_attention_from_scores(scores, mask, v):
    """Masked attention given precomputed ``Q K^T / sqrt(d)`` scores.

    Exponentials are taken relative to the row maximum over the mask
    support. The shift cancels in the renormalisation, so the result equals
    ``(softmax(S) * M) / rowsum(softmax(S) * M) @ V`` while a row whose
    support scores far below the global row maximum cannot underflow.

    Raises
    ------
    DegenerateRow
        If a mask row sums below 1e-12, i.e. the row attends nowhere.
    """
    row_mass = mask.sum(dim=-1)
    if bool((row_mass < DEGENERATE_EPS).any()):
        bad = torch.nonzero(row_mass < DEGENERATE_EPS)[0].tolist()
        raise DegenerateRow(f"mask row {bad} has zero total weight")
    support_max = scores.masked_fill(mask <= 0, float("-inf")).amax(dim=-1, keepdim=True).detach()
    # entries off the support may sit far above support_max; clamp them before exp
    a = torch.exp((scores - support_max).clamp(max=0.0)) * mask
    a = a / a.sum(dim=-1, keepdim=True)
    return a @ v


def masked_attention(q, k, v, mask):
    """``MaskedAttention(Q, K, V; M)`` for single-head attention.

    Parameters
    ----------
    q : (..., n_q, d)
    k : (..., n_k, d)
    v : (..., n_k, d_v)
    mask : (..., n_q, n_k), entries in [0, 1]
    """
    numpy_in, (q, k, v, mask) = _to_torch(q, k, v, mask)
    d = q.shape[-1]
    if k.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"incompatible q/k/v shapes {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    if mask.shape[-2:] != (q.shape[-2], k.shape[-2]):
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match ({q.shape[-2]}, {k.shape[-2]})")
    scores = q @ k.transpose(-1, -2) / math.sqrt(d)
    out = masked_attention_from_scores(scores, mask, v)
    return out.numpy() if numpy_in else out


def masked_self_attention(x, mask):
    """``MaskedAttention(X; M)`` with query, key and value all equal to ``x``."""
    return masked_attention(x, x, x, mask)
