"""Exact attention masks: a symmetry of the grid as one step of attention.

Run: python demos/01_exact_masks.py
"""

import numpy as np
import torch

from latformer import Reflect, Rotate90, Translate, apply_action, mask_for_action, masked_self_attention
from latformer.masks import convolve_identity, kernels_for_shift, mask_via_fourier, shift_vector

shape = (4, 4)
grid = np.arange(16.0).reshape(shape)
print("input grid\n", grid)

# A mask has one 1 per row, so masked attention copies exactly one cell per
# query whatever the scores are, and reproduces the action.
for action in (Translate((1, 2)), Rotate90(), Reflect(diagonal=True)):
    m = mask_for_action(action, shape)
    x = torch.as_tensor(grid.reshape(1, 16, 1))
    out = masked_self_attention(x, torch.as_tensor(m)).numpy().reshape(shape)
    print(f"\n{action}: one-hot rows {bool((m.sum(1) == 1).all())}, "
          f"matches apply_action {np.array_equal(out, apply_action(action, grid))}")
    print(out)

# The same mask three ways: from the offset vector, through the DFT, and as
# per-row convolution kernels applied to the identity.
o = shift_vector(Rotate90(), shape)
print("\nrotation offsets per row:", o)
a = mask_for_action(Rotate90(), shape)
b = mask_via_fourier(o)
c = convolve_identity(kernels_for_shift(o))
print("three routes agree:", np.array_equal(a, b) and np.array_equal(a, c))
