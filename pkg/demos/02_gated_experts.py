"""Gated mask experts: binary gates pick a group element, soft gates blend them.

Run: python demos/02_gated_experts.py
"""

import itertools

import numpy as np

from latformer import ExpertStack, Translate, expert_forward, mask_for_action

# A translation stack of L layers composes shifts by 1, 2, 4, ... so the
# 2^L gate settings reach every shift below 2^L exactly once.
n, L = 8, 3
stack = ExpertStack("translate", layers=L)
for bits in itertools.product((0.0, 1.0), repeat=L):
    m = expert_forward(stack, np.array(bits), n)
    shift = next(d for d in range(n) if np.array_equal(m, mask_for_action(Translate((d,)), n)))
    print(f"gates {bits} -> shift {shift}")

# Between 0 and 1 the mask is a convex blend: rows still sum to one.
soft = expert_forward(stack, np.array([0.5, 0.0, 0.0]), n)
print("\nsoft gate 0.5 on the first layer, row 0:", soft[0])
print("row sums:", soft.sum(1))

# On a grid, one gate set per axis; the masks combine by Kronecker product.
grid_mask = expert_forward(stack, np.array([1.0, 0, 0, 0, 1.0, 0]), (8, 8))
print("\n2-D gates (1,0,0 | 0,1,0) equal Translate((1, 2)):",
      np.array_equal(grid_mask, mask_for_action(Translate((1, 2)), (8, 8))))
