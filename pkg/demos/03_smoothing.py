"""Smoothing a distribution over group elements by graph diffusion.

Run: python demos/03_smoothing.py
"""

import numpy as np

from latformer import group_graph, heat_smooth

# The four rotations form a cycle. Mass placed on one of them spreads to its
# neighbours each step and tends to uniform, and the total never changes.
g = group_graph("rotate")
w = np.array([1.0, 0.0, 0.0, 0.0])
for step in range(0, 21, 4):
    sm = heat_smooth(w, g, steps=step, lam=0.5) if step else w
    print(f"step {step:2d}: {np.round(sm, 4)}  total {sm.sum():.12f}")

# Training uses a couple of steps only: a wrong rotation gets a little credit
# from its neighbours, which keeps the gate gradients alive early on.
print("\ntwo steps from 90 degrees:", np.round(heat_smooth(np.array([0, 1.0, 0, 0]), g, 2, 0.5), 4))
