"""Heat diffusion over graphs of lattice-group elements, and the dual loss.

Each expert family induces a distribution over the group elements it can
express. Smoothing diffuses that distribution along the graph whose edges
join elements one primitive action apart, and the smoothed mask is the
matching convex combination of element masks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .lattice import as_shape

__all__ = ["GroupGraph", "group_graph", "diffusion_matrix", "heat_smooth", "smoothed_mask", "dual_loss"]


@dataclass(frozen=True)
class GroupGraph:
    """Undirected simple graph over the elements of one action family."""

    family: str
    nodes: tuple
    adjacency: np.ndarray

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def is_connected(self) -> bool:
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(self.adjacency[i]):
                if j not in seen:
                    seen.add(int(j))
                    frontier.append(int(j))
        return len(seen) == len(self.nodes)


def _cartesian_cycles(dims):
    nodes = list(np.ndindex(*dims))
    index = {node: i for i, node in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)), dtype=np.int64)
    for i, node in enumerate(nodes):
        for axis, l in enumerate(dims):
            for step in (-1, 1):
                nb = list(node)
                nb[axis] = (nb[axis] + step) % l
                j = index[tuple(nb)]
                if j != i:
                    adj[i, j] = adj[j, i] = 1
    return tuple(nodes), adj


def group_graph(family: str, shape=None, factors=None) -> GroupGraph:
    """Graph of group elements for ``family``.

    ``translate``
        torus over all shift vectors of ``shape`` (one cycle per axis)
    ``rotate``
        4-cycle of quarter turns
    ``reflect``
        hypercube over per-axis flip flags (a 4-cycle id-h-hv-v in 2-D);
        ``shape`` only sets the number of axes (default 2)
    ``scale``
        path over the sorted distinct ``factors``
    """
    if family == "translate":
        nodes, adj = _cartesian_cycles(as_shape(shape).dims)
    elif family == "rotate":
        nodes, adj = _cartesian_cycles((4,))
        nodes = tuple(q for (q,) in nodes)
    elif family == "reflect":
        m = 2 if shape is None else as_shape(shape).ndim
        nodes = tuple(itertools.product((0, 1), repeat=m))
        adj = np.array([[int(sum(a != b for a, b in zip(u, v)) == 1) for v in nodes] for u in nodes])
    elif family == "scale":
        nodes = tuple(sorted(set(int(f) for f in factors)))
        adj = np.zeros((len(nodes), len(nodes)), dtype=np.int64)
        for i in range(len(nodes) - 1):
            adj[i, i + 1] = adj[i + 1, i] = 1
    else:
        raise ValueError(f"unknown family {family!r}")
    return GroupGraph(family, nodes, np.asarray(adj, dtype=np.int64))


def diffusion_matrix(graph: GroupGraph, lam: float = 0.5) -> np.ndarray:
    """One averaging step ``w <- (1 - lam) w + lam * A D^-1 w`` as a matrix.

    On regular graphs this is the plain average over neighbours. The
    column-stochastic form keeps total mass on irregular graphs (paths);
    isolated nodes keep their mass.
    """
    adj = graph.adjacency.astype(float)
    deg = adj.sum(axis=0)
    walk = np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)
    walk[:, deg == 0] = np.eye(len(deg))[:, deg == 0]
    return (1 - lam) * np.eye(len(deg)) + lam * walk


def heat_smooth(weights, graph: GroupGraph, steps: int = 2, lam: float = 0.5):
    """Diffuse a distribution over ``graph`` for ``steps`` averaging steps.

    ``weights`` has the node axis last; leading axes are batch axes. Numpy
    inputs are validated as distributions, torch inputs are not (they are
    batched gate-induced weights inside the model).
    """
    P = diffusion_matrix(graph, lam)
    if torch.is_tensor(weights):
        Pt = torch.as_tensor(P.T, dtype=weights.dtype, device=weights.device)
        w = weights
        for _ in range(steps):
            w = w @ Pt
        return w
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.allclose(w.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError("weights must be a nonnegative distribution summing to 1")
    for _ in range(steps):
        w = w @ P.T
    return w


def smoothed_mask(weights, masks):
    """Convex combination ``sum_g w_g M_g`` of element masks (``masks``: G x n x n)."""
    if torch.is_tensor(weights):
        return torch.einsum("...g,gij->...ij", weights, torch.as_tensor(masks, dtype=weights.dtype))
    return np.tensordot(np.asarray(weights), np.asarray(masks), axes=(-1, 0))


def dual_loss(logits_plain, logits_smooth, target):
    """Mean cross-entropy of the plain head plus that of the smoothed head.

    Logits have shape ``(..., cells, colors)`` and ``target`` ``(..., cells)``.
    Numpy inputs return a float; torch inputs return a differentiable scalar.
    """
    numpy_in = not torch.is_tensor(logits_plain)
    lp = torch.as_tensor(np.asarray(logits_plain, dtype=np.float64)) if numpy_in else logits_plain
    ls = torch.as_tensor(np.asarray(logits_smooth, dtype=np.float64)) if numpy_in else logits_smooth
    t = torch.as_tensor(np.asarray(target)) if numpy_in else target
    if lp.shape != ls.shape or lp.shape[:-1] != t.shape:
        raise ValueError(f"shape mismatch: plain {tuple(lp.shape)}, smooth {tuple(ls.shape)}, target {tuple(t.shape)}")
    c = lp.shape[-1]
    t = t.reshape(-1).long()
    loss = F.cross_entropy(lp.reshape(-1, c), t) + F.cross_entropy(ls.reshape(-1, c), t)
    return float(loss) if numpy_in else loss
