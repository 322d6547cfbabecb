"""Gated convolutional mask experts.

Every expert starts from the identity and runs the gated recurrence

    M_{l+1} = alpha_l * Conv(M_l, K_l) + (1 - alpha_l) * M_l

with frozen kernels ``K_l`` taken from :func:`latformer.masks.conv_kernels_for`;
only the gates ``alpha_l`` are learned. ``Conv(M, K)`` is the layer's action
applied to ``M``, i.e. the product of ``M`` with the identity convolved by
``K``.

Two evaluations of the same experts live here:

* :func:`expert_forward` runs the recurrence literally on dense masks. It is
  the reference, and fine for small lattices.
* :class:`ExpertMixture` uses the fact that every layer mask is an exact
  action, so the recurrence yields a distribution over group elements. The
  mask is then a weighted scatter of element index maps, which is what the
  model uses on 30 x 30 grids. The same distributions are what mask
  smoothing diffuses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidShape
from .lattice import Identity, Reflect, Rotate90, Scale, Translate, as_shape
from .masks import DEFAULT_SCALE_FACTORS, conv_kernels_for, convolve_identity, index_map
from .smoothing import diffusion_matrix, group_graph

__all__ = [
    "FAMILIES",
    "ExpertStack",
    "expert_forward",
    "gate_network",
    "GateNetwork",
    "discretize_gates",
    "product_of_experts",
    "ExpertMixture",
    "joint_index",
    "mixture_mask",
]

# canonical order of experts in a product
FAMILIES = ("translate", "rotate", "reflect", "scale")


@dataclass(frozen=True)
class ExpertStack:
    """Configuration of one expert family.

    ``layers`` is the number of gated layers per axis for translation (layer
    ``l`` shifts by ``2**l``) and the chain length for rotation. Reflection
    always has one layer per axis. Scaling has one layer per entry of
    ``factors`` on every axis, plus a final transpose gate that selects
    between up- and down-scaling.
    """

    family: str
    layers: int | None = None
    factors: tuple = DEFAULT_SCALE_FACTORS

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown expert family {self.family!r}")
        if self.layers is None:
            object.__setattr__(self, "layers", {"translate": 5, "rotate": 3}.get(self.family, 1))
        object.__setattr__(self, "factors", tuple(int(f) for f in self.factors))

    def check_shape(self, shape):
        shape = as_shape(shape)
        if self.family == "rotate" and (shape.ndim != 2 or shape.dims[0] != shape.dims[1]):
            raise InvalidShape(f"rotation expert needs a square 2-D lattice, got {shape.dims}")
        return shape

    def n_gates(self, shape) -> int:
        shape = self.check_shape(shape)
        if self.family == "translate":
            return self.layers * shape.ndim
        if self.family == "rotate":
            return self.layers
        if self.family == "reflect":
            return shape.ndim
        return len(self.factors) * shape.ndim + 1


# ---------------------------------------------------------------------------
# reference recurrence on dense masks
# ---------------------------------------------------------------------------


def _const(m, like):
    return torch.as_tensor(m, dtype=like.dtype, device=like.device)


def _chain(gates, layer_masks, n, like):
    """Run the gated recurrence from the identity; gates: (..., L)."""
    eye = torch.eye(n, dtype=like.dtype, device=like.device)
    m = eye.expand(*gates.shape[:-1], n, n)
    for l, g in enumerate(layer_masks):
        a = gates[..., l, None, None]
        m = a * (_const(g, like) @ m) + (1 - a) * m
    return m


def _batched_kron(a, b):
    *batch, p, _ = a.shape
    q = b.shape[-1]
    return torch.einsum("...ik,...jl->...ijkl", a, b).reshape(*batch, p * q, p * q)


def _kron_all(ms):
    out = ms[0]
    for m in ms[1:]:
        out = _batched_kron(out, m)
    return out


def _layer_mask(family, level, shape, **kw):
    return convolve_identity(conv_kernels_for(family, level, shape, **kw))


def expert_forward(stack: ExpertStack, gates, shape):
    """Mask produced by an expert stack for the given gate values.

    Parameters
    ----------
    stack : ExpertStack
    gates : array_like or Tensor, shape (..., stack.n_gates(shape))
    shape : lattice shape

    Returns
    -------
    Tensor (or ndarray for non-tensor gates) of shape (..., n, n).
    """
    shape = stack.check_shape(shape)
    numpy_in = not torch.is_tensor(gates)
    g = torch.as_tensor(np.asarray(gates, dtype=np.float64)) if numpy_in else gates
    if g.shape[-1] != stack.n_gates(shape):
        raise ValueError(f"{stack.family} expert expects {stack.n_gates(shape)} gates, got {g.shape[-1]}")

    if stack.family == "rotate":
        layer = _layer_mask("rotate", 0, shape)
        out = _chain(g, [layer] * stack.layers, shape.n, g)
    elif stack.family == "translate":
        per_axis = []
        for axis, l in enumerate(shape.dims):
            layers = [_layer_mask("translate", lvl, l) for lvl in range(stack.layers)]
            per_axis.append(_chain(g[..., axis * stack.layers:(axis + 1) * stack.layers], layers, l, g))
        out = _kron_all(per_axis)
    elif stack.family == "reflect":
        per_axis = [_chain(g[..., axis:axis + 1], [_layer_mask("reflect", 0, l)], l, g)
                    for axis, l in enumerate(shape.dims)]
        out = _kron_all(per_axis)
    else:
        nf = len(stack.factors)
        up, down = [], []
        for axis, l in enumerate(shape.dims):
            ga = g[..., axis * nf:(axis + 1) * nf]
            kw = dict(factors=stack.factors)
            up.append(_chain(ga, [_layer_mask("scale", i, l, direction="up", **kw) for i in range(nf)], l, g))
            down.append(_chain(ga, [_layer_mask("scale", i, l, direction="down", **kw) for i in range(nf)], l, g))
        sigma = g[..., -1, None, None]
        out = sigma * _kron_all(up) + (1 - sigma) * _kron_all(down)
    return out.numpy() if numpy_in else out


def product_of_experts(masks):
    """Left-to-right matrix product of masks, clamped entrywise to [0, 1]."""
    masks = list(masks)
    if not masks:
        raise ValueError("need at least one mask")
    numpy_in = not torch.is_tensor(masks[0])
    ms = [torch.as_tensor(np.asarray(m, dtype=np.float64)) if numpy_in else m for m in masks]
    out = ms[0]
    for m in ms[1:]:
        if out.shape[-1] != m.shape[-2]:
            raise ValueError(f"cannot multiply masks of shapes {tuple(out.shape)} and {tuple(m.shape)}")
        out = out @ m
    out = out.clamp(0.0, 1.0)
    return out.numpy() if numpy_in else out


def discretize_gates(gates):
    """Threshold gates at 0.5; a tie goes to 1."""
    if torch.is_tensor(gates):
        return (gates >= 0.5).to(gates.dtype)
    return (np.asarray(gates) >= 0.5).astype(float)


# ---------------------------------------------------------------------------
# gate network
# ---------------------------------------------------------------------------


def gate_network(features, params):
    """``sigmoid(W2 gelu(W1 f + b1) + b2)`` for pooled grid features ``f``.

    ``params`` maps ``w1`` (d, hidden), ``b1``, ``w2`` (hidden, n_gates)
    and ``b2`` to arrays or tensors.
    """
    numpy_in = not torch.is_tensor(features)
    if numpy_in:
        features = torch.as_tensor(np.asarray(features, dtype=np.float64))
        params = {k: torch.as_tensor(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    h = F.gelu(features @ params["w1"] + params["b1"])
    out = torch.sigmoid(h @ params["w2"] + params["b2"])
    return out.numpy() if numpy_in else out


class GateNetwork(nn.Module):
    """One-hidden-layer gate network with parameters ``w1, b1, w2, b2``."""

    def __init__(self, d_in: int, n_gates: int, hidden: int = 64, rng=None, bias=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w1 = nn.Parameter(torch.as_tensor(rng.normal(0, 1 / math.sqrt(d_in), (d_in, hidden))))
        self.b1 = nn.Parameter(torch.zeros(hidden, dtype=torch.float64))
        self.w2 = nn.Parameter(torch.as_tensor(rng.normal(0, 0.01, (hidden, n_gates))))
        b2 = np.zeros(n_gates) if bias is None else np.asarray(bias, dtype=float)
        self.b2 = nn.Parameter(torch.as_tensor(b2))

    def forward(self, features):
        return gate_network(features, {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2})


# ---------------------------------------------------------------------------
# structured evaluation: distributions over group elements
# ---------------------------------------------------------------------------


def _subset_products(factors):
    values = {1}
    for f in factors:
        values |= {v * f for v in values}
    return tuple(sorted(values))


@dataclass(eq=False)
class ExpertMixture:
    """An expert stack evaluated as a distribution over its group elements.

    ``weights(gates)`` returns a ``(..., G)`` distribution and ``index`` a
    ``(G, n)`` table whose row ``g`` lists the column attended by each mask
    row under element ``g``. Gate layout matches :func:`expert_forward`.
    """

    stack: ExpertStack
    shape: object
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.shape = self.stack.check_shape(self.shape)

    @property
    def family(self):
        return self.stack.family

    @property
    def n_gates(self):
        return self.stack.n_gates(self.shape)

    # element tables ---------------------------------------------------------

    @cached_property
    def elements(self) -> tuple:
        dims = self.shape.dims
        if self.family == "translate":
            return tuple(np.ndindex(*dims))
        if self.family == "rotate":
            return (0, 1, 2, 3)
        if self.family == "reflect":
            return tuple(itertools.product((0, 1), repeat=len(dims)))
        vals = self.scale_values
        return tuple((d,) + fs for d in ("up", "down") for fs in itertools.product(vals, repeat=len(dims)))

    @cached_property
    def scale_values(self) -> tuple:
        return _subset_products(self.stack.factors)

    def element_action(self, e):
        if self.family == "translate":
            return Translate(e)
        if self.family == "rotate":
            return Rotate90(e) if e else Identity()
        if self.family == "reflect":
            return Reflect(tuple(bool(v) for v in e))
        direction, *fs = e
        return Identity() if all(f == 1 for f in fs) else Scale(tuple(fs), direction)

    @cached_property
    def index(self) -> np.ndarray:
        if self.family == "translate":
            dims = self.shape.dims
            # row k attends k - delta on every axis
            coords = np.stack(np.unravel_index(np.arange(self.shape.n), dims))
            rows = []
            for e in self.elements:
                shifted = tuple((coords[a] - e[a]) % dims[a] for a in range(len(dims)))
                rows.append(np.ravel_multi_index(shifted, dims))
            return np.stack(rows)
        return np.stack([index_map(self.element_action(e), self.shape) for e in self.elements])

    # distributions --------------------------------------------------------------

    def _translate_axis(self, gates, axis):
        l = self.shape.dims[axis]
        L = self.stack.layers
        w = torch.zeros(*gates.shape[:-1], l, dtype=gates.dtype, device=gates.device)
        w[..., 0] = 1.0
        for lvl in range(L):
            a = gates[..., axis * L + lvl, None]
            w = a * torch.roll(w, (2 ** lvl) % l, dims=-1) + (1 - a) * w
        return w

    def _scale_axis(self, gates, axis):
        vals = self.scale_values
        pos = {v: i for i, v in enumerate(vals)}
        nf = len(self.stack.factors)
        w = torch.zeros(*gates.shape[:-1], len(vals), dtype=gates.dtype, device=gates.device)
        w[..., 0] = 1.0
        for i, f in enumerate(self.stack.factors):
            move = np.zeros((len(vals), len(vals)))
            for v in vals:
                if v * f in pos:
                    move[pos[v], pos[v * f]] = 1.0
            a = gates[..., axis * nf + i, None]
            w = a * (w @ _const(move, gates)) + (1 - a) * w
        return w

    @staticmethod
    def _outer(ws):
        out = ws[0]
        for w in ws[1:]:
            out = (out[..., :, None] * w[..., None, :]).flatten(-2)
        return out

    def graph(self):
        key = "graph"
        if key not in self._cache:
            if self.family == "scale":
                self._cache[key] = group_graph("scale", factors=self.scale_values)
            else:
                self._cache[key] = group_graph(self.family, self.shape)
        return self._cache[key]

    def weights(self, gates, smooth=None):
        """Distribution over :attr:`elements` induced by ``gates``.

        ``smooth=(steps, lam)`` diffuses it over the family's group graph.
        Scaling diffuses each axis's factor marginal along its path; the
        up/down choice is left unsmoothed.
        """
        dims = self.shape.dims
        if self.family == "translate":
            w = self._outer([self._translate_axis(gates, a) for a in range(len(dims))])
        elif self.family == "rotate":
            w = torch.zeros(*gates.shape[:-1], 4, dtype=gates.dtype, device=gates.device)
            w[..., 0] = 1.0
            for lvl in range(self.stack.layers):
                a = gates[..., lvl, None]
                w = a * torch.roll(w, 1, dims=-1) + (1 - a) * w
        elif self.family == "reflect":
            w = self._outer([torch.stack([1 - gates[..., a], gates[..., a]], dim=-1) for a in range(len(dims))])
        else:
            marg = [self._scale_axis(gates, a) for a in range(len(dims))]
            if smooth is not None:
                marg = [self._smooth(m, *smooth) for m in marg]
            sigma = gates[..., -1, None]
            joint = self._outer(marg)
            return torch.cat([sigma * joint, (1 - sigma) * joint], dim=-1)
        if smooth is not None:
            w = self._smooth(w, *smooth)
        return w

    def _smooth(self, w, steps, lam):
        key = ("smooth", steps, lam, w.dtype)
        if key not in self._cache:
            P = np.linalg.matrix_power(diffusion_matrix(self.graph(), lam), steps)
            self._cache[key] = torch.as_tensor(P.T, dtype=w.dtype)
        return w @ self._cache[key]

    def dense(self, gates, smooth=None):
        return mixture_mask(self.weights(gates, smooth), torch.as_tensor(self.index))


def joint_index(mixtures) -> np.ndarray:
    """Index table of the product ``M_1 @ M_2 @ ...`` over element tuples.

    Row ``k`` of ``M_a @ M_b`` attends ``pi_b(pi_a(k))``.
    """
    joint = mixtures[0].index
    for mix in mixtures[1:]:
        nxt = mix.index
        joint = np.transpose(nxt[:, joint], (1, 0, 2)).reshape(-1, joint.shape[-1])
    return joint


def joint_weights(weights):
    return ExpertMixture._outer(list(weights))


def mixture_mask(weights, index):
    """Dense ``sum_g w_g P_g`` for element index maps ``index`` (G, n)."""
    index = torch.as_tensor(index, device=weights.device)
    G, n = index.shape
    batch = weights.shape[:-1]
    w = weights.reshape(-1, G)
    flat = (torch.arange(n, device=weights.device) * n + index).reshape(1, -1)
    src = w[:, :, None].expand(w.shape[0], G, n).reshape(w.shape[0], -1)
    out = torch.zeros(w.shape[0], n * n, dtype=weights.dtype, device=weights.device)
    out = out.scatter_add(1, flat.expand(w.shape[0], -1), src)
    return out.reshape(*batch, n, n)
