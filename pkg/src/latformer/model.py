"""Single-layer LatFormer and its unmasked-attention baseline.

One encoder layer over a flattened grid::

    x    = (1 - w) onehot(grid) @ W + w * 1 @ W        (noisy colour embedding)
    h    = x + P                                        (learned positions)
    a    = MaskedAttention(h Wq, h Wk, h Wv; M)
    out  = a @ W^T + FFN(a)                             (tied colour read-out)

``M`` is the product of the configured mask experts; the baseline uses the
all-ones mask through the same code path. Every parameter is a float64 or
float32 torch tensor, and gradients come from torch autograd.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import NonFinite
from .experts import FAMILIES, ExpertMixture, ExpertStack, GateNetwork, discretize_gates, joint_index, \
    joint_weights, mixture_mask, product_of_experts
from .attention import masked_attention_from_scores
from .lattice import as_shape
from .masks import DEFAULT_SCALE_FACTORS
from .smoothing import dual_loss

__all__ = ["VARIANTS", "CATEGORY_EXPERTS", "ModelConfig", "LatFormer", "batch_loss", "loss_and_grads", "predict"]

VARIANTS = ("latformer", "latformer_nosmooth", "attention_baseline")

# experts used for each task category; diagonal reflections need a rotation
CATEGORY_EXPERTS = {
    "translate": ("translate",),
    "rotate": ("rotate",),
    "reflect": ("rotate", "reflect"),
    "scale": ("scale",),
}

# above this many (element, row) pairs the joint index table is not built
JOINT_LIMIT = 2_000_000


@dataclass
class ModelConfig:
    shape: tuple = (30, 30)
    n_colors: int = 10
    d: int = 32
    ffn_hidden: int = 128
    gate_hidden: int = 64
    experts: tuple = ("translate",)
    variant: str = "latformer"
    smooth_steps: int = 2
    smooth_lam: float = 0.5
    translate_layers: int = 5
    rotate_layers: int = 3
    scale_factors: tuple = DEFAULT_SCALE_FACTORS
    embed_scale: float = 2.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.experts = tuple(self.experts)
        self.scale_factors = tuple(int(f) for f in self.scale_factors)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        unknown = set(self.experts) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown expert families {sorted(unknown)}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def masked(self) -> bool:
        return self.variant != "attention_baseline"

    @property
    def smoothed(self) -> bool:
        return self.variant == "latformer"

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)


def _orthonormal_rows(rng, rows, cols):
    q, _ = np.linalg.qr(rng.normal(size=(max(rows, cols), max(rows, cols))))
    return q[:rows, :cols]


class LatFormer(nn.Module):
    """Embedding, one masked attention layer, and a per-cell colour read-out."""

    def __init__(self, config: ModelConfig | None = None, **overrides):
        super().__init__()
        config = config if config is not None else ModelConfig(**overrides)
        self.config = config
        c = config
        rng = np.random.Generator(np.random.Philox(c.seed))
        n = as_shape(c.shape).n
        self.n = n

        self.embed = nn.Parameter(torch.as_tensor(c.embed_scale * _orthonormal_rows(rng, c.n_colors, c.d)))
        self.pos = nn.Parameter(torch.as_tensor(rng.normal(0, 0.02, (n, c.d))))
        self.wq = nn.Parameter(torch.eye(c.d, dtype=torch.float64))
        self.wk = nn.Parameter(torch.eye(c.d, dtype=torch.float64))
        self.wv = nn.Parameter(torch.eye(c.d, dtype=torch.float64))
        self.ffn_w1 = nn.Parameter(torch.as_tensor(rng.normal(0, 1 / math.sqrt(c.d), (c.d, c.ffn_hidden))))
        self.ffn_b1 = nn.Parameter(torch.zeros(c.ffn_hidden, dtype=torch.float64))
        self.ffn_w2 = nn.Parameter(torch.as_tensor(rng.normal(0, 0.01, (c.ffn_hidden, c.n_colors))))
        self.ffn_b2 = nn.Parameter(torch.zeros(c.n_colors, dtype=torch.float64))

        self.mixtures = {}
        self.gates = nn.ModuleDict()
        if c.masked:
            for family in (f for f in FAMILIES if f in c.experts):
                stack = ExpertStack(family, layers=self._layers(family), factors=c.scale_factors)
                mix = ExpertMixture(stack, c.shape)
                self.mixtures[family] = mix
                self.gates[family] = GateNetwork(c.d, mix.n_gates, c.gate_hidden, rng=rng,
                                                 bias=self._gate_bias(family, mix.n_gates))
        order = list(self.mixtures.values())
        self._joint = None
        if order and math.prod(len(m.elements) for m in order) * n <= JOINT_LIMIT:
            self._joint = torch.as_tensor(joint_index(order))
        self.to(c.torch_dtype)

    def _layers(self, family):
        return {"translate": self.config.translate_layers, "rotate": self.config.rotate_layers}.get(family)

    def _gate_bias(self, family, n_gates):
        # identical chained layers would stay tied under training; spread them
        if family == "rotate":
            return np.linspace(1.0, -1.0, n_gates)
        bias = np.zeros(n_gates)
        if family == "scale":
            factors = self.config.scale_factors
            per_axis = np.zeros(len(factors))
            for f in set(factors):
                idx = [i for i, g in enumerate(factors) if g == f]
                if len(idx) > 1:
                    per_axis[idx] = np.linspace(1.0, -1.0, len(idx))
            bias[:-1] = np.tile(per_axis, len(self.config.shape))
        return bias

    # ------------------------------------------------------------------

    def parameter_groups(self) -> dict:
        """Parameter name -> tensor, with gate networks listed separately."""
        return dict(self.named_parameters())

    def n_params(self, include_gates: bool = True) -> int:
        return sum(p.numel() for name, p in self.named_parameters() if include_gates or not name.startswith("gates."))

    def embed_cells(self, grids, noise: float = 0.0):
        onehot = F.one_hot(grids.long(), self.config.n_colors).to(self.embed.dtype)
        x = onehot @ self.embed
        if noise:
            x = (1 - noise) * x + noise * self.embed.sum(dim=0)
        return x

    def compute_gates(self, x, discrete: bool = False, gates: dict | None = None) -> dict:
        feats = x.mean(dim=-2)
        out = {}
        for family, net in self.gates.items():
            if gates is not None and family in gates:
                g = torch.as_tensor(gates[family], dtype=x.dtype).expand(x.shape[0], -1)
            else:
                g = net(feats)
            out[family] = discretize_gates(g) if discrete else g
        return out

    def build_mask(self, gates: dict, smooth: bool = False):
        """Product-of-experts mask for a batch of gate vectors, or None when unmasked."""
        if not self.mixtures:
            return None
        c = self.config
        opts = (c.smooth_steps, c.smooth_lam) if smooth else None
        weights = [mix.weights(gates[f], opts) for f, mix in self.mixtures.items()]
        if self._joint is not None:
            return mixture_mask(joint_weights(weights), self._joint)
        dense = [mixture_mask(w, torch.as_tensor(mix.index)) for w, mix in zip(weights, self.mixtures.values())]
        return product_of_experts(dense)

    def readout(self, a):
        hidden = F.gelu(a @ self.ffn_w1 + self.ffn_b1)
        return a @ self.embed.T + hidden @ self.ffn_w2 + self.ffn_b2

    def forward(self, grids, noise: float = 0.0, smooth: bool | None = None, discrete: bool = False,
                gates: dict | None = None):
        """Colour logits for flattened grids.

        Parameters
        ----------
        grids : LongTensor (batch, n)
        noise : embedding noise level w in [0, 1]
        smooth : also compute the smoothed-mask head (default: variant setting)
        discrete : threshold gates at 0.5
        gates : optional family -> gate vector overriding the gate networks

        Returns
        -------
        (logits_plain, logits_smooth) each (batch, n, n_colors); the second is
        None when smoothing is off.
        """
        if not 0.0 <= noise <= 1.0:
            raise ValueError(f"noise level must lie in [0, 1], got {noise}")
        grids = torch.as_tensor(grids)
        if grids.dim() == 1:
            grids = grids[None]
        if grids.shape[-1] != self.n:
            raise ValueError(f"expected flattened grids of {self.n} cells, got {grids.shape[-1]}")
        smooth = self.config.smoothed if smooth is None else smooth

        x = self.embed_cells(grids, noise)
        h = x + self.pos
        q, k, v = h @ self.wq, h @ self.wk, h @ self.wv
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.config.d)

        if not self.mixtures:
            a = torch.softmax(scores, dim=-1) @ v
            return self.readout(a), None
        g = self.compute_gates(x, discrete, gates)
        plain = self.readout(masked_attention_from_scores(scores, self.build_mask(g), v))
        if not smooth:
            return plain, None
        smoothed = self.readout(masked_attention_from_scores(scores, self.build_mask(g, smooth=True), v))
        return plain, smoothed


def batch_loss(model: LatFormer, inputs, targets, noise: float = 0.0):
    """Mean loss over a batch: dual cross-entropy when smoothing is on."""
    plain, smoothed = model(inputs, noise=noise)
    targets = torch.as_tensor(targets).long()
    if smoothed is None:
        lp = F.cross_entropy(plain.reshape(-1, plain.shape[-1]), targets.reshape(-1))
        return lp, lp.detach(), None
    lp = F.cross_entropy(plain.reshape(-1, plain.shape[-1]), targets.reshape(-1))
    ls = F.cross_entropy(smoothed.reshape(-1, smoothed.shape[-1]), targets.reshape(-1))
    return dual_loss(plain, smoothed, targets), lp.detach(), ls.detach()


def loss_and_grads(model: LatFormer, inputs, targets, noise: float = 0.0):
    """Loss and a name -> gradient mapping for every parameter.

    Raises
    ------
    NonFinite
        If the loss is NaN or infinite.
    """
    inputs = torch.as_tensor(inputs)
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    model.zero_grad(set_to_none=True)
    loss, _, _ = batch_loss(model, inputs, targets, noise)
    if not torch.isfinite(loss):
        raise NonFinite(f"loss is {float(loss.detach())}", history=[])
    loss.backward()
    grads = {name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
             for name, p in model.named_parameters()}
    return float(loss.detach()), grads


@torch.no_grad()
def predict(model: LatFormer, grids, noise: float = 0.0, batch_size: int = 16):
    """Argmax colours per cell using discretised gates; returns (batch, n) int64 numpy."""
    grids = torch.as_tensor(np.asarray(grids))
    if grids.dim() == 1:
        grids = grids[None]
    out = []
    for start in range(0, grids.shape[0], batch_size):
        plain, _ = model(grids[start:start + batch_size], noise=noise, smooth=False, discrete=True)
        out.append(plain.argmax(dim=-1))
    return torch.cat(out).numpy()
