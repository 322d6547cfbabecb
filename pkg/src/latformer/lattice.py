"""Lattice shapes, symbolic lattice actions, and a brute-force action oracle.

Tensors over a lattice of shape ``(l_1, ..., l_m)`` are vectorised in
row-major (C) order, so flat index ``k`` corresponds to
``np.unravel_index(k, dims)``.

:func:`apply_action` transforms tensors directly by index permutation or
replication and never builds a mask; it is the reference the mask code is
checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import InvalidFactor, InvalidShape

__all__ = [
    "LatticeShape",
    "Identity",
    "Translate",
    "Rotate90",
    "Reflect",
    "Scale",
    "Compose",
    "apply_action",
    "action_to_dict",
    "action_from_dict",
    "parse_action",
    "format_action",
]


@dataclass(frozen=True)
class LatticeShape:
    """Dimension sizes of a hypercubic lattice."""

    dims: tuple

    def __init__(self, dims):
        if isinstance(dims, (int, np.integer)):
            dims = (int(dims),)
        dims = tuple(int(d) for d in dims)
        if not dims or any(d < 1 for d in dims):
            raise InvalidShape(f"lattice dims must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def n(self) -> int:
        return math.prod(self.dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)


def as_shape(shape) -> LatticeShape:
    return shape if isinstance(shape, LatticeShape) else LatticeShape(shape)


# ---------------------------------------------------------------------------
# actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Identity:
    ndim = None


@dataclass(frozen=True)
class Translate:
    """Cyclic translation by ``delta[i]`` cells along axis ``i``."""

    delta: tuple

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(int(d) for d in np.atleast_1d(self.delta)))

    @property
    def ndim(self):
        return len(self.delta)


@dataclass(frozen=True)
class Rotate90:
    """Counterclockwise rotation by ``k`` quarter turns of a square 2-D lattice."""

    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "k", int(self.k) % 4)

    ndim = 2


@dataclass(frozen=True)
class Reflect:
    """Reflection of the flagged axes, or about the main diagonal.

    ``Reflect((True, False))`` flips rows (upside down),
    ``Reflect((False, True))`` flips columns, and ``Reflect(diagonal=True)``
    transposes a square 2-D lattice.
    """

    axes: tuple = ()
    diagonal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(bool(a) for a in np.atleast_1d(self.axes)))
        if self.diagonal and self.axes:
            raise ValueError("diagonal reflection takes no axis flags")
        if not self.diagonal and not self.axes:
            raise ValueError("reflection needs axis flags or diagonal=True")

    @property
    def ndim(self):
        return 2 if self.diagonal else len(self.axes)


@dataclass(frozen=True)
class Scale:
    """Up- or down-scaling by an integer factor per axis (factor 1 = untouched)."""

    factors: tuple
    direction: str = "up"

    def __post_init__(self):
        factors = tuple(int(f) for f in np.atleast_1d(self.factors))
        if any(f < 1 for f in factors):
            raise InvalidFactor(f"scale factors must be >= 1, got {factors}")
        if all(f == 1 for f in factors):
            raise InvalidFactor(f"at least one scale factor must be >= 2, got {factors}")
        if self.direction not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {self.direction!r}")
        object.__setattr__(self, "factors", factors)

    @property
    def ndim(self):
        return len(self.factors)


@dataclass(frozen=True)
class Compose:
    """Ordered composition: ``actions[0]`` is applied first."""

    actions: tuple

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValueError("Compose needs at least one action")

    @property
    def ndim(self):
        dims = {a.ndim for a in self.actions if a.ndim is not None}
        if len(dims) > 1:
            raise InvalidShape(f"composed actions disagree on lattice rank: {sorted(dims)}")
        return dims.pop() if dims else None


Action = Union[Identity, Translate, Rotate90, Reflect, Scale, Compose]


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------


def _upscale_index(length, h):
    return np.arange(length) // h


def _downscale_index(length, h):
    # rows past ceil(length / h) have no source cell; they read the last cell
    idx = np.arange(length) * h
    idx[idx >= length] = length - 1
    return idx


def _check_rank(action, tensor, ndim):
    if tensor.ndim < ndim:
        raise InvalidShape(f"{action} needs a tensor with at least {ndim} axes, got shape {tensor.shape}")


def apply_action(action: Action, tensor, ndim: int | None = None) -> np.ndarray:
    """Apply ``action`` to the leading lattice axes of ``tensor``.

    Parameters
    ----------
    action : lattice action
    tensor : array_like
        Tensor whose first ``ndim`` axes are lattice axes. Trailing axes
        (e.g. a feature axis) are carried along untouched.
    ndim : int, optional
        Number of lattice axes. Defaults to the action's own rank, or to
        ``tensor.ndim`` for the identity.
    """
    x = np.asarray(tensor)
    if ndim is None:
        ndim = action.ndim if action.ndim is not None else x.ndim
    _check_rank(action, x, ndim)

    if isinstance(action, Identity):
        return x.copy()
    if isinstance(action, Compose):
        for a in action.actions:
            x = apply_action(a, x, ndim)
        return x
    if action.ndim != ndim:
        raise InvalidShape(f"{action} acts on {action.ndim} axes, lattice has {ndim}")

    if isinstance(action, Translate):
        return np.roll(x, shift=action.delta, axis=tuple(range(ndim)))
    if isinstance(action, Rotate90):
        if x.shape[0] != x.shape[1]:
            raise InvalidShape(f"rotation needs a square lattice, got {x.shape[:2]}")
        return np.rot90(x, k=action.k, axes=(0, 1)).copy()
    if isinstance(action, Reflect):
        if action.diagonal:
            if x.shape[0] != x.shape[1]:
                raise InvalidShape(f"diagonal reflection needs a square lattice, got {x.shape[:2]}")
            return np.swapaxes(x, 0, 1).copy()
        axes = tuple(i for i, flag in enumerate(action.axes) if flag)
        return np.flip(x, axis=axes).copy() if axes else x.copy()
    if isinstance(action, Scale):
        out = x
        index_fn = _upscale_index if action.direction == "up" else _downscale_index
        for axis, h in enumerate(action.factors):
            if h > 1:
                out = np.take(out, index_fn(x.shape[axis], h), axis=axis)
        return out
    raise TypeError(f"unknown action {action!r}")


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def action_to_dict(action: Action) -> dict:
    if isinstance(action, Identity):
        return {"type": "identity"}
    if isinstance(action, Translate):
        return {"type": "translate", "delta": list(action.delta)}
    if isinstance(action, Rotate90):
        return {"type": "rotate", "k": action.k}
    if isinstance(action, Reflect):
        if action.diagonal:
            return {"type": "reflect", "diagonal": True}
        return {"type": "reflect", "axes": list(action.axes)}
    if isinstance(action, Scale):
        return {"type": "scale", "factors": list(action.factors), "direction": action.direction}
    if isinstance(action, Compose):
        return {"type": "compose", "actions": [action_to_dict(a) for a in action.actions]}
    raise TypeError(f"unknown action {action!r}")


def action_from_dict(d: dict) -> Action:
    kind = d["type"]
    if kind == "identity":
        return Identity()
    if kind == "translate":
        return Translate(tuple(d["delta"]))
    if kind == "rotate":
        return Rotate90(d.get("k", 1))
    if kind == "reflect":
        if d.get("diagonal"):
            return Reflect(diagonal=True)
        return Reflect(tuple(d["axes"]))
    if kind == "scale":
        return Scale(tuple(d["factors"]), d.get("direction", "up"))
    if kind == "compose":
        return Compose(tuple(action_from_dict(a) for a in d["actions"]))
    raise ValueError(f"unknown action type {kind!r}")


_REFLECT_WORDS = {
    "h": (True, False),
    "rows": (True, False),
    "v": (False, True),
    "cols": (False, True),
    "hv": (True, True),
}


def parse_action(text: str, ndim: int = 2) -> Action:
    """Parse a compact action string.

    Grammar (``+`` composes left to right)::

        identity | translate:1,1 | rotate[:k] | reflect:h|v|hv|diag|<flags>
        | scale:2,3[:up|down]

    ``reflect:h`` flips rows (axis 0), ``reflect:v`` flips columns (axis 1),
    and ``reflect:1,0`` gives explicit per-axis flags.
    """
    parts = [p.strip() for p in text.split("+") if p.strip()]
    if not parts:
        raise ValueError("empty action string")
    actions = [_parse_one(p, ndim) for p in parts]
    return actions[0] if len(actions) == 1 else Compose(tuple(actions))


def _ints(s):
    return tuple(int(v) for v in s.split(","))


def _parse_one(text, ndim):
    name, _, rest = text.partition(":")
    name = name.lower()
    if name == "identity":
        return Identity()
    if name == "translate":
        delta = _ints(rest)
        if len(delta) == 1 and ndim > 1:
            delta = delta + (0,) * (ndim - 1)
        return Translate(delta)
    if name == "rotate":
        return Rotate90(int(rest) if rest else 1)
    if name == "reflect":
        key = rest.lower()
        if key in ("diag", "diagonal"):
            return Reflect(diagonal=True)
        if key in _REFLECT_WORDS:
            flags = _REFLECT_WORDS[key]
            if ndim == 1:
                flags = (True,)
            return Reflect(flags)
        return Reflect(tuple(bool(v) for v in _ints(rest)))
    if name == "scale":
        factors, _, direction = rest.partition(":")
        f = _ints(factors)
        if len(f) == 1 and ndim > 1:
            f = f * ndim
        return Scale(f, direction or "up")
    raise ValueError(f"unknown action {text!r}")


def format_action(action: Action) -> str:
    """Inverse of :func:`parse_action` (up to reflection flag spelling)."""
    if isinstance(action, Identity):
        return "identity"
    if isinstance(action, Translate):
        return "translate:" + ",".join(map(str, action.delta))
    if isinstance(action, Rotate90):
        return f"rotate:{action.k}"
    if isinstance(action, Reflect):
        if action.diagonal:
            return "reflect:diag"
        return "reflect:" + ",".join(str(int(a)) for a in action.axes)
    if isinstance(action, Scale):
        return "scale:" + ",".join(map(str, action.factors)) + ":" + action.direction
    if isinstance(action, Compose):
        return "+".join(format_action(a) for a in action.actions)
    raise TypeError(f"unknown action {action!r}")


def dims_for(action: Action, shape: Sequence[int] | LatticeShape) -> LatticeShape:
    shape = as_shape(shape)
    if action.ndim is not None and action.ndim != shape.ndim:
        raise InvalidShape(f"{format_action(action)} acts on {action.ndim} axes, shape is {shape.dims}")
    return shape
