"""Exact attention masks for lattice actions.

A mask for an exact action has a single 1 per row: row ``k`` attends the
cell the ``k``-th output cell is copied from. Masks are described by a
*shift vector* ``o`` whose ``k``-th entry is the offset of that cell
relative to ``k`` (1-based formulas, 0-based storage). Three routes build
the same binary matrix from ``o``:

* :func:`mask_from_shift` writes the ones directly,
* :func:`mask_via_fourier` phase-shifts the DFT of the identity,
* :func:`convolve_identity` convolves the identity with the per-row kernels
  returned by :func:`conv_kernels_for`.

Higher-dimensional masks are Kronecker products of per-axis masks, and
composition of actions is a matrix product.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidFactor, InvalidShape, NumericalInstability, SizeOverflow
from .lattice import (
    Compose,
    Identity,
    LatticeShape,
    Reflect,
    Rotate90,
    Scale,
    Translate,
    as_shape,
    dims_for,
)

__all__ = [
    "MAX_KRON_SIZE",
    "DEFAULT_SCALE_FACTORS",
    "shift_vector",
    "index_map",
    "mask_from_shift",
    "mask_from_index",
    "mask_via_fourier",
    "kronecker_mask",
    "compose_masks",
    "mask_for_action",
    "conv_kernels_for",
    "kernels_for_shift",
    "convolve_identity",
    "is_exact_mask",
    "save_mask",
    "load_mask",
]

MAX_KRON_SIZE = 4096
DEFAULT_SCALE_FACTORS = (2, 2, 3, 5)
GUARD_BAND = 0.1


# ---------------------------------------------------------------------------
# shift vectors
# ---------------------------------------------------------------------------


def _shift_1d(action, n):
    k = np.arange(1, n + 1)
    if isinstance(action, Identity):
        return np.zeros(n, dtype=np.int64)
    if isinstance(action, Translate):
        return np.full(n, -action.delta[0], dtype=np.int64)
    if isinstance(action, Reflect):
        if not action.axes[0]:
            return np.zeros(n, dtype=np.int64)
        # o_1 = n - 1, o_k = o_{k-1} - 2
        return (n - 1) - 2 * (k - 1)
    if isinstance(action, Scale):
        h = action.factors[0]
        if h == 1:
            return np.zeros(n, dtype=np.int64)
        if action.direction == "up":
            # row k attends ceil(k / h)
            return (k - 1) // h - (k - 1)
        target = (k - 1) * h + 1
        target[k > math.ceil(n / h)] = n
        return target - k
    raise InvalidShape(f"{action!r} is not a 1-D primitive")


def _rotation_shift(l):
    n = l * l
    k = np.arange(1, n + 1)
    return k * (l - 1) - (k - 1) // l


def _targets_from_shift(o):
    n = len(o)
    return (np.arange(n) + np.asarray(o)) % n


def _kron_targets(per_axis, dims):
    grids = np.meshgrid(*[t for t in per_axis], indexing="ij")
    return np.ravel_multi_index(tuple(grids), dims).reshape(-1)


def index_map(action, shape) -> np.ndarray:
    """0-based column attended by each mask row for an exact action."""
    shape = as_shape(shape)
    n = shape.n
    if isinstance(action, Identity):
        return np.arange(n)
    if isinstance(action, Compose):
        dims_for(action, shape)
        t = np.arange(n)
        for a in action.actions:
            t = t[index_map(a, shape)]
        return t
    dims_for(action, shape)
    if isinstance(action, Rotate90):
        l1, l2 = shape.dims
        if l1 != l2:
            raise InvalidShape(f"rotation needs a square lattice, got {shape.dims}")
        step = _targets_from_shift(_rotation_shift(l1))
        t = np.arange(n)
        for _ in range(action.k):
            t = t[step]
        return t
    if isinstance(action, Reflect) and action.diagonal:
        l1, l2 = shape.dims
        if l1 != l2:
            raise InvalidShape(f"diagonal reflection needs a square lattice, got {shape.dims}")
        # transpose = flip columns, then rotate a quarter turn
        return index_map(Compose((Reflect((False, True)), Rotate90(1))), shape)
    if isinstance(action, (Translate, Reflect, Scale)):
        per_axis = []
        for axis, l in enumerate(shape.dims):
            per_axis.append(_targets_from_shift(_shift_1d(_axis_part(action, axis), l)))
        return _kron_targets(per_axis, shape.dims)
    raise TypeError(f"unknown action {action!r}")


def _axis_part(action, axis):
    if isinstance(action, Translate):
        return Translate((action.delta[axis],))
    if isinstance(action, Reflect):
        return Reflect((action.axes[axis],))
    if action.factors[axis] == 1:
        return Identity()
    return Scale((action.factors[axis],), action.direction)


def shift_vector(action, shape) -> np.ndarray:
    """Per-row relative offsets ``o`` of the mask implementing ``action``.

    On 1-D lattices (and the square lattice for rotations) the closed forms
    are used directly; other shapes derive ``o`` from the Kronecker lifting
    of per-axis masks.

    Raises
    ------
    InvalidShape
        Rotation or diagonal reflection on a non-square lattice.
    InvalidFactor
        A 1-D scaling factor below 2.
    """
    shape = as_shape(shape)
    if isinstance(action, Scale) and shape.ndim == 1 and action.factors[0] < 2:
        raise InvalidFactor(f"scale factor must be >= 2, got {action.factors[0]}")
    if isinstance(action, Identity):
        return np.zeros(shape.n, dtype=np.int64)
    if shape.ndim == 1 and isinstance(action, (Translate, Reflect, Scale)) and not getattr(action, "diagonal", False):
        dims_for(action, shape)
        return _shift_1d(action, shape.n)
    if isinstance(action, Rotate90) and action.k == 1:
        dims_for(action, shape)
        l1, l2 = shape.dims
        if l1 != l2:
            raise InvalidShape(f"rotation needs a square lattice, got {shape.dims}")
        return _rotation_shift(l1)
    return index_map(action, shape) - np.arange(shape.n)


# ---------------------------------------------------------------------------
# three routes to a mask
# ---------------------------------------------------------------------------


def mask_from_shift(o, n: int | None = None) -> np.ndarray:
    """Binary mask with ``M[k, (k + o_k) mod n] = 1`` (0-based ``k``)."""
    o = np.asarray(o, dtype=np.int64)
    if n is None:
        n = len(o)
    if len(o) != n:
        raise ValueError(f"shift vector has length {len(o)}, expected {n}")
    return mask_from_index(_targets_from_shift(o))


def mask_from_index(targets) -> np.ndarray:
    targets = np.asarray(targets)
    n = len(targets)
    m = np.zeros((n, n))
    m[np.arange(n), targets] = 1.0
    return m


def _dft_matrix(n):
    # 1-based frequencies and positions, matching r_n = (1, ..., n)
    r = np.arange(1, n + 1)
    return np.exp(-2j * np.pi * np.outer(r, r) / n)


def _phase(o, n):
    r = np.arange(1, n + 1)
    return np.exp(-2j * np.pi * np.outer(np.asarray(o, dtype=float), r) / n)


def _round_guarded(values, what):
    re = values.real
    close = np.abs(re - 0.5) < GUARD_BAND
    if np.any(close):
        k, i = np.argwhere(close)[0]
        raise NumericalInstability(
            f"{what}: entry ({k}, {i}) = {re[k, i]:.3f} lies within {GUARD_BAND} of 0.5"
        )
    return (re > 0.5).astype(float)


def mask_via_fourier(o, n: int | None = None) -> np.ndarray:
    """Mask built by phase-shifting the DFT of the identity.

    Each row of the identity is transformed, multiplied elementwise by
    ``exp(-2*pi*j/n * o_k * r)``, and transformed back. The DFT is a plain
    O(n^2) matrix product.

    Raises
    ------
    NumericalInstability
        If any real part falls within 0.1 of the 0.5 rounding threshold.
    """
    o = np.asarray(o, dtype=np.int64)
    if n is None:
        n = len(o)
    if len(o) != n:
        raise ValueError(f"shift vector has length {len(o)}, expected {n}")
    F = _dft_matrix(n)
    F_inv = F.conj() / n
    spectrum = np.eye(n) @ F  # row-wise transform of the identity
    return _round_guarded((spectrum * _phase(o, n)) @ F_inv, "mask_via_fourier")


def conv_kernels_for(family: str, level: int, shape, *, direction: str = "up",
                     factors=DEFAULT_SCALE_FACTORS) -> np.ndarray:
    """Frozen convolution kernels for one expert layer.

    Row ``k`` of the result is the circular-convolution kernel that turns
    row ``k`` of the identity into row ``k`` of the layer's mask. Kernels
    are the inverse DFT of the phase factor for the layer's shift vector.

    ``family`` is one of ``identity``, ``translate`` (shift by ``2**level``
    on a 1-D axis), ``rotate`` (quarter turn, square 2-D shape), ``reflect``
    (1-D flip) or ``scale`` (factor ``factors[level]`` in ``direction``).
    """
    shape = as_shape(shape)
    if family == "identity":
        action = Identity()
    elif family == "translate":
        action = Translate((2 ** level,))
    elif family == "rotate":
        action = Rotate90(1)
    elif family == "reflect":
        action = Reflect((True,))
    elif family == "scale":
        action = Scale((factors[level],), direction)
    else:
        raise ValueError(f"unknown expert family {family!r}")
    return kernels_for_shift(shift_vector(action, shape))


def kernels_for_shift(o) -> np.ndarray:
    """Per-row convolution kernels for shift vector ``o``.

    Row ``k`` is the inverse DFT of ``exp(-2*pi*j/n * o_k * r)`` on 0-based
    offsets, i.e. an impulse at ``o_k mod n``.
    """
    o = np.asarray(o, dtype=np.int64)
    n = len(o)
    r = np.arange(1, n + 1)
    inverse = np.exp(2j * np.pi * np.outer(r, np.arange(n)) / n) / n
    return _round_guarded(_phase(o, n) @ inverse, "kernels_for_shift")


def convolve_identity(kernels) -> np.ndarray:
    """Row-wise circular convolution of the identity with ``kernels``.

    Row ``k`` of the identity is the impulse at ``k``, so its convolution
    with a kernel is that kernel rolled by ``k``.
    """
    kernels = np.asarray(kernels)
    n = kernels.shape[0]
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    return kernels[k, (m - k) % n]


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------


def kronecker_mask(a, b, max_size: int = MAX_KRON_SIZE) -> np.ndarray:
    """Mask acting with ``a`` on the leading axes and ``b`` on the trailing ones."""
    a = np.asarray(a)
    b = np.asarray(b)
    size = a.shape[0] * b.shape[0]
    if size > max_size:
        raise SizeOverflow(f"Kronecker product of size {size} exceeds max_size={max_size}")
    return np.kron(a, b)


def compose_masks(a, b) -> np.ndarray:
    """Matrix product ``a @ b``: the action of ``b`` followed by that of ``a``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot compose masks of shapes {a.shape} and {b.shape}")
    return a @ b


def mask_for_action(action, shape, max_size: int = MAX_KRON_SIZE) -> np.ndarray:
    """Exact mask of ``action`` on ``shape`` built from shift vectors.

    Axis-separable actions are Kronecker products of 1-D masks; rotations
    and diagonal reflections use the square-lattice shift vector; compositions
    multiply the component masks.
    """
    shape = as_shape(shape)
    if isinstance(action, Identity):
        return np.eye(shape.n)
    dims_for(action, shape)
    if isinstance(action, Compose):
        m = np.eye(shape.n)
        for a in action.actions:
            m = compose_masks(mask_for_action(a, shape, max_size), m)
        return m
    if isinstance(action, (Rotate90, Reflect)) and (isinstance(action, Rotate90) or action.diagonal):
        return mask_from_shift(shift_vector(action, shape))
    m = None
    for axis, l in enumerate(shape.dims):
        part = _axis_part(action, axis)
        mi = mask_from_shift(shift_vector(part, LatticeShape(l)))
        m = mi if m is None else kronecker_mask(m, mi, max_size)
    return m


def is_exact_mask(m, atol: float = 0.0) -> bool:
    """True when ``m`` is binary with exactly one 1 per row."""
    m = np.asarray(m)
    binary = np.all((np.abs(m) <= atol) | (np.abs(m - 1) <= atol))
    return bool(binary and np.all(np.abs(m.sum(axis=1) - 1) <= atol * m.shape[1] + 1e-12))


# ---------------------------------------------------------------------------
# dump format
# ---------------------------------------------------------------------------


def save_mask(mask, path) -> Path:
    """Write ``mask`` as a plain graymap (``.pgm``) or nested JSON (``.json``).

    In the graymap, white (255) is 1 and black (0) is 0.
    """
    path = Path(path)
    mask = np.asarray(mask, dtype=float)
    suffix = path.suffix.lower()
    if suffix == ".json":
        path.write_text(json.dumps(mask.tolist()) + "\n")
    elif suffix in (".pgm", ".p2"):
        pixels = np.rint(np.clip(mask, 0, 1) * 255).astype(int)
        rows = [" ".join(map(str, row)) for row in pixels]
        h, w = pixels.shape
        path.write_text(f"P2\n{w} {h}\n255\n" + "\n".join(rows) + "\n")
    else:
        raise ValueError(f"unsupported mask format {path.suffix!r}; use .pgm or .json")
    return path


def load_mask(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return np.asarray(json.loads(path.read_text()), dtype=float)
    tokens = [t for line in path.read_text().splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError(f"{path} is not a plain graymap")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.asarray(tokens[4:4 + w * h], dtype=float).reshape(h, w) / maxval
