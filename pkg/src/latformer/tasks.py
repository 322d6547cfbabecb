"""Synthetic geometric tasks, colour augmentation, and ARC-format grid I/O.

All randomness comes from ``numpy.random.Generator(numpy.random.Philox(seed))``.
Philox is a counter-based generator whose stream is fixed by the seed on
every platform, so tasks and suites are reproducible byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyPool, ParseError, ValidationError
from .lattice import Identity, Reflect, Rotate90, Scale, Translate, action_from_dict, action_to_dict, apply_action

__all__ = [
    "GRID_SIZE",
    "N_COLORS",
    "CATEGORIES",
    "Task",
    "make_rng",
    "validate_grid",
    "pad_grid",
    "random_grid",
    "procedural_pool",
    "color_permute",
    "random_permutations",
    "generate_task",
    "sample_task_suite",
    "save_task",
    "load_task",
    "load_arc_json",
    "write_arc_json",
]

GRID_SIZE = 30
N_COLORS = 10
CATEGORIES = ("translate", "rotate", "reflect", "scale")


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _derive_seed(seed, *keys) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def validate_grid(grid, name: str = "grid") -> np.ndarray:
    """Check that ``grid`` is a rectangular 2-D array of colours 0-9 at most 30 x 30."""
    if isinstance(grid, np.ndarray):
        rows = grid.tolist() if grid.ndim == 2 else None
    else:
        rows = grid
    if not isinstance(rows, (list, tuple)) or not rows:
        raise ValidationError(f"{name}: expected a non-empty list of rows")
    width = None
    for i, row in enumerate(rows):
        if not isinstance(row, (list, tuple)) or not row:
            raise ValidationError(f"{name}: row {i} is not a non-empty list")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ValidationError(f"{name}: row {i} has length {len(row)}, expected {width}")
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 0 <= v < N_COLORS:
                raise ValidationError(f"{name}: cell ({i}, {j}) = {v!r} is not a colour in 0-{N_COLORS - 1}")
    if len(rows) > GRID_SIZE or width > GRID_SIZE:
        raise ValidationError(f"{name}: size {len(rows)}x{width} exceeds {GRID_SIZE}x{GRID_SIZE}")
    return np.asarray(rows, dtype=np.int64)


def pad_grid(grid, size: int = GRID_SIZE, fill: int = 0) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.int64)
    h, w = grid.shape
    if h > size or w > size:
        raise ValidationError(f"grid of size {h}x{w} does not fit in {size}x{size}")
    out = np.full((size, size), fill, dtype=np.int64)
    out[:h, :w] = grid
    return out


def random_grid(rng, max_h: int = GRID_SIZE, max_w: int = GRID_SIZE, min_size: int = 3) -> np.ndarray:
    """Background-0 grid with a few rectangles, sprites and noise patches in colours 1-9."""
    h = int(rng.integers(min(min_size, max_h), max_h + 1))
    w = int(rng.integers(min(min_size, max_w), max_w + 1))
    g = np.zeros((h, w), dtype=np.int64)
    for _ in range(int(rng.integers(1, 5))):
        kind = rng.integers(3)
        ph = int(rng.integers(1, max(2, h // 2) + 1))
        pw = int(rng.integers(1, max(2, w // 2) + 1))
        ph, pw = min(ph, h), min(pw, w)
        top = int(rng.integers(0, h - ph + 1))
        left = int(rng.integers(0, w - pw + 1))
        color = int(rng.integers(1, N_COLORS))
        view = g[top:top + ph, left:left + pw]
        if kind == 0:
            if rng.random() < 0.5 or min(ph, pw) < 3:
                view[:] = color
            else:
                view[[0, -1], :] = color
                view[:, [0, -1]] = color
        elif kind == 1:
            sprite = rng.random((ph, pw)) < 0.5
            view[sprite] = color
        else:
            patch = rng.random((ph, pw)) < 0.3
            view[patch] = rng.integers(1, N_COLORS, size=int(patch.sum()))
    if not g.any():
        g[int(rng.integers(h)), int(rng.integers(w))] = int(rng.integers(1, N_COLORS))
    return g


def procedural_pool(size: int, seed: int = 0, max_h: int = GRID_SIZE, max_w: int = GRID_SIZE) -> list:
    rng = make_rng(seed)
    return [random_grid(rng, max_h, max_w) for _ in range(size)]


def color_permute(grid, permutation) -> np.ndarray:
    """Relabel every cell ``c`` as ``permutation[c]`` (background included)."""
    perm = np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(len(perm))):
        raise ValueError(f"not a permutation: {perm.tolist()}")
    return perm[np.asarray(grid, dtype=np.int64)]


def random_permutations(rng, count: int, n_colors: int = N_COLORS) -> np.ndarray:
    return np.stack([rng.permutation(n_colors) for _ in range(count)]) if count else np.zeros((0, n_colors), int)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


@dataclass
class Task:
    """A transformation category and its padded train/test grid pairs."""

    category: str
    action: object
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0
    task_id: str = ""

    def arrays(self, split: str = "train", limit: int | None = None):
        """Flattened ``(inputs, outputs)`` int64 arrays of shape (pairs, 900)."""
        pairs = getattr(self, split)[:limit]
        if not pairs:
            return np.zeros((0, GRID_SIZE * GRID_SIZE), np.int64), np.zeros((0, GRID_SIZE * GRID_SIZE), np.int64)
        x = np.stack([p[0].reshape(-1) for p in pairs])
        y = np.stack([p[1].reshape(-1) for p in pairs])
        return x, y

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "category": self.category,
            "action": action_to_dict(self.action),
            "seed": self.seed,
            "train": [{"input": i.tolist(), "output": o.tolist()} for i, o in self.train],
            "test": [{"input": i.tolist(), "output": o.tolist()} for i, o in self.test],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        def pairs(split):
            return [(validate_grid(p["input"], f"{split}[{k}].input"), validate_grid(p["output"], f"{split}[{k}].output"))
                    for k, p in enumerate(d.get(split, []))]

        return cls(d["category"], action_from_dict(d["action"]), pairs("train"), pairs("test"),
                   int(d.get("seed", 0)), d.get("task_id", ""))


def _category_of(action):
    kinds = {Translate: "translate", Rotate90: "rotate", Reflect: "reflect", Scale: "scale"}
    return kinds.get(type(action))


def _check_action(category, action):
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    if not isinstance(action, Identity) and _category_of(action) != category:
        raise ValueError(f"action {action!r} does not belong to category {category!r}")
    if getattr(action, "ndim", 2) not in (None, 2):
        raise ValueError(f"grid tasks need a 2-D action, got {action!r}")


def _input_for(action, source, rng):
    """Padded input grid for ``action`` built from a pool grid."""
    if not isinstance(action, Scale):
        return pad_grid(source)
    # keep the content inside the cells that survive the scaling
    limits = [(GRID_SIZE - 1) // f for f in action.factors]
    small = pad_grid(source[:limits[0], :limits[1]])
    if action.direction == "up":
        return small
    return apply_action(Scale(action.factors, "up"), small)


def generate_task(category: str, action, n_train: int, n_test: int, seed: int, grid_pool=None,
                  task_id: str = "") -> Task:
    """Sample input grids, pad them to 30 x 30, and label them with ``action``.

    ``grid_pool`` is a sequence of grids; ``None`` draws fresh procedural
    grids from the task's own random stream. Train and test inputs are
    disjoint draws whenever the pool is large enough.
    """
    _check_action(category, action)
    rng = make_rng(seed)
    total = n_train + n_test
    if grid_pool is None:
        sources = [random_grid(rng) for _ in range(total)]
    else:
        pool = list(grid_pool)
        if not pool:
            raise EmptyPool("grid pool is empty")
        idx = rng.permutation(len(pool))[:total] if len(pool) >= total else rng.integers(0, len(pool), total)
        sources = [np.asarray(pool[i], dtype=np.int64) for i in idx]
    pairs = []
    for src in sources:
        x = _input_for(action, src, rng)
        pairs.append((x, apply_action(action, x)))
    return Task(category, action, pairs[:n_train], pairs[n_train:], int(seed), task_id)


def suite_actions(seed: int) -> list:
    """(task id, category, action) for the 43-task synthetic suite."""
    rng = make_rng(_derive_seed(seed, 0))
    out = []
    for i in range(5):
        delta = tuple(int(v) for v in rng.integers(1, GRID_SIZE, size=2))
        out.append((f"translate_{i}", "translate", Translate(delta)))
    for k in (1, 2, 3):
        out.append((f"rotate_{90 * k}", "rotate", Rotate90(k)))
    out.append(("reflect_h", "reflect", Reflect((True, False))))
    out.append(("reflect_v", "reflect", Reflect((False, True))))
    out.append(("reflect_diag", "reflect", Reflect(diagonal=True)))
    for direction in ("up", "down"):
        for a in range(2, 6):
            for b in range(2, 6):
                out.append((f"scale_{direction}_{a}x{b}", "scale", Scale((a, b), direction)))
    return out


def sample_task_suite(seed: int, n_train: int = 32, n_test: int = 100, categories=None, grid_pool=None) -> list:
    """Generate the synthetic suite, optionally restricted to some categories."""
    tasks = []
    for i, (task_id, category, action) in enumerate(suite_actions(seed)):
        if categories is not None and category not in categories:
            continue
        tasks.append(generate_task(category, action, n_train, n_test, _derive_seed(seed, 1, i), grid_pool, task_id))
    return tasks


def save_task(task: Task, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(task.to_dict(), separators=(",", ":")) + "\n")
    return path


def load_task(path) -> Task:
    return Task.from_dict(_read_json(path))


# ---------------------------------------------------------------------------
# ARC format
# ---------------------------------------------------------------------------


def _read_json(path):
    path = Path(path)
    text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {context}") from exc


def _arc_pairs(task, where, pad):
    if not isinstance(task, dict):
        raise ValidationError(f"{where}: expected an object with 'train' and 'test'")
    out = []
    for split in ("train", "test"):
        entries = task.get(split)
        if not isinstance(entries, list):
            raise ValidationError(f"{where}: missing '{split}' list")
        pairs = []
        for k, pair in enumerate(entries):
            name = f"{where}.{split}[{k}]"
            if not isinstance(pair, dict) or "input" not in pair:
                raise ValidationError(f"{name}: expected an object with an 'input' grid")
            x = validate_grid(pair["input"], f"{name}.input")
            y = validate_grid(pair["output"], f"{name}.output") if "output" in pair else None
            if pad:
                x = pad_grid(x)
                y = pad_grid(y) if y is not None else None
            pairs.append((x, y))
        out.append(pairs)
    return tuple(out)


def load_arc_json(path, pad: bool = False) -> list:
    """Read an ARC task file as a list of ``(train_pairs, test_pairs)``.

    A file holds one task object or a list of them. Grids are returned as
    int64 arrays, padded to 30 x 30 when ``pad`` is set; a test pair
    without an ``output`` has ``None`` in its place.

    Raises
    ------
    ParseError
        Malformed JSON, reported with line and column.
    ValidationError
        Non-rectangular grid or colour outside 0-9, naming the grid.
    """
    data = _read_json(path)
    if isinstance(data, list):
        return [_arc_pairs(t, f"{Path(path).name}[{i}]", pad) for i, t in enumerate(data)]
    return [_arc_pairs(data, Path(path).name, pad)]


def write_arc_json(path, tasks) -> Path:
    """Write ``(train_pairs, test_pairs)`` tasks in the ARC layout.

    One task is written as a bare object, several as a list, using the same
    separators as the public ARC files so a read-write cycle is byte-exact.
    """
    def pair_dict(x, y):
        d = {"input": np.asarray(x).tolist()}
        if y is not None:
            d["output"] = np.asarray(y).tolist()
        return d

    objs = [{"train": [pair_dict(*p) for p in train], "test": [pair_dict(*p) for p in test]} for train, test in tasks]
    path = Path(path)
    path.write_text(json.dumps(objs[0] if len(objs) == 1 else objs))
    return path
