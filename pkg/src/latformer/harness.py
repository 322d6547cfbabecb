"""Experiment runner: task generation, train/evaluate sweeps, noise sweeps, reports.

Results go to an append-only ``results.csv`` (or ``noise.csv``) plus a JSON
manifest holding the config, its hash, seeds and the package version. Every
row records the seed that reproduces it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .model import VARIANTS
from .tasks import CATEGORIES, load_task, sample_task_suite, save_task, suite_actions
from .training import TrainConfig, evaluate, model_for_task, train

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "RESULT_COLUMNS",
    "cmd_gen",
    "run_cell",
    "cmd_train_eval",
    "cmd_noise",
    "summarize",
    "cmd_report",
]

RESULT_COLUMNS = ("task_id", "category", "variant", "train_size", "noise", "accuracy", "solved",
                  "wall_time", "seed", "error")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Experiment settings; a JSON config file uses these names as keys.

    ``lr`` drives the gate networks and ``body_lr`` the rest of the model
    (see :func:`latformer.training.train`). Noise sweeps use
    ``noise_body_lr`` instead: the noise vector is shared by every cell, and a
    fast read-out learns it and merges colours. The defaults keep a full sweep over the translation suite well under
    half an hour on one CPU core. Ladders up to 2048 examples are accepted
    but must be asked for.
    """

    seed: int = 0
    ladder: tuple = (2, 8, 32)
    n_test: int = 100
    epochs: int = 4
    lr: float = 1e-2
    body_lr: float | None = None
    noise_body_lr: float | None = 3e-4
    batch_size: int = 16
    n_augment: int = 1
    categories: tuple = CATEGORIES
    experts: tuple | None = None
    smooth_lam: float = 0.5
    smooth_steps: int = 2
    noise_levels: tuple = (0.2, 0.4, 0.6)
    noise_categories: tuple = ("rotate", "reflect")
    noise_train_size: int = 32
    d: int = 32
    ffn_hidden: int = 128
    out: str = "runs"
    jobs: int = 1

    def __post_init__(self):
        for name in ("ladder", "categories", "noise_levels", "noise_categories"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.experts is not None:
            self.experts = tuple(self.experts)
        ladder = self.ladder
        if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError(f"ladder must be strictly increasing, got {list(ladder)}")
        if ladder[0] < 1 or ladder[-1] > 2048:
            raise ConfigError(f"ladder sizes must lie in [1, 2048], got {list(ladder)}")
        unknown = set(self.categories) | set(self.noise_categories)
        unknown -= set(CATEGORIES)
        if unknown:
            raise ConfigError(f"unknown categories {sorted(unknown)}")
        if any(not 0.0 <= w <= 1.0 for w in self.noise_levels):
            raise ConfigError(f"noise levels must lie in [0, 1], got {list(self.noise_levels)}")
        if self.epochs < 0 or self.n_test < 1 or self.jobs < 1 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0; n_test, jobs and lr must be positive")
        for name in ("body_lr", "noise_body_lr"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive or null, got {value}")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def task_dir(self) -> Path:
        return self.out_dir / "tasks"

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def train_config(self, size: int, seed: int, noise: float = 0.0) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, body_lr=self.body_lr, batch_size=self.batch_size, n_augment=self.n_augment,
                           noise=noise, seed=seed, n_train=size)

    def model_overrides(self, variant: str) -> dict:
        kw = dict(variant=variant, d=self.d, ffn_hidden=self.ffn_hidden, smooth_lam=self.smooth_lam,
                  smooth_steps=self.smooth_steps)
        if self.experts is not None:
            kw["experts"] = self.experts
        return kw


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a JSON config file and apply non-None overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        return ExperimentConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _cell_seed(seed: int, task_id: str, size: int, noise: float) -> int:
    key = f"{seed}:{task_id}:{size}:{noise}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def _write_manifest(config: ExperimentConfig, extra: dict) -> Path:
    path = config.out_dir / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc.update({"config": config.to_dict(), "config_hash": config.digest(), "version": __version__,
                "rng": "numpy Philox (counter-based), seeded per task and per run"})
    doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(config: ExperimentConfig) -> list:
    """Write one JSON file per suite task (train split sized to the ladder maximum).

    Tasks of both ``categories`` and ``noise_categories`` are written.
    """
    task_dir = config.task_dir
    try:
        task_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create task directory {task_dir}: {exc}") from exc
    tasks = sample_task_suite(config.seed, n_train=config.ladder[-1], n_test=config.n_test,
                              categories=set(config.categories) | set(config.noise_categories))
    paths = [save_task(t, task_dir / f"{t.task_id}.json") for t in tasks]
    _write_manifest(config, {"tasks": {t.task_id: {"category": t.category, "seed": t.seed} for t in tasks}})
    return paths


def run_cell(task_path, size: int, variant: str, config: ExperimentConfig, noise: float = 0.0) -> dict:
    """Train and evaluate one (task, train size, variant, noise) cell."""
    torch.set_num_threads(1)
    task_id = Path(task_path).stem
    seed = _cell_seed(config.seed, task_id, size, noise)
    row = {"task_id": task_id, "category": "", "variant": variant, "train_size": size,
           "noise": noise, "accuracy": math.nan, "solved": False, "wall_time": 0.0, "seed": seed, "error": ""}
    start = time.perf_counter()
    try:
        task = load_task(task_path)
        row["category"] = task.category
        model = model_for_task(task, seed=seed, **config.model_overrides(variant))
        result = train(task, config.train_config(size, seed, noise), model)
        acc = evaluate(result.model, task, "test", noise=noise)
        row.update(accuracy=acc, solved=bool(acc == 1.0))
    except Exception as exc:  # recorded per cell; the sweep continues
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["wall_time"] = round(time.perf_counter() - start, 3)
    return row


def _task_paths(config: ExperimentConfig, categories) -> list:
    ids = [tid for tid, cat, _ in suite_actions(config.seed) if cat in categories]
    paths = [config.task_dir / f"{tid}.json" for tid in ids]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise FileNotFoundError(f"task files missing (run `gen` first): {missing[0]} and {len(missing) - 1} more")
    return paths


def _run_cells(cells, config: ExperimentConfig, csv_path: Path, log=print) -> list:
    new_file = not csv_path.exists()
    rows = []
    with csv_path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if new_file:
            writer.writeheader()

        def collect(row):
            writer.writerow(row)
            fh.flush()
            rows.append(row)
            status = row["error"] or f"acc={row['accuracy']:.3f}"
            log(f"{row['task_id']:>18} {row['variant']:>18} n={row['train_size']:<5} w={row['noise']:<4} "
                f"{status} ({row['wall_time']:.1f}s)")

        if config.jobs == 1:
            for args in cells:
                collect(run_cell(*args))
        else:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                for row in pool.map(run_cell, *zip(*cells)):
                    collect(row)
    return rows


def cmd_train_eval(config: ExperimentConfig, variant: str = "latformer", log=print) -> list:
    """Sweep every suite task over the train-size ladder; append rows to results.csv."""
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    paths = _task_paths(config, config.categories)
    cells = [(p, size, variant, config, 0.0) for p in paths for size in config.ladder]
    rows = _run_cells(cells, config, config.out_dir / "results.csv", log)
    _write_manifest(config, {f"train_eval_{variant}": {"rows": len(rows)}})
    for line in format_summary(summarize(rows)):
        log(line)
    return rows


def cmd_noise(config: ExperimentConfig, variant: str = "latformer", log=print) -> list:
    """Noise sweep at a fixed train size; rows go to noise.csv."""
    paths = _task_paths(config, config.noise_categories)
    cell_config = config if config.noise_body_lr is None else replace(config, body_lr=config.noise_body_lr)
    cells = [(p, config.noise_train_size, variant, cell_config, w) for w in config.noise_levels for p in paths]
    rows = _run_cells(cells, config, config.out_dir / "noise.csv", log)
    _write_manifest(config, {f"noise_{variant}": {"rows": len(rows)}})
    for line in format_summary(summarize(rows)):
        log(line)
    return rows


def summarize(rows) -> list:
    """Mean and standard deviation of accuracy per (category, variant, train size, noise)."""
    groups = {}
    for row in rows:
        key = (row["category"], row["variant"], int(row["train_size"]), float(row["noise"]))
        acc = float(row["accuracy"]) if str(row["accuracy"]) not in ("", "nan") else math.nan
        groups.setdefault(key, []).append(acc)
    out = []
    for key in sorted(groups):
        accs = np.array(groups[key])
        ok = accs[~np.isnan(accs)]
        out.append({"category": key[0], "variant": key[1], "train_size": key[2], "noise": key[3],
                    "mean": float(ok.mean()) if len(ok) else math.nan,
                    "std": float(ok.std()) if len(ok) else math.nan,
                    "tasks": len(accs), "failed": int(np.isnan(accs).sum())})
    return out


def format_summary(summary) -> list:
    lines = [f"{'category':<10} {'variant':<19} {'size':>5} {'noise':>5} {'mean':>6} {'std':>6} {'tasks':>5}"]
    for s in summary:
        lines.append(f"{s['category']:<10} {s['variant']:<19} {s['train_size']:>5} {s['noise']:>5.2f} "
                     f"{s['mean']:>6.3f} {s['std']:>6.3f} {s['tasks']:>5}")
    return lines


def read_rows(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(config: ExperimentConfig, log=print) -> list:
    """Print per-category summaries of every results file in the output directory."""
    found = [p for p in (config.out_dir / "results.csv", config.out_dir / "noise.csv") if p.exists()]
    if not found:
        raise FileNotFoundError(f"no results.csv or noise.csv in {config.out_dir}")
    summaries = []
    for path in found:
        summary = summarize(read_rows(path))
        log(f"== {path}")
        for line in format_summary(summary):
            log(line)
        summaries.extend(summary)
    return summaries
