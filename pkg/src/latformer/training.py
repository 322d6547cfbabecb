"""Adam training with colour augmentation, evaluation, checkpoints and history files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import NonFinite
from .model import CATEGORY_EXPERTS, LatFormer, ModelConfig, batch_loss, predict
from .tasks import Task, color_permute, make_rng, random_permutations

__all__ = [
    "TrainConfig",
    "TrainResult",
    "model_for_task",
    "train",
    "evaluate",
    "exact_match",
    "save_checkpoint",
    "load_checkpoint",
    "write_history",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "loss_plain", "loss_smooth", "train_acc")


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    body_lr: float | None = None  # non-gate parameters; None means ``lr``
    betas: tuple = (0.9, 0.999)
    batch_size: int = 16
    n_augment: int = 10
    noise: float = 0.0
    seed: int = 0
    n_train: int | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.epochs < 0 or self.batch_size < 1 or self.n_augment < 0:
            raise ValueError("epochs and n_augment must be >= 0 and batch_size >= 1")
        if self.lr <= 0 or (self.body_lr is not None and self.body_lr <= 0):
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise must lie in [0, 1], got {self.noise}")


@dataclass
class TrainResult:
    model: LatFormer
    history: list = field(default_factory=list)


def model_for_task(task: Task, config: ModelConfig | None = None, **overrides) -> LatFormer:
    """A fresh model whose experts match the task category (unless configured)."""
    base = asdict(config) if config is not None else {}
    base.update(overrides)
    if "experts" not in overrides and (config is None or config.experts == ModelConfig().experts):
        base["experts"] = CATEGORY_EXPERTS[task.category]
    return LatFormer(ModelConfig(**base))


def exact_match(pred, target) -> float:
    """Fraction of grids predicted correctly in every cell."""
    pred, target = np.asarray(pred), np.asarray(target)
    if len(target) == 0:
        return float("nan")
    return float(np.mean(np.all(pred.reshape(len(pred), -1) == target.reshape(len(target), -1), axis=1)))


def evaluate(model: LatFormer, task: Task, split: str = "test", noise: float = 0.0, limit: int | None = None):
    """Exact-match accuracy of discretised-gate predictions on one split."""
    x, y = task.arrays(split, limit)
    return exact_match(predict(model, x, noise=noise), y)


def _augmented(x, y, perms):
    if not len(perms):
        return x, y
    xs = np.concatenate([x] + [color_permute(x, p) for p in perms])
    ys = np.concatenate([y] + [color_permute(y, p) for p in perms])
    return xs, ys


def train(task: Task, config: TrainConfig | None = None, model: LatFormer | None = None) -> TrainResult:
    """Train ``model`` (default: :func:`model_for_task`) on the task's train pairs.

    Gate networks train at ``lr`` and every other parameter at ``body_lr``
    (``lr`` when unset, or when the model has no gates). Each epoch draws ``n_augment`` colour permutations shared by all pairs,
    adds the permuted copies to the original pairs, shuffles, and takes one
    Adam step per minibatch. History rows hold the mean plain and smoothed
    losses and the exact-match accuracy on the un-augmented train pairs.

    Raises
    ------
    NonFinite
        If a loss becomes NaN or infinite; ``exc.history`` holds the epochs
        completed so far.
    """
    config = config if config is not None else TrainConfig()
    model = model if model is not None else model_for_task(task)
    x, y = task.arrays("train", config.n_train)
    if len(x) == 0:
        raise ValueError("task has no train pairs")
    rng = make_rng(config.seed)
    gate_params = [p for name, p in model.named_parameters() if name.startswith("gates.")]
    body_params = [p for name, p in model.named_parameters() if not name.startswith("gates.")]
    # a gate-free model has nothing but its body to learn with; it trains at ``lr``
    body_lr = config.body_lr if config.body_lr is not None and gate_params else config.lr
    groups = [{"params": body_params, "lr": body_lr}]
    if gate_params:
        groups.append({"params": gate_params, "lr": config.lr})
    opt = torch.optim.Adam(groups, lr=config.lr, betas=config.betas)
    history = []
    for epoch in range(1, config.epochs + 1):
        xs, ys = _augmented(x, y, random_permutations(rng, config.n_augment))
        order = rng.permutation(len(xs))
        sums = np.zeros(2)
        count = 0
        model.train()
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, lp, ls = batch_loss(model, torch.as_tensor(xs[idx]), torch.as_tensor(ys[idx]), config.noise)
            if not torch.isfinite(loss):
                raise NonFinite(f"non-finite loss at epoch {epoch}", history=history)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sums += [float(lp) * len(idx), (float(ls) if ls is not None else math.nan) * len(idx)]
            count += len(idx)
        model.eval()
        acc = exact_match(predict(model, x, noise=config.noise), y)
        history.append({"epoch": epoch, "loss_plain": float(sums[0] / count), "loss_smooth": float(sums[1] / count),
                        "train_acc": acc})
    return TrainResult(model, history)


def write_history(history, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_COLUMNS})
    return path


def save_checkpoint(model: LatFormer, path) -> Path:
    """JSON checkpoint: version, model config, and each parameter's shape and flat values."""
    params = {name: {"shape": list(p.shape), "values": p.detach().double().reshape(-1).tolist()}
              for name, p in model.named_parameters()}
    doc = {"version": CHECKPOINT_VERSION, "config": model.config.to_dict(), "params": params}
    path = Path(path)
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path) -> LatFormer:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    model = LatFormer(ModelConfig(**doc["config"]))
    state = dict(model.named_parameters())
    missing = set(state) - set(doc["params"])
    if missing:
        raise ValueError(f"checkpoint lacks parameters {sorted(missing)}")
    with torch.no_grad():
        for name, p in state.items():
            entry = doc["params"][name]
            p.copy_(torch.tensor(entry["values"], dtype=torch.float64).reshape(entry["shape"]))
    return model
