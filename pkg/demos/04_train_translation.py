"""Learn a translation task from 32 examples and compare with plain attention.

Run: python demos/04_train_translation.py   (about a minute on one core)
"""

import torch

from latformer import TrainConfig, Translate, evaluate, generate_task, train
from latformer.training import model_for_task

torch.set_num_threads(1)
task = generate_task("translate", Translate((3, 7)), n_train=32, n_test=50, seed=1, task_id="demo")
config = TrainConfig(epochs=4, lr=1e-2, n_augment=1, seed=1)

for variant in ("latformer", "attention_baseline"):
    model = model_for_task(task, seed=1, variant=variant)
    result = train(task, config, model)
    for row in result.history:
        print(f"{variant:>18} epoch {row['epoch']}  loss {row['loss_plain']:.4f}  train acc {row['train_acc']:.2f}")
    print(f"{variant:>18} test exact-match accuracy: {evaluate(result.model, task):.2f}\n")
