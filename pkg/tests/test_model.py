import numpy as np
import pytest
import torch

from latformer.errors import NonFinite
from latformer.lattice import Rotate90, Translate, apply_action
from latformer.model import LatFormer, ModelConfig, batch_loss, loss_and_grads, predict
from latformer.tasks import Task, make_rng, random_grid, pad_grid
from latformer.training import (
    TrainConfig,
    exact_match,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history,
)


def small_model(**kw):
    base = dict(shape=(4, 4), d=8, ffn_hidden=16, gate_hidden=8, dtype="float64", experts=("translate",))
    base.update(kw)
    return LatFormer(ModelConfig(**base))


def grids(rng, count, shape=(4, 4)):
    return torch.as_tensor(rng.integers(0, 10, size=(count, int(np.prod(shape)))))


def test_embedding_noise_endpoints(rng):
    m = small_model()
    g = grids(rng, 2)
    assert torch.allclose(m.embed_cells(g, 0.0), m.embed[g])
    x = m.embed_cells(g, 1.0)
    assert torch.allclose(x, x[:, :1].expand_as(x))


def test_frozen_translation_gates_reproduce_action():
    m = LatFormer(ModelConfig(experts=("translate",)))
    gates = torch.zeros(10)
    gates[1] = 1.0  # axis 0 shifts by 2
    rng = make_rng(3)
    xs = np.stack([pad_grid(random_grid(rng)) for _ in range(4)])
    plain, _ = m(torch.as_tensor(xs.reshape(4, -1)), gates={"translate": gates}, smooth=False)
    expected = np.stack([apply_action(Translate((2, 0)), x) for x in xs]).reshape(4, -1)
    assert np.array_equal(plain.argmax(-1).numpy(), expected)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_frozen_rotation_gates_are_exact_for_every_grid(k, rng):
    m = small_model(experts=("rotate",), dtype="float32")
    gates = torch.tensor([1.0] * k + [0.0] * (3 - k))
    xs = rng.integers(0, 10, size=(20, 4, 4))
    plain, _ = m(torch.as_tensor(xs.reshape(20, -1)), gates={"rotate": gates}, smooth=False)
    expected = np.stack([apply_action(Rotate90(k), x) for x in xs]).reshape(20, -1)
    assert np.array_equal(plain.argmax(-1).numpy(), expected)


def test_identity_configured_model_returns_input(rng):
    m = small_model()
    with torch.no_grad():
        m.gates["translate"].b2.fill_(-30.0)
    g = grids(rng, 5).numpy()
    assert np.array_equal(predict(m, g), g)


def test_variants_and_parameter_parity(rng):
    g = grids(rng, 2)
    latf = small_model()
    plain, smooth = latf(g)
    assert plain.shape == smooth.shape == (2, 16, 10)
    assert small_model(variant="latformer_nosmooth")(g)[1] is None
    base = small_model(variant="attention_baseline")
    assert base(g)[1] is None
    assert base.n_params(include_gates=False) == latf.n_params(include_gates=False)
    assert latf.n_params() > base.n_params()


def test_forward_argument_errors(rng):
    m = small_model()
    with pytest.raises(ValueError):
        m(grids(rng, 1), noise=1.5)
    with pytest.raises(ValueError):
        m(torch.zeros(1, 5, dtype=torch.long))
    with pytest.raises(ValueError):
        ModelConfig(variant="bogus")


def _perturbed_model(seed):
    m = small_model(experts=("translate", "reflect"))
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in m.parameters():
            p.add_(0.3 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return m


def test_gradients_match_central_differences():
    rng = np.random.default_rng(0)
    m = _perturbed_model(0)
    x, y = grids(rng, 2), grids(rng, 2)
    _, grads = loss_and_grads(m, x, y, noise=0.1)
    params = dict(m.named_parameters())
    names = sorted(params)
    probes = [(n, int(rng.integers(params[n].numel()))) for n in names for _ in range(4)]
    probes += [(names[i], int(rng.integers(params[names[i]].numel()))) for i in rng.integers(len(names), size=40)]
    assert len(probes) >= 100
    assert any(n.startswith("gates.") for n, _ in probes) and "embed" in names and "ffn_w2" in names
    h = 1e-5
    worst = 0.0
    with torch.no_grad():
        for name, idx in probes:
            flat = params[name].view(-1)
            old = flat[idx].item()
            flat[idx] = old + h
            up = float(batch_loss(m, x, y, noise=0.1)[0])
            flat[idx] = old - h
            down = float(batch_loss(m, x, y, noise=0.1)[0])
            flat[idx] = old
            fd = (up - down) / (2 * h)
            ad = grads[name].view(-1)[idx].item()
            worst = max(worst, abs(ad - fd) / max(1e-8, abs(fd)))
    assert worst < 1e-4


def test_duplicated_example_gives_same_gradients(rng):
    m = small_model()
    x, y = grids(rng, 1), grids(rng, 1)
    _, g1 = loss_and_grads(m, x, y)
    _, g2 = loss_and_grads(m, torch.cat([x, x]), torch.cat([y, y]))
    for name in g1:
        assert torch.allclose(g1[name], g2[name], atol=1e-12)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        loss_and_grads(small_model(), torch.zeros(0, 16, dtype=torch.long), torch.zeros(0, 16, dtype=torch.long))


def test_degenerate_identity_batch_loss_decreases():
    m = small_model()
    x = torch.zeros(4, 16, dtype=torch.long)
    opt = torch.optim.Adam(m.parameters(), lr=1e-3)
    losses = []
    for _ in range(10):
        loss, _ = loss_and_grads(m, x, x)
        losses.append(loss)
        opt.step()
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_non_finite_loss_raises(rng):
    m = small_model()
    with torch.no_grad():
        m.ffn_b2.fill_(float("nan"))
    with pytest.raises(NonFinite):
        loss_and_grads(m, grids(rng, 1), grids(rng, 1))


def tiny_task(rng, n=6, action=Translate((1, 2))):
    pairs = []
    for _ in range(n):
        x = rng.integers(0, 10, size=(4, 4))
        pairs.append((x, apply_action(action, x)))
    return Task("translate", action, pairs[:4], pairs[4:], 0, "tiny")


def test_train_zero_epochs_leaves_params(rng):
    task = tiny_task(rng)
    m = small_model()
    before = {k: v.clone() for k, v in m.state_dict().items()}
    result = train(task, TrainConfig(epochs=0), m)
    assert result.history == []
    assert all(torch.equal(before[k], v) for k, v in m.state_dict().items())


def test_train_non_finite_keeps_partial_history(rng):
    task = tiny_task(rng)
    m = small_model()
    with torch.no_grad():
        m.ffn_b2.fill_(float("inf"))
    with pytest.raises(NonFinite) as info:
        train(task, TrainConfig(epochs=2), m)
    assert info.value.history == []


def test_training_is_deterministic(rng):
    task = tiny_task(rng)
    cfg = TrainConfig(epochs=3, lr=1e-2, n_augment=2, seed=5)
    h1 = train(task, cfg, small_model()).history
    h2 = train(task, cfg, small_model()).history
    assert h1 == h2 and len(h1) == 3


def _max_step(before, model, prefix, negate=False):
    moved = [float((p.detach() - before[name]).abs().max()) for name, p in model.named_parameters()
             if name.startswith(prefix) != negate]
    return max(moved)


def test_body_lr_applies_to_non_gate_parameters(rng):
    task = tiny_task(rng)
    m = small_model()
    before = {k: v.detach().clone() for k, v in m.named_parameters()}
    train(task, TrainConfig(epochs=1, lr=1e-2, body_lr=1e-6, n_augment=0, batch_size=4), m)
    # one Adam step moves each entry by at most about its learning rate
    assert _max_step(before, m, "gates.", negate=True) < 2e-6
    assert _max_step(before, m, "gates.") > 1e-3


def test_body_lr_ignored_without_gates(rng):
    task = tiny_task(rng)
    m = small_model(variant="attention_baseline")
    before = {k: v.detach().clone() for k, v in m.named_parameters()}
    train(task, TrainConfig(epochs=1, lr=1e-2, body_lr=1e-6, n_augment=0, batch_size=4), m)
    assert _max_step(before, m, "gates.", negate=True) > 1e-3


def test_small_translation_task_is_learned(rng):
    task = tiny_task(rng, n=10)
    result = train(task, TrainConfig(epochs=60, lr=3e-2, n_augment=1, batch_size=4), small_model())
    assert result.history[-1]["train_acc"] == 1.0
    x, y = task.arrays("test")
    assert exact_match(predict(result.model, x), y) == 1.0


def test_checkpoint_and_history_files(tmp_path, rng):
    task = tiny_task(rng)
    result = train(task, TrainConfig(epochs=2), small_model(experts=("rotate", "reflect")))
    path = save_checkpoint(result.model, tmp_path / "ckpt.json")
    loaded = load_checkpoint(path)
    for (n1, p1), (n2, p2) in zip(result.model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2 and torch.equal(p1, p2)
    csv_path = write_history(result.history, tmp_path / "history.csv")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "epoch,loss_plain,loss_smooth,train_acc" and len(lines) == 3


def test_exact_match_metric():
    y = np.arange(12).reshape(3, 4)
    assert exact_match(y, y) == 1.0
    z = y.copy()
    z[0, 0] = 99
    assert exact_match(z, y) == pytest.approx(2 / 3)
