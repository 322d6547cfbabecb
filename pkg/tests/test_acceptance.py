"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed at the end of the run."""

import itertools
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from latformer.attention import masked_self_attention
from latformer.experts import ExpertStack, expert_forward
from latformer.harness import ExperimentConfig, cmd_gen, cmd_noise, cmd_train_eval, summarize
from latformer.lattice import Compose, Reflect, Rotate90, Translate, apply_action
from latformer.masks import (
    convolve_identity,
    kernels_for_shift,
    kronecker_mask,
    mask_for_action,
    mask_from_shift,
    mask_via_fourier,
    shift_vector,
)
from latformer.model import LatFormer, ModelConfig, batch_loss, loss_and_grads
from latformer.smoothing import group_graph, heat_smooth
from latformer.tasks import load_arc_json, write_arc_json

from oracles import mask_by_basis, primitive_actions

ARC_DIR = Path(__file__).parent / "data" / "arc"


@contextmanager
def criterion(lines, number, title):
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        lines.append(f"criterion {number} FAIL  {title}: {type(exc).__name__}: {str(exc).splitlines()[0][:120]}")
        raise
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    lines.append(f"criterion {number} PASS  {title} ({time.perf_counter() - start:.1f}s{', ' + extra if extra else ''})")


def small_shapes():
    return [(n,) for n in range(1, 17)] + [(a, b) for a in range(1, 7) for b in range(1, 7)]


def test_criterion_1_attention_matches_permutation_oracle(acceptance_lines):
    with criterion(acceptance_lines, 1, "masked self-attention equals the brute-force oracle") as info:
        start = time.perf_counter()
        rng = np.random.default_rng(0)
        checked = 0
        worst = 0.0
        for dims in small_shapes():
            actions = primitive_actions(dims)
            if len(dims) == 2 and dims[0] == dims[1]:
                actions += [Compose((Translate((1, 0)), Rotate90(), Reflect((True, False))))]
            n = int(np.prod(dims))
            for action in actions:
                m = torch.as_tensor(mask_for_action(action, dims))
                x = rng.normal(size=(50, *dims, 3))
                out = masked_self_attention(torch.as_tensor(x.reshape(50, n, 3)), m).numpy()
                expected = np.stack([apply_action(action, xi, ndim=len(dims)) for xi in x]).reshape(50, n, 3)
                worst = max(worst, float(np.abs(out - expected).max()))
                checked += 1
        elapsed = time.perf_counter() - start
        info.update(actions=checked, max_err=f"{worst:.1e}")
        assert worst <= 1e-6
        assert elapsed < 10.0


def test_criterion_2_three_routes_identical(acceptance_lines):
    with criterion(acceptance_lines, 2, "shift, Fourier and kernel-convolution masks identical") as info:
        cases = []
        for n in range(1, 65):
            cases += [((n,), a) for a in primitive_actions((n,))]
        for a in range(2, 9):
            for b in range(2, 9):
                if a * b <= 64:
                    cases += [((a, b), g) for g in primitive_actions((a, b))]
        for dims, action in cases:
            o = shift_vector(action, dims)
            direct = mask_from_shift(o)
            assert np.array_equal(direct, mask_via_fourier(o)), (dims, action)
            assert np.array_equal(direct, convolve_identity(kernels_for_shift(o))), (dims, action)
            assert np.array_equal(direct, mask_by_basis(action, dims)), (dims, action)
        info.update(cases=len(cases))


def test_criterion_3_kronecker_and_group_laws(acceptance_lines):
    with criterion(acceptance_lines, 3, "Kronecker lifting, composition and group laws") as info:
        start = time.perf_counter()
        rng = np.random.default_rng(1)
        lifts = 0
        for a, b in itertools.product(range(1, 5), repeat=2):
            for g1 in primitive_actions((a,)):
                for g2 in primitive_actions((b,)):
                    m = kronecker_mask(mask_for_action(g1, a), mask_for_action(g2, b))
                    x = rng.normal(size=(a, b))
                    expected = apply_action(g2, apply_action(g1, x, ndim=1).T, ndim=1).T
                    assert np.allclose(m @ x.reshape(-1), expected.reshape(-1))
                    lifts += 1
        products = 0
        for dims in [(3, 3), (4, 4), (2, 5)]:
            acts = primitive_actions(dims)
            masks = {act: mask_for_action(act, dims) for act in acts}
            for g1, g2 in itertools.product(acts, repeat=2):
                assert np.array_equal(masks[g2] @ masks[g1], mask_by_basis(Compose((g1, g2)), dims))
                products += 1
        for l in range(1, 7):
            r = mask_for_action(Rotate90(), (l, l))
            n = l * l
            assert np.array_equal(np.linalg.matrix_power(r, 4), np.eye(n))
            if l > 1:
                assert not np.array_equal(np.linalg.matrix_power(r, 2), np.eye(n))
            for refl in [Reflect((True, False)), Reflect((False, True)), Reflect((True, True)), Reflect(diagonal=True)]:
                f = mask_for_action(refl, (l, l))
                assert np.array_equal(f @ f, np.eye(n))
            ts = [mask_for_action(Translate((i, j)), (l, l)) for i in range(l) for j in range(l)]
            for t1, t2 in itertools.product(ts, repeat=2):
                assert np.array_equal(t1 @ t2, t2 @ t1)
        elapsed = time.perf_counter() - start
        info.update(lifts=lifts, products=products)
        assert elapsed < 30.0


def test_criterion_4_translation_expert_expressivity(acceptance_lines):
    with criterion(acceptance_lines, 4, "discretised translation gates give exactly the translations 0..2^L-1") as info:
        counted = 0
        for L in range(1, 6):
            for n in (2 ** L, 40):
                stack = ExpertStack("translate", layers=L)
                produced = [expert_forward(stack, np.array(bits), n).tobytes()
                            for bits in itertools.product((0.0, 1.0), repeat=L)]
                expected = {mask_from_shift(shift_vector(Translate((d,)), n)).tobytes() for d in range(2 ** L)}
                assert len(set(produced)) == len(produced), (L, n, "duplicates")
                assert set(produced) == expected, (L, n)
                counted += len(produced)
        for L in (1, 2, 3):
            n = 2 ** L
            stack = ExpertStack("translate", layers=L)
            produced = [expert_forward(stack, np.array(bits), (n, n)).tobytes()
                        for bits in itertools.product((0.0, 1.0), repeat=2 * L)]
            expected = {mask_for_action(Translate((i, j)), (n, n)).tobytes() for i in range(n) for j in range(n)}
            assert len(set(produced)) == len(produced) and set(produced) == expected
            counted += len(produced)
        info.update(patterns=counted)


def test_criterion_5_gradients_match_finite_differences(acceptance_lines):
    with criterion(acceptance_lines, 5, "autograd vs central differences on a 4x4 grid task") as info:
        # two translation layers per axis: on 4 cells deeper layers shift by a
        # multiple of 4, have no effect, and would give exactly-zero gradients
        cfg = ModelConfig(shape=(4, 4), d=8, ffn_hidden=16, gate_hidden=8, dtype="float64",
                          experts=("translate", "rotate", "reflect"), translate_layers=2)
        model = LatFormer(cfg)
        gen = torch.Generator().manual_seed(7)
        with torch.no_grad():
            for p in model.parameters():
                p.add_(0.3 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
        rng = np.random.default_rng(7)
        x = torch.as_tensor(rng.integers(0, 10, size=(2, 16)))
        y = torch.as_tensor(np.stack([np.rot90(g.reshape(4, 4)).reshape(-1) for g in x.numpy()]))
        _, grads = loss_and_grads(model, x, y, noise=0.1)
        params = dict(model.named_parameters())
        names = sorted(params)
        probes = [(n, int(rng.integers(params[n].numel()))) for n in names for _ in range(3)]
        probes += [(n, int(rng.integers(params[n].numel()))) for n in rng.choice(names, size=60)]
        groups = {"embedding": "embed", "gates": "gates.", "ffn": "ffn_"}
        for key, prefix in groups.items():
            assert sum(n.startswith(prefix) for n, _ in probes) >= 5, key
        h = 1e-5
        worst = 0.0
        with torch.no_grad():
            for name, idx in probes:
                flat = params[name].view(-1)
                old = flat[idx].item()
                flat[idx] = old + h
                up = float(batch_loss(model, x, y, 0.1)[0])
                flat[idx] = old - h
                down = float(batch_loss(model, x, y, 0.1)[0])
                flat[idx] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(grads[name].view(-1)[idx].item() - fd) / max(1e-8, abs(fd)))
        info.update(probes=len(probes), max_rel_err=f"{worst:.1e}")
        assert len(probes) >= 100
        assert worst < 1e-4


def test_criterion_6_smoothing_converges(acceptance_lines):
    with criterion(acceptance_lines, 6, "rotation-cycle diffusion converges and conserves mass") as info:
        g = group_graph("rotate")
        w = np.array([0.0, 1.0, 0.0, 0.0])
        for _ in range(20):
            w = heat_smooth(w, g, steps=1, lam=0.5)
            assert abs(w.sum() - 1.0) <= 1e-12
            assert w.min() >= 0
        dev = float(np.abs(w - 0.25).max())
        info.update(max_dev=f"{dev:.1e}")
        assert dev < 1e-4


ACCEPT_RUN = dict(epochs=4, lr=1e-2, n_augment=1, batch_size=16, n_test=100)


@pytest.mark.slow
def test_criterion_7_sample_efficiency_on_translations(acceptance_lines, tmp_path):
    with criterion(acceptance_lines, 7, "translation suite: LatFormer >= 0.9, baseline <= 0.5 at 32 examples") as info:
        start = time.perf_counter()
        cfg = ExperimentConfig(ladder=(32,), categories=("translate",), noise_categories=("translate",),
                               out=str(tmp_path), **ACCEPT_RUN)
        cmd_gen(cfg)
        quiet = lambda line: None  # noqa: E731
        latf = summarize(cmd_train_eval(cfg, "latformer", log=quiet))[0]
        base = summarize(cmd_train_eval(cfg, "attention_baseline", log=quiet))[0]
        elapsed = time.perf_counter() - start
        info.update(latformer=f"{latf['mean']:.2f}", baseline=f"{base['mean']:.2f}", train_size=32)
        assert latf["tasks"] == base["tasks"] == 5 and latf["failed"] == base["failed"] == 0
        assert latf["mean"] >= 0.9
        assert base["mean"] <= 0.5
        assert elapsed < 30 * 60


@pytest.mark.slow
def test_criterion_8_noise_robustness(acceptance_lines, tmp_path):
    with criterion(acceptance_lines, 8, "rotation/reflection >= 0.9 at w=0.2, non-increasing in w") as info:
        cfg = ExperimentConfig(ladder=(32,), categories=("rotate", "reflect"), noise_categories=("rotate", "reflect"),
                               noise_levels=(0.2, 0.4, 0.6), noise_train_size=32, out=str(tmp_path), **ACCEPT_RUN)
        cmd_gen(cfg)
        summary = summarize(cmd_noise(cfg, log=lambda line: None))
        table = {(s["category"], s["noise"]): s["mean"] for s in summary}
        info.update(**{f"{c}@{w}": f"{table[(c, w)]:.2f}" for c in ("rotate", "reflect") for w in (0.2, 0.4, 0.6)})
        for cat in ("rotate", "reflect"):
            accs = [table[(cat, w)] for w in (0.2, 0.4, 0.6)]
            assert not any(math.isnan(a) for a in accs)
            assert accs[0] >= 0.9, (cat, accs)
            assert all(b <= a for a, b in zip(accs, accs[1:])), (cat, accs)


def test_criterion_9_arc_round_trip(acceptance_lines, tmp_path):
    with criterion(acceptance_lines, 9, "byte-exact ARC-format round trip") as info:
        files = sorted(ARC_DIR.glob("*.json"))
        assert len(files) >= 10
        for path in files:
            tasks = load_arc_json(path)
            out = write_arc_json(tmp_path / path.name, tasks)
            assert out.read_bytes() == path.read_bytes(), path.name
        info.update(files=len(files))
