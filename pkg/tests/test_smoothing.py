import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given
from hypothesis import strategies as st

from latformer.lattice import Rotate90
from latformer.masks import mask_for_action
from latformer.smoothing import diffusion_matrix, dual_loss, group_graph, heat_smooth, smoothed_mask


def test_rotation_graph_is_4_cycle():
    g = group_graph("rotate")
    assert len(g.nodes) == 4 and g.n_edges == 4 and set(g.degrees) == {2} and g.is_connected()


def test_translation_graph_is_torus():
    g = group_graph("translate", (3, 3))
    assert len(g.nodes) == 9 and set(g.degrees) == {4} and g.is_connected()


def test_scale_graph_is_path():
    g = group_graph("scale", factors=[1, 2, 3, 4])
    assert g.n_edges == 3 and g.degrees.tolist() == [1, 2, 2, 1]


def test_reflection_graph_is_4_cycle():
    g = group_graph("reflect")
    assert len(g.nodes) == 4 and set(g.degrees) == {2}
    with pytest.raises(ValueError):
        group_graph("shear")


def test_uniform_is_fixed_point():
    g = group_graph("translate", (4, 3))
    w = np.full(12, 1 / 12)
    assert np.allclose(heat_smooth(w, g, steps=7), w)


def test_one_step_on_cycle():
    w = heat_smooth(np.array([1.0, 0, 0, 0]), group_graph("rotate"), steps=1, lam=0.5)
    assert np.allclose(w, [0.5, 0.25, 0.0, 0.25])


def test_point_mass_converges_to_uniform():
    g = group_graph("rotate")
    w = heat_smooth(np.array([0.0, 1.0, 0.0, 0.0]), g, steps=20)
    assert np.abs(w - 0.25).max() < 1e-4
    masks = np.stack([mask_for_action(Rotate90(k), (3, 3)) if k else np.eye(9) for k in range(4)])
    m = smoothed_mask(w, masks)
    assert np.allclose(m.sum(axis=1), 1.0)


def test_rejects_non_distribution():
    with pytest.raises(ValueError):
        heat_smooth(np.array([0.5, 0.6, 0, 0]), group_graph("rotate"))


@given(st.sampled_from(["rotate", "translate", "reflect", "scale"]), st.integers(0, 2 ** 32 - 1),
       st.floats(0.0, 1.0))
def test_mass_conservation_and_positivity(family, seed, lam):
    g = group_graph(family, (3, 4), factors=[1, 2, 3, 4, 6]) if family != "scale" else \
        group_graph("scale", factors=[1, 2, 3, 4, 6])
    w = np.random.default_rng(seed).dirichlet(np.ones(len(g.nodes)))
    for _ in range(5):
        w = heat_smooth(w, g, steps=1, lam=lam)
        assert abs(w.sum() - 1) < 1e-12 and w.min() >= 0


def test_diffusion_on_regular_graph_is_neighbour_average():
    g = group_graph("rotate")
    P = diffusion_matrix(g, 1.0)
    assert np.allclose(P, g.adjacency / 2)


def test_torch_batch_matches_numpy(rng):
    g = group_graph("rotate")
    w = rng.dirichlet(np.ones(4), size=3)
    assert np.allclose(heat_smooth(torch.as_tensor(w), g).numpy(), heat_smooth(w, g))


def test_dual_loss_examples(rng):
    logits = rng.normal(size=(5, 4))
    target = rng.integers(0, 4, 5)
    single = float(F.cross_entropy(torch.as_tensor(logits), torch.as_tensor(target)))
    assert np.isclose(dual_loss(logits, logits, target), 2 * single)
    sharp = np.eye(4)[target] * 1e3
    assert dual_loss(sharp, sharp, target) < 1e-12
    other = rng.normal(size=(5, 4))

    def ce(z):
        z = z - z.max(axis=1, keepdims=True)
        return np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(5), target])

    assert abs(dual_loss(logits, other, target) - (ce(logits) + ce(other))) < 1e-9
    with pytest.raises(ValueError):
        dual_loss(logits, other[:4], target)
