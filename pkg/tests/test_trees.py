import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from besov_mlmc.trees import (ActiveIndexSet, TreeParams, expected_nodes_per_scale,
                              extinction_probability, linear_to_node, linear_to_shift,
                              morton_decode, morton_encode, node_to_linear, node_to_shift,
                              sample_generation_sizes, sample_tree)


class ScriptedUniforms:
    """Returns prescribed uniform arrays in order (a stand-in for a Generator)."""

    def __init__(self, arrays):
        self.arrays = list(arrays)

    def random(self, size):
        out = np.asarray(self.arrays.pop(0), dtype=float)
        assert out.shape == (size,)
        return out


def test_tree_params():
    p = TreeParams(2, 0.5)
    assert p.gamma == pytest.approx(1.0)
    assert 2 ** (p.gamma - p.d) == pytest.approx(p.beta, abs=1e-12)
    with pytest.raises(ValueError):
        TreeParams(4, 0.5)
    with pytest.raises(ValueError):
        TreeParams(1, 1.5)


def test_node_to_linear_examples():
    assert node_to_linear(1, (1, 1)) == 1
    assert node_to_linear(1, (2, 2)) == 4
    assert node_to_linear(1, (2, 2, 1)) == 7
    with pytest.raises(ValueError):
        node_to_linear(1, (3,))


def test_figure_one_pairs():
    expected = {(1,): (1, 0), (2,): (1, 1), (1, 1): (2, 0), (1, 2): (2, 1),
                (2, 2): (2, 3), (2, 2, 1): (3, 6)}
    for node, (j, k) in expected.items():
        assert len(node) == j
        assert node_to_shift(1, node) == (k,)
    assert linear_to_shift(1, 2, 4) == (3,)
    assert linear_to_shift(1, 3, 7) == (6,)
    assert linear_to_shift(1, 1, 1) == (0,)
    with pytest.raises(ValueError):
        linear_to_shift(1, 2, 5)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_index_maps_bijective(d, j):
    nodes = list(itertools.product(range(1, 2 ** d + 1), repeat=j))
    lin = [node_to_linear(d, n) for n in nodes]
    assert sorted(lin) == list(range(1, 2 ** (d * j) + 1))
    assert all(linear_to_node(d, j, m) == n for n, m in zip(nodes, lin))
    shifts = {linear_to_shift(d, j, m) for m in lin}
    assert len(shifts) == 2 ** (d * j)
    assert all(0 <= x < 2 ** j for k in shifts for x in k)


@given(d=st.integers(1, 3), j=st.integers(1, 8), data=st.data())
def test_morton_roundtrip_and_nesting(d, j, data):
    m = data.draw(st.integers(0, 2 ** (d * j) - 1))
    k = morton_decode(d, j, np.array(m))
    assert int(morton_encode(d, j, k)) == m
    # the parent node (drop the last digit) sits at the parent dyadic cell
    parent = morton_decode(d, j - 1, np.array(m >> d))
    assert np.array_equal(parent, k // 2)


def test_sample_tree_extremes(rng):
    t0 = sample_tree(TreeParams(2, 0.0), 4, rng)
    assert t0.counts().tolist() == [1, 0, 0, 0, 0]
    t1 = sample_tree(TreeParams(1, 1.0), 3, rng)
    assert t1.pairs() == {(j, (k,)) for j in range(4) for k in range(2 ** j)}


def test_figure_one_tree():
    keep, drop = 0.1, 0.9
    uniforms = [
        [keep, keep],
        [keep, keep, drop, keep],
        [drop, keep, drop, drop, drop, drop, keep, drop],
    ]
    tree = sample_tree(TreeParams(1, 0.5), 3, ScriptedUniforms(uniforms))
    expected = {(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 3), (3, 1), (3, 6)}
    assert {(j, k[0]) for j, k in tree.pairs()} == expected


@given(d=st.integers(1, 3), beta=st.floats(0, 1), seed=st.integers(0, 2 ** 32 - 1),
       lattice=st.booleans())
def test_ancestor_closure(d, beta, seed, lattice):
    N = 4 if d < 3 else 3
    tree = sample_tree(TreeParams(d, beta), N, np.random.default_rng(seed), lattice=lattice)
    pairs = tree.pairs()
    assert (0, (0,) * d) in pairs
    counts = tree.counts()
    for j in range(1, N + 1):
        assert counts[j] <= 2 ** d * counts[j - 1]
        for k in tree.shifts(j):
            assert (j - 1, tuple(int(x) for x in k // 2)) in pairs


def test_lattice_coupling_is_monotone_in_beta():
    lo = sample_tree(TreeParams(2, 0.25), 5, np.random.default_rng(7))
    hi = sample_tree(TreeParams(2, 0.75), 5, np.random.default_rng(7))
    assert lo.pairs() <= hi.pairs()


def test_truncate():
    tree = sample_tree(TreeParams(2, 0.6), 5, np.random.default_rng(3))
    short = tree.truncate(3)
    assert short.N == 3 and len(short.nodes) == 4
    with pytest.raises(ValueError):
        short.truncate(4)
    assert isinstance(short, ActiveIndexSet)


def test_extinction_examples():
    assert extinction_probability(TreeParams(2, 0.25)) == 1.0
    assert extinction_probability(TreeParams(1, 0.4)) == 1.0
    assert abs(extinction_probability(TreeParams(1, 0.75)) - 1 / 9) < 1e-12
    # oracle: smallest root in [0,1] of ((1+q)/2)^4 - q
    roots = np.roots(np.poly1d([1, 1]) ** 4 - np.poly1d([16, 0]))
    real = sorted(r.real for r in roots if abs(r.imag) < 1e-12 and 0 <= r.real <= 1)
    q = extinction_probability(TreeParams(2, 0.5))
    assert abs(q - real[0]) < 1e-12
    assert q == pytest.approx(0.0871, abs=5e-4)


def test_expected_nodes():
    assert expected_nodes_per_scale(TreeParams(3, 0.3), 0) == 1
    assert expected_nodes_per_scale(TreeParams(2, 0.5), 8) == 256
    assert expected_nodes_per_scale(TreeParams(2, 0.25), 5) == 1


def test_mean_nodes_per_scale():
    params = TreeParams(2, 0.5)
    sizes = sample_generation_sizes(params, 8, 10_000, np.random.default_rng(11))
    mean = sizes.mean(axis=0)
    se = sizes.std(axis=0, ddof=1) / np.sqrt(len(sizes))
    for j in range(9):
        target = expected_nodes_per_scale(params, j)
        assert abs(mean[j] - target) <= 3 * se[j] + 1e-12


def test_generation_sizes_match_tree_law():
    params = TreeParams(2, 0.4)
    rng = np.random.default_rng(5)
    trees = np.array([sample_tree(params, 4, rng, lattice=False).counts() for _ in range(3000)])
    sizes = sample_generation_sizes(params, 4, 3000, np.random.default_rng(6))
    for j in range(5):
        a, b = trees[:, j], sizes[:, j]
        se = np.sqrt(a.var() / len(a) + b.var() / len(b))
        assert abs(a.mean() - b.mean()) <= 4 * se + 1e-12
