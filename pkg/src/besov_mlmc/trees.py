"""Depth-truncated binomial Galton-Watson trees and their wavelet index sets.

A node of length j is a word over {1, ..., 2^d}.  Nodes are stored by their
0-based linear index ``I1(n) - 1``; child slot c of node m has index
``2^d m + (c - 1)``.  The shift k in K_j of a node is obtained by reading the
linear index as a Morton (bit-interleaved) code, so that the children of
(j, k) are exactly the 2^d dyadic subcells (j + 1, 2k + b), b in {0, 1}^d.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TreeParams:
    d: int
    beta: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError("d must be 1, 2 or 3")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    @property
    def gamma(self) -> float:
        return self.d + math.log2(self.beta) if self.beta > 0 else -math.inf


def node_to_linear(d: int, node) -> int:
    """1 + sum_i 2^(d(j-i)) (n_i - 1), the 1-based linear index of a node."""
    base = 2 ** d
    out = 0
    for entry in node:
        entry = int(entry)
        if not 1 <= entry <= base:
            raise ValueError(f"node entry {entry} outside 1..{base}")
        out = out * base + (entry - 1)
    return out + 1


def linear_to_node(d: int, j: int, n: int) -> tuple[int, ...]:
    base = 2 ** d
    if not 1 <= n <= base ** j:
        raise ValueError(f"linear index {n} outside 1..{base ** j}")
    digits = []
    m = n - 1
    for _ in range(j):
        m, r = divmod(m, base)
        digits.append(r + 1)
    return tuple(reversed(digits))


def morton_decode(d: int, j: int, m: np.ndarray) -> np.ndarray:
    """0-based linear indices (any shape) -> shifts, shape (..., d)."""
    m = np.asarray(m, dtype=np.int64)
    k = np.zeros(m.shape + (d,), dtype=np.int64)
    for level in range(j):
        digit = (m >> (d * (j - 1 - level))) & ((1 << d) - 1)
        for axis in range(d):
            bit = (digit >> (d - 1 - axis)) & 1
            k[..., axis] = (k[..., axis] << 1) | bit
    return k


def morton_encode(d: int, j: int, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    m = np.zeros(k.shape[:-1], dtype=np.int64)
    for level in range(j):
        digit = np.zeros(k.shape[:-1], dtype=np.int64)
        for axis in range(d):
            bit = (k[..., axis] >> (j - 1 - level)) & 1
            digit = (digit << 1) | bit
        m = (m << d) | digit
    return m


def linear_to_shift(d: int, j: int, n: int) -> tuple[int, ...]:
    """Shift k in K_j of the node with 1-based linear index n."""
    if not 1 <= n <= 2 ** (d * j):
        raise ValueError(f"linear index {n} outside 1..{2 ** (d * j)}")
    return tuple(int(x) for x in morton_decode(d, j, np.array(n - 1)))


def node_to_shift(d: int, node) -> tuple[int, ...]:
    return linear_to_shift(d, len(node), node_to_linear(d, node))


@dataclass
class ActiveIndexSet:
    """Per-scale sorted linear node indices of a depth-N tree."""

    d: int
    N: int
    nodes: list[np.ndarray]

    def shifts(self, j: int) -> np.ndarray:
        """Active shifts at scale j, shape (v(j), d), in node order."""
        return morton_decode(self.d, j, self.nodes[j])

    def counts(self) -> np.ndarray:
        return np.array([len(n) for n in self.nodes])

    def pairs(self) -> set[tuple[int, tuple[int, ...]]]:
        return {(j, tuple(int(x) for x in k))
                for j in range(self.N + 1) for k in self.shifts(j)}

    def truncate(self, N: int) -> "ActiveIndexSet":
        if N > self.N:
            raise ValueError(f"cannot truncate depth {self.N} tree to {N}")
        return ActiveIndexSet(self.d, N, self.nodes[:N + 1])

    def reaches(self, depth: int) -> bool:
        return depth <= self.N and len(self.nodes[depth]) > 0


def sample_tree(params: TreeParams, N: int, rng, lattice: bool = True) -> ActiveIndexSet:
    """Breadth-first sample of a GW tree with Bernoulli(beta) child slots.

    With ``lattice=True`` one uniform is drawn per lattice node of every scale
    1..N (indexed by the linear node index) and a child survives iff its parent
    survives and its uniform is below beta; trees for different beta sharing
    the same stream are then nested.  ``lattice=False`` draws uniforms for the
    child slots of surviving nodes only, so the cost is proportional to the
    tree size rather than to 2^(dN).
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    d = params.d
    nodes = [np.zeros(1, dtype=np.int64)]
    fan = 2 ** d
    for j in range(1, N + 1):
        parents = nodes[-1]
        children = (parents[:, None] * fan + np.arange(fan)[None, :]).ravel()
        if lattice:
            u = rng.random(2 ** (d * j))[children]
        else:
            u = rng.random(len(children))
        nodes.append(children[u < params.beta])
    return ActiveIndexSet(d, N, nodes)


def sample_generation_sizes(params: TreeParams, depth: int, n_trees: int, rng,
                            saturation: int = 10_000) -> np.ndarray:
    """Generation sizes Z_0..Z_depth of ``n_trees`` independent GW trees.

    Z_(j+1) ~ Bin(2^d Z_j, beta).  Populations above ``saturation`` are frozen,
    since such a tree dies out with probability at most q^saturation.
    Returns an int array of shape (n_trees, depth + 1).
    """
    fan = 2 ** params.d
    z = np.ones(n_trees, dtype=np.int64)
    out = np.empty((n_trees, depth + 1), dtype=np.int64)
    out[:, 0] = z
    for j in range(1, depth + 1):
        live = z < saturation
        z = z.copy()
        z[live] = rng.binomial(fan * z[live], params.beta)
        out[:, j] = z
    return out


def extinction_probability(params: TreeParams, tol: float = 1e-12) -> float:
    """Smallest root in [0, 1] of q = ((1 - beta) + beta q)^(2^d)."""
    fan = 2 ** params.d
    beta = params.beta
    if fan * beta <= 1.0:
        return 1.0
    q = 0.0
    while True:
        nxt = ((1.0 - beta) + beta * q) ** fan
        # contraction factor of the iteration near the fixed point
        slope = fan * beta * ((1.0 - beta) + beta * nxt) ** (fan - 1)
        if nxt - q <= tol * max(1.0 - slope, 1e-3):
            return nxt
        q = nxt


def expected_nodes_per_scale(params: TreeParams, j: int) -> float:
    return (2 ** params.d * params.beta) ** j
