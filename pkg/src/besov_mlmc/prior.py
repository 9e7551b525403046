"""Besov random tree priors: p-exponential wavelet series gated by GW trees."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .trees import ActiveIndexSet, TreeParams, sample_tree
from .wavelets import DB5, WaveletFamily, WaveletTable, basis_matrix, cascade

log = logging.getLogger(__name__)

EXP_LIMIT = 700.0


class DegenerateSample(RuntimeError):
    """A field realization whose exponential would overflow."""


@dataclass(frozen=True)
class PriorParams:
    s: float
    p: float
    kappa: float
    tree: TreeParams
    N: int
    wavelet: WaveletFamily = DB5

    def __post_init__(self):
        if self.s <= 0 or self.kappa <= 0:
            raise ValueError("s and kappa must be positive")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.s * self.p <= self.d:
            raise ValueError(f"need s*p > d, got s={self.s}, p={self.p}, d={self.d}")
        if self.s > self.wavelet.hoelder_alpha:
            log.debug("s=%g exceeds the Hoelder exponent %g of %s", self.s,
                      self.wavelet.hoelder_alpha, self.wavelet.name)
        if self.N < 0:
            raise ValueError("N must be >= 0")

    @property
    def d(self) -> int:
        return self.tree.d

    def with_truncation(self, N: int) -> "PriorParams":
        return PriorParams(self.s, self.p, self.kappa, self.tree, N, self.wavelet)

    def as_dict(self) -> dict:
        return {"s": self.s, "p": self.p, "kappa": self.kappa, "beta": self.tree.beta,
                "d": self.d, "N": self.N, "wavelet": self.wavelet.name}


def eta(j: int, s: float, p: float, d: int) -> float:
    """Scale weight 2^(-j(s + d/2 - d/p))."""
    return 2.0 ** (-j * (s + d / 2 - d / p))


def n_types(d: int, j: int) -> int:
    return 2 ** d if j == 0 else 2 ** d - 1


def type_bits(d: int, j: int) -> np.ndarray:
    """Rows are the l in L_j, ordered as binary numbers (axis 0 = leading bit)."""
    ls = np.array([[(c >> (d - 1 - i)) & 1 for i in range(d)] for c in range(2 ** d)])
    return ls if j == 0 else ls[1:]


def sample_p_exponential(p: float, kappa: float, rng, size=None):
    """Draws with density proportional to exp(-|x|^p / kappa).

    p = 2 and p = 1 are sampled directly (normal with variance kappa/2,
    Laplace with scale kappa); other p by acceptance-rejection against a
    Laplace proposal of scale kappa^(1/p).
    """
    if p < 1 or kappa <= 0:
        raise ValueError("need p >= 1 and kappa > 0")
    if p == 2:
        return rng.normal(0.0, math.sqrt(kappa / 2), size)
    if p == 1:
        return rng.laplace(0.0, kappa, size)
    n = 1 if size is None else int(np.prod(size))
    # with x = kappa^(1/p) u the target is exp(-|u|^p), the proposal exp(-|u|);
    # log ratio -|u|^p + |u| peaks at u* = p^(-1/(p-1))
    u_star = p ** (-1.0 / (p - 1.0))
    log_bound = u_star - u_star ** p
    out = np.empty(n)
    filled = 0
    while filled < n:
        batch = max(16, int(1.5 * (n - filled)))
        u = rng.laplace(0.0, 1.0, batch)
        a = np.abs(u)
        accept = np.log(rng.random(batch)) <= a - a ** p - log_bound
        take = u[accept][: n - filled]
        out[filled:filled + len(take)] = take
        filled += len(take)
    out *= kappa ** (1.0 / p)
    return out[0] if size is None else out.reshape(size)


@dataclass
class FieldRealization:
    """Active index set plus coefficients X[j] of shape (v(j), |L_j|)."""

    params: PriorParams
    active: ActiveIndexSet
    coefficients: list[np.ndarray]

    @property
    def N(self) -> int:
        return self.active.N

    def truncate(self, N: int) -> "FieldRealization":
        return FieldRealization(self.params.with_truncation(N), self.active.truncate(N),
                                self.coefficients[:N + 1])

    def n_coefficients(self) -> int:
        return sum(c.size for c in self.coefficients)

    def scaled(self, factor: float) -> "FieldRealization":
        return FieldRealization(self.params, self.active,
                                [factor * c for c in self.coefficients])

    def __add__(self, other: "FieldRealization") -> "FieldRealization":
        if any(not np.array_equal(a, b) for a, b in zip(self.active.nodes, other.active.nodes)):
            raise ValueError("realizations must share the same tree")
        return FieldRealization(self.params, self.active,
                                [a + b for a, b in zip(self.coefficients, other.coefficients)])


def sample_field(params: PriorParams, tree_rng, coef_rng,
                 lattice: bool = True) -> FieldRealization:
    """Sample b_{T,N}: a depth-N tree and i.i.d. coefficients on it.

    The two generators must be independent.  With ``lattice=True`` coefficients
    are drawn for every lattice index of each scale and then restricted to the
    tree, so realizations for different beta share coefficient values.
    """
    d = params.d
    active = sample_tree(params.tree, params.N, tree_rng, lattice=lattice)
    coefs = []
    for j in range(params.N + 1):
        nl = n_types(d, j)
        if lattice:
            full = sample_p_exponential(params.p, params.kappa, coef_rng,
                                        (2 ** (d * j), nl))
            coefs.append(full[active.nodes[j]])
        else:
            coefs.append(sample_p_exponential(params.p, params.kappa, coef_rng,
                                              (len(active.nodes[j]), nl)))
    return FieldRealization(params, active, coefs)


@dataclass
class GridField:
    """Values on the uniform grid of step 2^-R (lattice points or cell midpoints)."""

    R: int
    values: np.ndarray
    midpoint: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = 2 ** self.R
        if any(e != n for e in self.values.shape):
            raise ValueError(f"grid extents {self.values.shape} != {n}")

    @property
    def d(self) -> int:
        return self.values.ndim

    def points(self) -> np.ndarray:
        off = 0.5 if self.midpoint else 0.0
        return (np.arange(2 ** self.R) + off) * 2.0 ** -self.R


def cascade_depth(N: int, R: int, t: float, alpha: float) -> int:
    """max(ceil(N t / alpha), R + 2): midpoints of grid R stay on the table lattice."""
    return max(math.ceil(N * t / alpha), R + 2, 1)


_TABLES: dict[tuple[str, int], WaveletTable] = {}


def table_for(family: WaveletFamily, J: int) -> WaveletTable:
    key = (family.name, J)
    if key not in _TABLES:
        _TABLES[key] = cascade(family, J)
    return _TABLES[key]


def evaluate_field(field_: FieldRealization, R: int, midpoint: bool = False,
                   table: WaveletTable | None = None, t: float | None = None,
                   count: bool = False):
    """b_{T,N} on the 2^R grid by summing sparse tensor contributions per scale.

    Returns a GridField, or (GridField, touched) when ``count`` is set, where
    touched is the number of grid-point updates performed.
    """
    params = field_.params
    d = params.d
    if table is None:
        tt = t if t is not None else params.s - d / params.p
        table = table_for(params.wavelet, cascade_depth(field_.N, R, tt,
                                                        params.wavelet.hoelder_alpha))
    n = 2 ** R
    out = np.zeros((n,) * d)
    touched = 0
    for j in range(field_.N + 1):
        nodes = field_.active.nodes[j]
        if len(nodes) == 0:
            continue
        ks = field_.active.shifts(j)
        X = field_.coefficients[j] * eta(j, params.s, params.p, d)
        B = [basis_matrix(table, j, 0, R, midpoint), basis_matrix(table, j, 1, R, midpoint)]
        bits = type_bits(d, j)
        if count:
            nnz = [np.diff(b.indptr) for b in B]
            for l in bits:
                per = np.ones(len(ks), dtype=np.int64)
                for axis in range(d):
                    per *= nnz[l[axis]][ks[:, axis]]
                touched += int(per.sum())
        if d == 2 and X.size * n * n <= DENSE_LIMIT:
            out += _dense_scale_2d(table, j, R, midpoint, X, ks, bits)
        else:
            for li, l in enumerate(bits):
                out += _scale_contribution(X[:, li], ks, l, B, d, n)
    grid = GridField(R, out, midpoint, {"N": field_.N, **params.as_dict()})
    return (grid, touched) if count else grid


DENSE_LIMIT = 4_000_000


def _dense_basis(table: WaveletTable, j: int, bit: int, R: int, midpoint: bool) -> np.ndarray:
    key = ("dense", j, bit, R, midpoint)
    cached = table._cache.get(key)
    if cached is None:
        cached = table._cache[key] = basis_matrix(table, j, bit, R, midpoint).toarray()
    return cached


def _dense_scale_2d(table, j, R, midpoint, X, ks, bits) -> np.ndarray:
    """sum over types l and shifts k of X psi^l_{j,k}, as one dense product G^T H."""
    Bd = [_dense_basis(table, j, 0, R, midpoint), _dense_basis(table, j, 1, R, midpoint)]
    G = np.concatenate([Bd[l[0]][ks[:, 0]] * X[:, li, None] for li, l in enumerate(bits)])
    H = np.concatenate([Bd[l[1]][ks[:, 1]] for l in bits])
    return G.T @ H


def _scale_contribution(coef, ks, l, B, d, n) -> np.ndarray:
    size = B[0].shape[0]
    if d == 1:
        return np.asarray(B[l[0]][ks[:, 0]].T @ coef).ravel()
    if d == 2:
        C = sp.csr_matrix((coef, (ks[:, 0], ks[:, 1])), shape=(size, size))
        return np.asarray((B[l[0]].T @ (C @ B[l[1]])).todense())
    out = np.zeros((n,) * d)
    for c, k in zip(coef, ks):
        term = np.array(c)
        for axis in range(d):
            term = np.multiply.outer(term, B[l[axis]][k[axis]].toarray().ravel())
        out += term
    return out


def coefficient_at_midpoints(field_: FieldRealization, R: int,
                             table: WaveletTable | None = None,
                             t: float | None = None) -> GridField:
    """exp(b_{T,N}) at the cell midpoints of the 2^R grid."""
    b = evaluate_field(field_, R, midpoint=True, table=table, t=t)
    if np.abs(b.values).max() > EXP_LIMIT:
        raise DegenerateSample(f"|b| = {np.abs(b.values).max():.3g} exceeds {EXP_LIMIT}")
    return GridField(R, np.exp(b.values), True, b.meta)


def besov_norm(field_: FieldRealization, t: float, q: float, max_scale: int | None = None) -> float:
    """B^t_{q,q} norm from the stored coefficients (q = inf gives the sup form)."""
    params = field_.params
    d = params.d
    top = field_.N if max_scale is None else min(max_scale, field_.N)
    if math.isinf(q):
        best = 0.0
        for j in range(top + 1):
            c = field_.coefficients[j]
            if c.size:
                w = 2.0 ** (j * (t + d / 2)) * eta(j, params.s, params.p, d)
                best = max(best, w * float(np.abs(c).max()))
        return best
    total = 0.0
    for j in range(top + 1):
        c = field_.coefficients[j]
        if c.size:
            w = 2.0 ** (j * (t + d / 2 - d / q)) * eta(j, params.s, params.p, d)
            total += w ** q * float((np.abs(c) ** q).sum())
    return total ** (1.0 / q)


def write_grid_field(path, grid: GridField, fmt: str | None = None) -> None:
    """Write a GridField as CSV (rows = first axis) or raw float64 with a JSON header."""
    path = str(path)
    fmt = fmt or ("bin" if path.endswith(".bin") else "csv")
    header = {"d": grid.d, "R": grid.R, "grid": "midpoint" if grid.midpoint else "lattice",
              "params": grid.meta}
    if fmt == "csv":
        if grid.d > 2:
            raise ValueError("CSV output supports d <= 2")
        rows = grid.values.reshape(2 ** grid.R, -1)
        with open(path, "w") as fh:
            fh.write(f"# {json.dumps(header, sort_keys=True)}\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
            fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_grid_field(path) -> GridField:
    path = str(path)
    with open(path, "rb") as fh:
        first = fh.readline().decode()
        if first.startswith("# "):
            header = json.loads(first[2:])
            rows = [np.array(line.decode().split(","), dtype=float) for line in fh if line.strip()]
            values = np.array(rows)
            if header["d"] == 1:
                values = values.ravel()
        else:
            header = json.loads(first)
            n = 2 ** header["R"]
            values = np.frombuffer(fh.read(), dtype="<f8").reshape((n,) * header["d"]).copy()
    return GridField(header["R"], values, header["grid"] == "midpoint", header["params"])
