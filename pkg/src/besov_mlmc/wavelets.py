"""Daubechies scaling/wavelet tables and periodized evaluation on dyadic grids.

Functions on the real line are tabulated once on a dyadic lattice by the
cascade algorithm; everything else (periodization, scaling, tensorization)
is done by table lookup.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class WaveletFamily:
    """Orthonormal Daubechies family DB(M) given by its low-pass filter."""

    name: str
    vanishing_moments: int
    filter: tuple[float, ...]
    hoelder_alpha: float

    def __post_init__(self):
        h = np.asarray(self.filter, dtype=float)
        if len(h) != 2 * self.vanishing_moments:
            raise ValueError(
                f"filter length {len(h)} != 2M = {2 * self.vanishing_moments}")
        if abs(h.sum() - SQRT2) > 1e-12:
            raise ValueError(f"filter sum {h.sum()!r} is not sqrt(2)")
        if abs((h * h).sum() - 1.0) > 1e-12:
            raise ValueError(f"filter energy {(h * h).sum()!r} is not 1")
        if self.hoelder_alpha <= 0:
            raise ValueError("hoelder_alpha must be positive")

    @property
    def M(self) -> int:
        return self.vanishing_moments

    @property
    def phi_support(self) -> tuple[int, int]:
        return 0, 2 * self.M - 1

    @property
    def psi_support(self) -> tuple[int, int]:
        return 1 - self.M, self.M

    @property
    def highpass(self) -> np.ndarray:
        """g_k = (-1)^k h_{1-k} for k = 2-2M, ..., 1 (ascending k)."""
        h = np.asarray(self.filter)
        ks = np.arange(2 - 2 * self.M, 2)
        return np.array([(-1) ** int(k) * h[1 - k] for k in ks])


HAAR = WaveletFamily("haar", 1, (1 / SQRT2, 1 / SQRT2), 1.0)

# Daubechies (1992), Table 6.1, extremal-phase filters normalized to sum sqrt(2).
DB5 = WaveletFamily(
    "db5",
    5,
    (
        0.16010239797419293,
        0.6038292697971896,
        0.7243085284377729,
        0.13842814590132074,
        -0.24229488706638203,
        -0.032244869584638375,
        0.07757149384004572,
        -0.006241490212798274,
        -0.012580751999081999,
        0.0033357252854737712,
    ),
    1.177,
)

FAMILIES = {"haar": HAAR, "db1": HAAR, "db5": DB5}


def get_family(name: str) -> WaveletFamily:
    try:
        return FAMILIES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown wavelet family {name!r}") from None


@dataclass(eq=False)
class WaveletTable:
    """Samples of phi on [0, 2M-1] and psi on [1-M, M], step 2^-J.

    Values between lattice points are obtained by linear interpolation.
    """

    family: WaveletFamily
    J: int
    phi_values: np.ndarray
    psi_values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def step(self) -> float:
        return 2.0 ** -self.J

    def lattice(self, bit: int) -> np.ndarray:
        lo = self.family.psi_support[0] if bit else self.family.phi_support[0]
        n = len(self.psi_values if bit else self.phi_values)
        return lo + np.arange(n) * self.step

    def __call__(self, bit: int, x) -> np.ndarray:
        """phi (bit 0) or psi (bit 1) at the points x, zero off the support."""
        values = self.psi_values if bit else self.phi_values
        return np.interp(np.asarray(x, dtype=float), self.lattice(bit), values,
                         left=0.0, right=0.0)


def _integer_values(family: WaveletFamily) -> np.ndarray:
    """phi at 0, 1, ..., 2M-1 from the eigenvector of the refinement matrix."""
    h = np.asarray(family.filter)
    S = 2 * family.M - 1
    A = np.zeros((S + 1, S + 1))
    for m in range(S + 1):
        for k, hk in enumerate(h):
            if 0 <= 2 * m - k <= S:
                A[m, 2 * m - k] += SQRT2 * hk
    w, v = np.linalg.eig(A)
    i = int(np.argmin(np.abs(w - 1.0)))
    vals = np.real(v[:, i])
    return vals / vals.sum()


def _dyadic_refine(family: WaveletFamily, vals: np.ndarray, n: int) -> np.ndarray:
    """Given phi on step 2^-(n-1), return phi on step 2^-n (two-scale relation)."""
    h = np.asarray(family.filter)
    S = 2 * family.M - 1
    new = np.empty(S * 2 ** n + 1)
    new[::2] = vals
    odd = np.arange(1, S * 2 ** n, 2)
    acc = np.zeros(len(odd))
    half = 2 ** (n - 1)
    for k, hk in enumerate(h):
        idx = odd - k * half
        ok = (idx >= 0) & (idx <= S * half)
        acc[ok] += SQRT2 * hk * vals[idx[ok]]
    new[1::2] = acc
    return new


def _box_cascade(family: WaveletFamily, J: int) -> np.ndarray:
    """Cascade iterates started from the indicator of [0, 1).

    Returns the cell values of the J-th iterate, attached to the left end
    of each cell, plus a trailing zero at the right end of the support.
    """
    h = np.asarray(family.filter)
    S = 2 * family.M - 1
    c = np.zeros(S)
    c[0] = 1.0
    for n in range(1, J + 1):
        new = np.zeros(S * 2 ** n)
        up = 2 ** (n - 1)
        for k, hk in enumerate(h):
            end = min(len(new), k * up + len(c))
            new[k * up:end] += SQRT2 * hk * c[:end - k * up]
        c = new
    return np.append(c, 0.0)


def _psi_from_phi(family: WaveletFamily, phi: np.ndarray, J: int) -> np.ndarray:
    """psi(x) = sqrt2 sum_k g_k phi(2x - k) on the lattice of [1-M, M], step 2^-J."""
    lo, hi = family.psi_support
    m = np.arange(lo * 2 ** J, hi * 2 ** J + 1)
    out = np.zeros(len(m))
    S = 2 * family.M - 1
    g = family.highpass
    for k, gk in zip(range(2 - 2 * family.M, 2), g):
        idx = 2 * m - k * 2 ** J
        ok = (idx >= 0) & (idx <= S * 2 ** J)
        out[ok] += SQRT2 * gk * phi[idx[ok]]
    return out


def cascade(family: WaveletFamily, J: int, start: str = "dyadic") -> WaveletTable:
    """Tabulate phi and psi on the dyadic lattice of step 2^-J.

    ``start="dyadic"`` computes phi exactly at the integers and refines with
    the two-scale relation (values are exact up to round-off).  ``start="box"``
    runs the classical cascade from the Haar indicator; its error decays like
    2^(-J alpha).
    """
    if J < 1:
        raise ValueError("cascade depth J must be >= 1")
    if start == "dyadic":
        phi = _integer_values(family)
        for n in range(1, J + 1):
            phi = _dyadic_refine(family, phi, n)
    elif start == "box":
        phi = _box_cascade(family, J)
    else:
        raise ValueError(f"unknown cascade start {start!r}")
    return WaveletTable(family, J, phi, _psi_from_phi(family, phi, J))


def minimal_scaling_shift(family: WaveletFamily, d: int) -> int:
    """Smallest w with 2^-w [-M+1, M]^d inside the open ball of radius 1/2."""
    if d not in (1, 2, 3):
        raise ValueError("d must be 1, 2 or 3")
    half_extent = max(abs(family.psi_support[0]), abs(family.psi_support[1]))
    w = 0
    while 2.0 ** -w * half_extent * math.sqrt(d) >= 0.5:
        w += 1
    return w


def _grid_points(R: int, midpoint: bool) -> np.ndarray:
    off = 0.5 if midpoint else 0.0
    return (np.arange(2 ** R) + off) * 2.0 ** -R


def basis_matrix(table: WaveletTable, j: int, bit: int, R: int,
                 midpoint: bool = False) -> sp.csr_matrix:
    """Sparse (2^j, 2^R) matrix of 2^(j/2) f(2^j x - k), periodized on [0, 1).

    Row k holds the values of the 1-D periodized function at the grid points;
    f is phi for ``bit == 0`` and psi otherwise.
    """
    key = (j, bit, R, midpoint)
    cached = table._cache.get(key)
    if cached is not None:
        return cached
    fam = table.family
    lo, hi = fam.psi_support if bit else fam.phi_support
    n = 2 ** R
    off = 0.5 if midpoint else 0.0
    ks = np.arange(2 ** j)
    # unwrapped grid indices i with (i + off)/n in [(k+lo)/2^j, (k+hi)/2^j]
    first = np.ceil((ks + lo) * n / 2 ** j - off).astype(np.int64)
    width = int(math.ceil((hi - lo) * n / 2 ** j)) + 2
    idx = first[:, None] + np.arange(width)[None, :]
    x = (idx + off) / n
    vals = 2.0 ** (j / 2) * table(bit, 2.0 ** j * x - ks[:, None])
    rows = np.broadcast_to(ks[:, None], idx.shape)
    mask = vals != 0.0
    mat = sp.coo_matrix((vals[mask], (rows[mask], np.mod(idx[mask], n))),
                        shape=(2 ** j, n)).tocsr()
    mat.sum_duplicates()
    table._cache[key] = mat
    return mat


def evaluate_periodized_1d(table: WaveletTable, j: int, k: int, bit: int, R: int,
                           midpoint: bool = False) -> sp.csr_matrix:
    """One row of ``basis_matrix`` as a sparse 1 x 2^R vector."""
    if not 0 <= k < 2 ** j:
        raise ValueError(f"shift {k} outside K_{j}")
    return basis_matrix(table, j, bit, R, midpoint)[k]


def evaluate_tensor(table: WaveletTable, j: int, k, l, R: int,
                    midpoint: bool = False) -> np.ndarray:
    """Dense d-array of the periodized tensor wavelet psi^l_{j,k} on the grid."""
    k = tuple(int(x) for x in np.atleast_1d(k))
    l = tuple(int(x) for x in np.atleast_1d(l))
    if len(k) != len(l):
        raise ValueError("k and l must have the same length")
    if j >= 1 and not any(l):
        raise ValueError("l = 0 is only admissible at scale 0")
    out = np.ones(())
    for ki, li in zip(k, l):
        row = evaluate_periodized_1d(table, j, ki, li, R, midpoint).toarray().ravel()
        out = np.multiply.outer(out, row)
    return out


def tensor_support_count(table: WaveletTable, j: int, k, l, R: int,
                         midpoint: bool = False) -> int:
    """Number of grid points carrying a nonzero value of psi^l_{j,k}."""
    count = 1
    for ki, li in zip(np.atleast_1d(k), np.atleast_1d(l)):
        count *= basis_matrix(table, j, int(li), R, midpoint)[int(ki)].nnz
    return count
