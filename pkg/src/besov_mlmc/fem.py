"""Bilinear finite elements on the unit square, homogeneous Dirichlet data.

Degrees of freedom are the interior nodes (i1 h, i2 h), 1 <= i1, i2 <= n-1,
ordered lexicographically with i1 fastest.  The diffusion coefficient enters
through its values at the n x n cell midpoints (midpoint quadrature).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

H0 = 0.5
DIRECT_LIMIT = 20_000


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeshLevel:
    """Uniform mesh of [0,1]^2 with h = 2^-level h0."""

    level: int
    h0: float = H0

    @property
    def h(self) -> float:
        return self.h0 * 2.0 ** -self.level

    @property
    def n(self) -> int:
        return round(1.0 / self.h)

    @property
    def R(self) -> int:
        """Dyadic resolution of the midpoint grid (n = 2^R)."""
        return self.n.bit_length() - 1

    @property
    def ndof(self) -> int:
        return (self.n - 1) ** 2


def mesh_for_width(h: float) -> MeshLevel:
    level = round(np.log2(H0 / h))
    mesh = MeshLevel(level)
    if abs(mesh.h - h) > 1e-14:
        raise ValueError(f"h={h} is not a dyadic refinement of h0={H0}")
    return mesh


@lru_cache(maxsize=16)
def half_interval_blocks(n: int):
    """(S, M): stiffness/mass of the hats restricted to the interval left of node i1.

    S = (1/h)(I - E), M = (h/6)(2I + E) with E the subdiagonal shift; their
    transposes are the contributions of the interval right of i1.
    """
    h = 1.0 / n
    m = n - 1
    E = sp.eye(m, k=-1, format="csr")
    I = sp.eye(m, format="csr")
    S = ((I - E) / h).tocsr()
    M = (h / 3 * I + h / 6 * E).tocsr()
    return S, M


def kron_stiffness(n: int, a: np.ndarray) -> sp.csr_matrix:
    """Reference assembly as the sum of four Kronecker blocks.

    Row i = (i1, i2) picks up a(cell) for the four cells around node i, each
    multiplying (S_a M_b + M_a S_b) with a, b the matching half-intervals (the
    left interval carries S, M and the right one their transposes).
    """
    S, M = half_interval_blocks(n)
    one = {0: (S, M), 1: (S.T.tocsr(), M.T.tocsr())}
    A = None
    for q1 in (0, 1):
        for q2 in (0, 1):
            S1, M1 = one[q1]
            S2, M2 = one[q2]
            # i1 fastest: row index = i1 + (n-1) i2, so axis 2 is the outer factor
            K = sp.kron(M2, S1) + sp.kron(S2, M1)
            cells = a[q1:n - 1 + q1, q2:n - 1 + q2]
            term = sp.diags(cells.ravel(order="F")) @ K
            A = term if A is None else A + term
    return A.tocsr()


# element matrices of the bilinear hats on a square cell; corner p sits at
# offset _CORNERS[p] from the cell's lower-left node
_CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))
_KE = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6.0
_ME = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36.0


def assemble_stiffness(mesh: MeshLevel, coefficient) -> sp.csr_matrix:
    """Stiffness matrix for a piecewise constant coefficient on the n x n cells.

    ``coefficient`` is an (n, n) array (or a GridField) indexed [c1, c2] by
    cell.  The nine stencil diagonals are accumulated from the element matrix,
    which gives the same entries as ``kron_stiffness`` without forming the
    Kronecker products.
    """
    a = np.asarray(getattr(coefficient, "values", coefficient), dtype=float)
    n = mesh.n
    if a.shape != (n, n):
        raise ValueError(f"coefficient grid {a.shape} does not match mesh n={n}")
    if not np.all(a > 0):
        raise ValueError("coefficient must be strictly positive")
    m = n - 1
    diags = {}
    for p, op in enumerate(_CORNERS):
        for q, oq in enumerate(_CORNERS):
            delta = (oq[0] - op[0], oq[1] - op[1])
            # node of corner p in cell c is c + op; store on the full lattice
            V = diags.get(delta)
            if V is None:
                V = diags[delta] = np.zeros((n + 1, n + 1))
            V[op[0]:op[0] + n, op[1]:op[1] + n] += _KE[p, q] * a
    bands = {}
    for (d1, d2), V in sorted(diags.items()):
        vals = V[1:n, 1:n].copy()
        # drop couplings to boundary nodes (they wrap around in the flat ordering)
        if d1 == 1:
            vals[-1, :] = 0.0
        elif d1 == -1:
            vals[0, :] = 0.0
        flat = vals.ravel(order="F")
        off = d1 + m * d2
        # dia storage: column j of the band holds A[j - off, j]
        band = np.zeros(m * m)
        if off >= 0:
            band[off:] = flat[:m * m - off]
        else:
            band[:off] = flat[-off:]
        # on meshes with n <= 3 two stencil directions can share a flat offset;
        # their nonzero entries never overlap, so the bands simply add
        bands[off] = bands[off] + band if off in bands else band
    offsets = sorted(bands)
    data = np.array([bands[o] for o in offsets])
    A = sp.dia_matrix((data, np.array(offsets)), shape=(m * m, m * m))
    return A.tocsr()


@lru_cache(maxsize=16)
def unit_stiffness(n: int) -> sp.csr_matrix:
    return assemble_stiffness(mesh_for_width(1.0 / n), np.ones((n, n)))


@lru_cache(maxsize=16)
def unit_mass(n: int) -> sp.csr_matrix:
    S, M = half_interval_blocks(n)
    Mf = (M + M.T).tocsr()
    return sp.kron(Mf, Mf).tocsr()


def assemble_load(mesh: MeshLevel, f: float = 1.0) -> np.ndarray:
    """Load vector for a constant source: every hat integrates to h^2."""
    return np.full(mesh.ndof, f * mesh.h ** 2)


@dataclass
class DiscreteSolution:
    mesh: MeshLevel
    u: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.u)):
            raise SolverError("non-finite solution entries")

    def lattice_values(self) -> np.ndarray:
        """Nodal values on the full (n+1) x (n+1) lattice including the boundary."""
        n = self.mesh.n
        out = np.zeros((n + 1, n + 1))
        out[1:n, 1:n] = self.u.reshape((n - 1, n - 1), order="F")
        return out


def solve(A: sp.spmatrix, F: np.ndarray, tol: float = 1e-10, method: str = "auto",
          maxiter: int = 2000) -> np.ndarray:
    """Solve A u = F to relative residual ``tol``.

    ``auto`` factorizes directly up to DIRECT_LIMIT unknowns and otherwise runs
    conjugate gradients preconditioned by one algebraic multigrid V-cycle.
    """
    F = np.asarray(F, dtype=float)
    normF = np.linalg.norm(F)
    if normF == 0.0:
        return np.zeros_like(F)
    n = A.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "amg"
    if method == "direct":
        if n <= 400:
            u = np.linalg.solve(A.toarray(), F)
        else:
            # minimum degree on A + A^T with symmetric pivoting suits the SPD stencil
            lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A",
                           diag_pivot_thresh=0.0, options={"SymmetricMode": True})
            u = lu.solve(F)
    elif method in ("amg", "jacobi"):
        if method == "amg":
            import pyamg

            # classical AMG: about half the memory of smoothed aggregation here
            ml = pyamg.ruge_stuben_solver(sp.csr_matrix(A))
            Mpre = ml.aspreconditioner(cycle="V")
        else:
            Mpre = sp.diags(1.0 / A.diagonal())
        u, info = spla.cg(A, F, rtol=tol * 0.5, maxiter=maxiter, M=Mpre)
        if info != 0:
            res = np.linalg.norm(F - A @ u) / normF
            raise SolverError(f"CG did not converge in {maxiter} iterations (residual {res:.3g})")
    else:
        raise ValueError(f"unknown method {method!r}")
    res = np.linalg.norm(F - A @ u) / normF
    if res > tol:
        # one step of iterative refinement usually recovers round-off losses
        u = u + solve(A, F - A @ u, tol=0.5, method=method)
        res = np.linalg.norm(F - A @ u) / normF
        if res > tol:
            raise SolverError(f"relative residual {res:.3g} above tolerance {tol:g}")
    return u


def solve_problem(mesh: MeshLevel, coefficient, f: float = 1.0, tol: float = 1e-10,
                  method: str = "auto") -> DiscreteSolution:
    A = assemble_stiffness(mesh, coefficient)
    F = assemble_load(mesh, f)
    u = solve(A, F, tol=tol, method=method)
    res = np.linalg.norm(F - A @ u) / np.linalg.norm(F) if f else 0.0
    return DiscreteSolution(mesh, u, res)


def qoi_gradient_norm(sol: DiscreteSolution) -> float:
    """||grad u||_L2, exact for the piecewise bilinear u."""
    K = unit_stiffness(sol.mesh.n)
    return float(np.sqrt(max(sol.u @ (K @ sol.u), 0.0)))


def prolongate(u: np.ndarray, n_coarse: int, levels: int = 1) -> np.ndarray:
    """Exact bilinear interpolation of interior nodal values to a finer mesh."""
    U = np.zeros((n_coarse + 1, n_coarse + 1))
    U[1:n_coarse, 1:n_coarse] = u.reshape((n_coarse - 1, n_coarse - 1), order="F")
    for _ in range(levels):
        m = U.shape[0] - 1
        V = np.zeros((2 * m + 1, 2 * m + 1))
        V[::2, ::2] = U
        V[1::2, ::2] = 0.5 * (U[:-1, :] + U[1:, :])
        V[::2, 1::2] = 0.5 * (U[:, :-1] + U[:, 1:])
        V[1::2, 1::2] = 0.25 * (U[:-1, :-1] + U[1:, :-1] + U[:-1, 1:] + U[1:, 1:])
        U = V
    return U[1:-1, 1:-1].ravel(order="F")


def _cell_quadratic_form(U: np.ndarray, K: np.ndarray) -> float:
    """Sum over cells of e^T K e, e the four corner values of the lattice array U."""
    corners = [U[:-1, :-1], U[1:, :-1], U[1:, 1:], U[:-1, 1:]]
    total = 0.0
    for a in range(4):
        for b in range(4):
            if K[a, b] != 0.0:
                total += K[a, b] * float(np.sum(corners[a] * corners[b]))
    return total


def energy_errors(sol: DiscreteSolution, ref: DiscreteSolution) -> tuple[float, float]:
    """(H1-seminorm error, L2 error) of ``sol`` against a finer nested ``ref``.

    Both norms are integrated exactly cell by cell without forming matrices,
    so references with millions of unknowns stay cheap.
    """
    levels = ref.mesh.level - sol.mesh.level
    if levels < 0:
        raise ValueError("reference must be on a finer mesh")
    n = ref.mesh.n
    E = np.zeros((n + 1, n + 1))
    E[1:n, 1:n] = (prolongate(sol.u, sol.mesh.n, levels) - ref.u).reshape((n - 1, n - 1), order="F")
    h1 = math.sqrt(max(_cell_quadratic_form(E, _KE), 0.0))
    l2 = math.sqrt(max(_cell_quadratic_form(E, _ME), 0.0)) * ref.mesh.h
    return h1, l2
