import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from besov_mlmc.fem import (MeshLevel, SolverError, assemble_load, assemble_stiffness,
                            energy_errors, half_interval_blocks, kron_stiffness,
                            mesh_for_width, prolongate, qoi_gradient_norm, solve,
                            solve_problem, unit_mass, unit_stiffness, DiscreteSolution)


def smooth_coefficient(n):
    x = (np.arange(n) + 0.5) / n
    return np.exp(np.sin(2 * np.pi * x)[:, None] * np.sin(2 * np.pi * x)[None, :])


def test_mesh_level():
    m = MeshLevel(3)
    assert m.h == 1 / 16 and m.n == 16 and m.h * m.n == 1.0
    assert m.ndof == 15 ** 2 and m.R == 4
    assert MeshLevel(4).h / m.h == 0.5
    assert mesh_for_width(1 / 64).level == 5
    with pytest.raises(ValueError):
        mesh_for_width(0.3)


def test_banded_blocks():
    S, M = half_interval_blocks(8)
    h = 1 / 8
    S, M = S.toarray(), M.toarray()
    assert np.allclose(np.diag(S), 1 / h) and np.allclose(np.diag(S, -1), -1 / h)
    assert np.allclose(np.diag(M), h / 3) and np.allclose(np.diag(M, -1), h / 6)
    assert np.count_nonzero(np.triu(S, 1)) == 0 and np.count_nonzero(np.triu(M, 1)) == 0


def test_unit_coefficient_is_tensor_laplacian():
    m = MeshLevel(2)
    A = assemble_stiffness(m, np.ones((m.n, m.n)))
    S, M = half_interval_blocks(m.n)
    Sf, Mf = (S + S.T), (M + M.T)
    S2 = sp.kron(Mf, Sf) + sp.kron(Sf, Mf)
    assert abs(A - S2).max() < 1e-13
    assert np.allclose(A.diagonal(), 8 / 3)


def test_direct_and_kron_assembly_agree(rng):
    for level in range(0, 5):
        m = MeshLevel(level)
        a = np.exp(rng.normal(size=(m.n, m.n)))
        assert abs(assemble_stiffness(m, a) - kron_stiffness(m.n, a)).max() < 1e-12


def test_assembly_against_element_loop(rng):
    n = 8
    a = np.exp(rng.normal(size=(n, n)))
    ke = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6
    full = np.zeros(((n + 1) ** 2,) * 2)
    for c1 in range(n):
        for c2 in range(n):
            corners = [(c1, c2), (c1 + 1, c2), (c1 + 1, c2 + 1), (c1, c2 + 1)]
            idx = [i1 + (n + 1) * i2 for i1, i2 in corners]
            full[np.ix_(idx, idx)] += a[c1, c2] * ke
    inner = [i1 + (n + 1) * i2 for i2 in range(1, n) for i1 in range(1, n)]
    A = assemble_stiffness(MeshLevel(2), a).toarray()
    assert np.abs(full[np.ix_(inner, inner)] - A).max() < 1e-13


@given(level=st.integers(0, 4), seed=st.integers(0, 2 ** 31), c=st.floats(0.01, 100))
def test_assembly_properties(level, seed, c):
    m = MeshLevel(level)
    a = np.exp(np.random.default_rng(seed).normal(size=(m.n, m.n)))
    A = assemble_stiffness(m, a)
    assert (A - A.T).nnz == 0 or abs(A - A.T).max() == 0
    assert np.all(A.diagonal() > 0)
    assert np.diff(A.indptr).max() <= 9
    # entries only couple nodes with |i1-j1|, |i2-j2| <= 1
    rows, cols = A.nonzero()
    m1 = m.n - 1
    assert np.all(np.abs(rows % m1 - cols % m1) <= 1)
    assert np.all(np.abs(rows // m1 - cols // m1) <= 1)
    B = assemble_stiffness(m, c * np.ones((m.n, m.n)))
    assert abs(B - c * unit_stiffness(m.n)).max() <= 1e-12 * c
    u = np.random.default_rng(seed + 1).normal(size=m.ndof)
    assert u @ (A @ u) > 0


def test_rejects_bad_coefficients():
    m = MeshLevel(1)
    with pytest.raises(ValueError):
        assemble_stiffness(m, np.zeros((4, 4)))
    with pytest.raises(ValueError):
        assemble_stiffness(m, np.ones((3, 3)))


def test_load():
    m = MeshLevel(3)
    assert np.allclose(assemble_load(m), m.h ** 2)
    assert np.all(assemble_load(m, 0.0) == 0)
    assert np.allclose(assemble_load(m, 2.5), 2.5 * m.h ** 2)


def test_solve_examples():
    assert solve(sp.csr_matrix([[8 / 3]]), np.array([1 / 16]))[0] == pytest.approx(3 / 128)
    sol = solve_problem(MeshLevel(0), np.ones((2, 2)))
    assert sol.u[0] == pytest.approx(3 / 32, rel=1e-14)
    A = unit_stiffness(8)
    assert np.all(solve(A, np.zeros(A.shape[0])) == 0)


@pytest.mark.parametrize("method", ["direct", "amg", "jacobi"])
def test_solver_residual(method):
    m = MeshLevel(5)
    A = assemble_stiffness(m, smooth_coefficient(m.n))
    F = assemble_load(m)
    u = solve(A, F, method=method)
    assert np.linalg.norm(F - A @ u) / np.linalg.norm(F) <= 1e-10


def test_solver_reports_non_convergence():
    m = MeshLevel(5)
    A = assemble_stiffness(m, smooth_coefficient(m.n))
    with pytest.raises(SolverError, match="residual"):
        solve(A, assemble_load(m), method="jacobi", maxiter=3)
    with pytest.raises(ValueError):
        solve(A, assemble_load(m), method="magic")


def test_non_finite_solution_rejected():
    with pytest.raises(SolverError):
        DiscreteSolution(MeshLevel(0), np.array([np.nan]))


def test_qoi_basics():
    m = MeshLevel(3)
    zero = DiscreteSolution(m, np.zeros(m.ndof))
    assert qoi_gradient_norm(zero) == 0
    sol = solve_problem(m, np.ones((m.n, m.n)))
    scaled = DiscreteSolution(m, -3 * sol.u)
    assert qoi_gradient_norm(scaled) == pytest.approx(3 * qoi_gradient_norm(sol), rel=1e-14)
    # for the Galerkin solution |u|_1^2 = F.u
    F = assemble_load(m)
    assert qoi_gradient_norm(sol) ** 2 == pytest.approx(F @ sol.u, rel=1e-10)


def test_qoi_exact_for_bilinear():
    # u = x(1-x) y(1-y) is not bilinear, but its interpolant's energy can be
    # integrated by hand: |I u|_1^2 = 2 (sum_i g_i^2 h)(sum (u_i - u_{i-1})^2 / h)
    n = 16
    h = 1 / n
    x = np.arange(1, n) * h
    g = x * (1 - x)
    U = np.outer(g, g)
    sol = DiscreteSolution(MeshLevel(3), U.ravel(order="F"))
    gp = np.concatenate([[0], g, [0]])
    mass = (gp[:-1] ** 2 + gp[:-1] * gp[1:] + gp[1:] ** 2).sum() * h / 3
    stiff = (np.diff(gp) ** 2).sum() / h
    assert qoi_gradient_norm(sol) ** 2 == pytest.approx(2 * mass * stiff, rel=1e-12)


def test_prolongation_is_exact_for_bilinear_interpolants():
    n = 8
    x = np.arange(1, n) / n
    u = np.outer(np.sin(np.pi * x), x * (1 - x)).ravel(order="F")
    fine = prolongate(u, n, 2)
    sol = DiscreteSolution(MeshLevel(2), u)
    ref = DiscreteSolution(MeshLevel(4), fine)
    h1, l2 = energy_errors(sol, ref)
    assert h1 < 1e-13 and l2 < 1e-14
    # energy norm of the prolongated function is preserved
    assert qoi_gradient_norm(ref) == pytest.approx(qoi_gradient_norm(sol), rel=1e-12)


def test_energy_errors_match_matrix_forms():
    ref = solve_problem(MeshLevel(5), smooth_coefficient(64))
    sol = solve_problem(MeshLevel(2), smooth_coefficient(8))
    e = prolongate(sol.u, 8, 3) - ref.u
    h1, l2 = energy_errors(sol, ref)
    assert h1 == pytest.approx(np.sqrt(e @ (unit_stiffness(64) @ e)), rel=1e-10)
    assert l2 == pytest.approx(np.sqrt(e @ (unit_mass(64) @ e)), rel=1e-10)
    with pytest.raises(ValueError):
        energy_errors(ref, sol)


def test_self_convergence_of_qoi():
    psi = {}
    for level in (6, 7, 8):
        m = MeshLevel(level)
        psi[level] = qoi_gradient_norm(solve_problem(m, np.ones((m.n, m.n))))
    # second order: successive differences shrink by four
    r = (psi[7] - psi[6]) / (psi[8] - psi[7])
    assert 3.5 < r < 4.5
    extrapolated = psi[8] + (psi[8] - psi[7]) / 3
    assert abs(psi[8] - extrapolated) / extrapolated < 1e-3


def test_lattice_values():
    sol = solve_problem(MeshLevel(1), np.ones((4, 4)))
    U = sol.lattice_values()
    assert U.shape == (5, 5)
    assert np.all(U[0] == 0) and np.all(U[:, -1] == 0)
    assert np.allclose(U, U.T)
