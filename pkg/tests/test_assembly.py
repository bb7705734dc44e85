import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from avsfe.assembly import (NORMAL_EQUATION_MAX_ELEMENTS, SolverError, assemble_spacetime,
                            normal_equations_solution, solve, solve_normal_equations, tagged_scalar_dofs)
from avsfe.estimation import energy_estimate
from avsfe.mesh import Tag, bisect, build_rectangle_mesh, uniform_refine
from avsfe.problems import SPACE_TIME, eriksson_johnson_1d, manufactured
from avsfe.forms import spaces_for


def setup(expr="x**2 + x*t - t**2", n=3, p=2, dp=1, eps=0.2, **kw):
    spec = manufactured(expr, mode=SPACE_TIME, eps=eps, b=(1.0,))
    mesh = build_rectangle_mesh(spec.bounds, n, n, spec.tagging)
    spaces = spaces_for(spec, mesh, p=p, dp=dp)
    return spec, mesh, spaces, assemble_spacetime(spec, mesh, spaces, **kw)


class TestSystem:
    def test_matrix_is_symmetric_with_expected_size(self):
        _, _, spaces, system = setup()
        K = system.matrix
        n_free = spaces.n_trial - len(system.fixed)
        assert K.shape == (spaces.n_test + n_free,) * 2
        assert abs(K - K.T).max() == 0.0
        assert system.dof_count == spaces.n_trial + spaces.n_test

    def test_initial_time_dofs_are_fixed(self):
        spec, mesh, spaces, system = setup()
        dofs = tagged_scalar_dofs(spaces.u, Tag.INITIAL_TIME)
        assert len(dofs) == 2 * 3 + 1  # P2 on three bottom edges
        assert np.array_equal(system.fixed, np.sort(dofs))
        X = spaces.u.node_coordinates()[system.fixed]
        assert np.allclose(system.fixed_values, spec.exact.u(X[:, :1], X[:, 1]))

    def test_strong_dirichlet_adds_side_dofs(self):
        _, _, spaces, weak = setup()
        _, _, _, strong = setup(strong_dirichlet=True)
        inflow = tagged_scalar_dofs(spaces.u, Tag.INFLOW)
        assert set(strong.fixed) == set(weak.fixed) | set(inflow)

    def test_u0_override(self):
        _, _, _, system = setup(u0=lambda x: np.full(len(x), 7.0))
        assert np.allclose(system.fixed_values, 7.0)

    def test_requires_space_time_mesh(self):
        spec = manufactured("x", mode=SPACE_TIME)
        mesh = build_rectangle_mesh(spec.bounds, 2, 2)  # no initial-time edges
        with pytest.raises(ValueError, match="initial_time"):
            assemble_spacetime(spec, mesh, spaces_for(spec, mesh))
        spatial = manufactured("x")
        with pytest.raises(ValueError, match="space-time"):
            assemble_spacetime(spatial, mesh, spaces_for(spatial, mesh))


@pytest.mark.parametrize("condense", [False, True])
@pytest.mark.parametrize("expr,p", [("1 + x - 2*t", 1), ("x**2 + x*t - t**2", 2)])
def test_exact_solution_in_trial_space_is_reproduced(expr, p, condense):
    spec, mesh, spaces, system = setup(expr, p=p)
    sol = solve(system, condense=condense)
    X = spaces.u.node_coordinates()
    assert np.allclose(sol.u.coeffs, spec.exact.u(X[:, :1], X[:, 1]), atol=1e-10)
    assert np.abs(sol.e).max() < 1e-10
    assert energy_estimate(system, sol).total < 1e-10


@pytest.mark.parametrize("strong", [False, True])
@pytest.mark.parametrize("p,dp", [(1, 0), (1, 1), (2, 1)])
def test_saddle_matches_normal_equations(p, dp, strong):
    spec = eriksson_johnson_1d(0.1)
    mesh = bisect(build_rectangle_mesh(spec.bounds, 3, 2, spec.tagging), [1, 4])
    spaces = spaces_for(spec, mesh, p=p, dp=dp)
    system = assemble_spacetime(spec, mesh, spaces, strong_dirichlet=strong)
    x_ne = normal_equations_solution(system)
    for condense in (False, True):
        x = solve(system, condense=condense).x
        assert np.linalg.norm(x - x_ne) <= 1e-8 * np.linalg.norm(x_ne)


def test_solve_normal_equations_helper():
    spec, mesh, spaces, system = setup("sin(x) + t", p=1)
    ref = solve(system).x
    assert np.allclose(solve_normal_equations(spec, mesh, spaces).x, ref, rtol=1e-9, atol=1e-12)


def test_normal_equation_size_limit():
    spec, mesh, spaces, _ = setup()
    big = uniform_refine(mesh, 4)
    assert big.n_triangles > NORMAL_EQUATION_MAX_ELEMENTS
    with pytest.raises(ValueError, match="limited"):
        normal_equations_solution(assemble_spacetime(spec, big, spaces_for(spec, big)))


@settings(max_examples=10)
@given(seed=st.integers(0, 2**31), condense=st.booleans())
def test_residual_orthogonal_to_trial_space(seed, condense):
    """Second block row: A_free^T e = 0 for arbitrary loads."""
    _, _, spaces, system = setup("exp(x)*t", p=1, n=2)
    rng = np.random.default_rng(seed)
    sys2 = system.with_load(rng.normal(size=spaces.n_test), rng.normal(size=len(system.fixed)))
    sol = solve(sys2, condense=condense)
    Ae = sys2.A[:, sys2.free].T @ sol.e
    assert np.abs(Ae).max() <= 1e-9 * (1 + np.abs(sys2.reduced_load()).max())
    assert sol.orthogonality == pytest.approx(np.abs(Ae).max(), abs=1e-12)
    # first block row: G e + A x = F
    r = sys2.G @ sol.e + sys2.A @ sol.x - sys2.F
    assert np.abs(r).max() < 1e-9 * (1 + np.abs(sys2.F).max())


@settings(max_examples=10)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_solution_is_linear_in_the_load(a, b):
    _, _, spaces, system = setup("x*t", p=1, n=2)
    rng = np.random.default_rng(1)
    F1, F2 = rng.normal(size=(2, spaces.n_test))
    z = np.zeros(len(system.fixed))
    x1 = solve(system.with_load(F1, z)).x
    x2 = solve(system.with_load(F2, z)).x
    x12 = solve(system.with_load(a * F1 + b * F2, z)).x
    assert np.allclose(x12, a * x1 + b * x2, atol=1e-9 * (1 + abs(a) + abs(b)))


def test_with_load_reuses_factorization():
    _, _, spaces, system = setup()
    solve(system)
    lu = system._cache["lu_full"]
    other = system.with_load(np.zeros(spaces.n_test), np.zeros(len(system.fixed)))
    sol = solve(other)
    assert other._cache["lu_full"] is lu
    assert np.allclose(sol.x[other.free], 0.0)


def test_minimizes_residual_norm():
    """The trial solution minimizes ||F - A x||_{G^-1} over admissible x."""
    spec, mesh, spaces, system = setup("sin(3*x)*exp(t)", p=1, n=3)
    sol = solve(system)
    G = system.G.toarray()

    def J(x):
        r = system.F - system.A @ x
        return r @ np.linalg.solve(G, r)

    rng = np.random.default_rng(5)
    for _ in range(5):
        d = np.zeros(spaces.n_trial)
        d[system.free] = rng.normal(size=len(system.free))
        assert J(sol.x + 1e-3 * d) > J(sol.x)
    assert J(sol.x) == pytest.approx(sol.e @ G @ sol.e, rel=1e-8)


def test_indefinite_gram_raises_solver_error():
    _, _, _, system = setup(n=2)
    bad = replace(system, G_loc=-system.G_loc, _cache={})
    with pytest.raises(SolverError) as info:
        solve(bad)
    assert info.value.block == "error representation"


def test_rank_deficient_trial_block_raises_solver_error():
    _, _, spaces, system = setup(n=2, p=1)
    A = system.A_loc.copy()
    A[:, :, spaces.u.nb:] = 0.0  # q decoupled from every test function
    with pytest.raises(SolverError) as info:
        solve(replace(system, A_loc=A, _cache={}))
    assert "trial" in info.value.block
