from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from avsfe.femspace import (BROKEN, CONTINUOUS, Field, FESpace, edge_local_nodes, edge_quadrature,
                            eval_basis, lagrange_basis, lagrange_nodes, make_space, n_local,
                            normal_trace_eval, outward_normal, trace_eval, triangle_quadrature)
from avsfe.mesh import LOCAL_EDGES, bisect, build_rectangle_mesh

UNIT = ((0.0, 1.0), (0.0, 1.0))


def monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def poly(deg, coeffs):
    exps = [(i, k - i) for k in range(deg + 1) for i in range(k + 1)]

    def f(X):
        X = np.atleast_2d(X)
        return sum(c * X[:, 0] ** i * X[:, 1] ** j for c, (i, j) in zip(coeffs, exps))
    return f, len(exps)


@pytest.mark.parametrize("order", range(0, 11))
def test_triangle_quadrature_exact(order):
    q = triangle_quadrature(order)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            val = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert val == pytest.approx(monomial_integral(a, b), rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("order", range(0, 11))
def test_edge_quadrature_exact(order):
    q = edge_quadrature(order)
    for a in range(order + 1):
        assert np.sum(q.weights * q.points**a) == pytest.approx(1.0 / (a + 1), rel=1e-13)


def test_quadrature_rejects_negative():
    with pytest.raises(ValueError):
        triangle_quadrature(-1)


@pytest.mark.parametrize("p", [1, 2, 3])
class TestLagrangeBasis:
    def test_kronecker(self, p):
        phi, _ = lagrange_basis(p, lagrange_nodes(p))
        assert np.allclose(phi, np.eye(n_local(p)), atol=1e-12)

    @given(pts=st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=6))
    def test_partition_of_unity(self, p, pts):
        phi, dphi = lagrange_basis(p, np.array(pts))
        assert np.allclose(phi.sum(axis=1), 1.0)
        assert np.allclose(dphi.sum(axis=1), 0.0, atol=1e-10)

    def test_gradient_matches_finite_difference(self, p):
        x = np.array([[0.21, 0.33]])
        d = 1e-6
        _, dphi = lagrange_basis(p, x)
        fx = (lagrange_basis(p, x + [d, 0])[0] - lagrange_basis(p, x - [d, 0])[0]) / (2 * d)
        fy = (lagrange_basis(p, x + [0, d])[0] - lagrange_basis(p, x - [0, d])[0]) / (2 * d)
        assert np.allclose(dphi[0, :, 0], fx[0], atol=1e-7)
        assert np.allclose(dphi[0, :, 1], fy[0], atol=1e-7)

    def test_edge_nodes_lie_on_edge(self, p):
        nodes = lagrange_nodes(p)
        for k in range(3):
            a, b = nodes[LOCAL_EDGES[k]]
            for i in edge_local_nodes(p, k):
                c = nodes[i]
                assert abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0]) < 1e-14


@pytest.mark.parametrize("family", [CONTINUOUS, BROKEN])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_dof_counts(family, p):
    m = build_rectangle_mesh(UNIT, 3, 2)
    s = FESpace(m, family, p)
    if family == BROKEN:
        assert s.dof_count == m.n_triangles * n_local(p)
    else:
        expected = m.n_vertices + (p - 1) * m.n_edges + (1 if p == 3 else 0) * m.n_triangles
        assert s.dof_count == expected
    v = FESpace(m, family, p, ncomp=2)
    assert v.dof_count == 2 * s.dof_count


@pytest.mark.parametrize("family", [CONTINUOUS, BROKEN])
@pytest.mark.parametrize("p", [1, 2, 3])
@given(coeffs=st.lists(st.floats(-5, 5), min_size=10, max_size=10))
def test_interpolation_reproduces_polynomials(family, p, coeffs):
    m = bisect(build_rectangle_mesh(((-1.0, 0.5), (0.0, 2.0)), 2, 2), [0, 3])
    f, n = poly(p, coeffs)
    u = FESpace(m, family, p).interpolate(f)
    rng = np.random.default_rng(0)
    ref = rng.dirichlet([1, 1, 1], size=5)[:, 1:]
    tri = np.arange(m.n_triangles)
    vals = u.evaluate(tri, ref)[..., 0]
    pv = m.vertices[m.triangles]
    phys = pv[:, None, 0] + np.einsum("tij,qj->tqi", np.stack([pv[:, 1] - pv[:, 0], pv[:, 2] - pv[:, 0]], -1), ref)
    assert np.allclose(vals, f(phys.reshape(-1, 2)).reshape(vals.shape), atol=1e-10)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_gradient_of_interpolant(p):
    m = build_rectangle_mesh(UNIT, 2, 2)
    u = FESpace(m, CONTINUOUS, p).interpolate(lambda X: X[:, 0] ** p + 2 * X[:, 1])
    ref = np.array([[0.2, 0.3]])
    pv = m.vertices[m.triangles]
    x = pv[:, 0] + (pv[:, 1] - pv[:, 0]) * 0.2 + (pv[:, 2] - pv[:, 0]) * 0.3
    g = u.gradient(np.arange(m.n_triangles), ref)[:, 0, 0, :]
    assert np.allclose(g[:, 0], p * x[:, 0] ** (p - 1))
    assert np.allclose(g[:, 1], 2.0)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_continuous_traces_agree_across_edges(p, rng):
    m = bisect(build_rectangle_mesh(UNIT, 3, 3), [1, 7, 10])
    u = Field(FESpace(m, CONTINUOUS, p), rng.normal(size=FESpace(m, CONTINUOUS, p).dof_count))
    s = np.linspace(0, 1, 5)
    interior = np.flatnonzero(m.edge_tris[:, 1] >= 0)
    for e in interior:
        vals = []
        for t in m.edge_tris[e]:
            k = int(np.flatnonzero(m.tri_edges[t] == e)[0])
            a = m.triangles[t, LOCAL_EDGES[k, 0]]
            # parametrize both sides from the lower global vertex
            ss = s if a == m.edges[e, 0] else s[::-1]
            vals.append(trace_eval(u, t, k, ss))
        assert np.allclose(vals[0], vals[1], atol=1e-12)


def test_broken_space_is_discontinuous(rng):
    m = build_rectangle_mesh(UNIT, 1, 1)
    s = FESpace(m, BROKEN, 1)
    u = Field(s, rng.normal(size=s.dof_count))
    assert not np.allclose(trace_eval(u, 0, 0, [0.5]), trace_eval(u, 1, 0, [0.5]))


def test_normal_trace():
    m = build_rectangle_mesh(UNIT, 1, 1)
    w = FESpace(m, BROKEN, 2, ncomp=2).interpolate(lambda X: np.column_stack([np.ones(len(X)), 2 * np.ones(len(X))]))
    for t in range(m.n_triangles):
        for k in range(3):
            n = outward_normal(m, t, k)
            assert np.allclose(normal_trace_eval(w, t, k, [0.0, 0.4, 1.0]), n @ [1.0, 2.0])


@pytest.mark.parametrize("bad", [(0, 3), (5, 0)])
def test_trace_rejects_bad_edges(bad):
    m = build_rectangle_mesh(UNIT, 1, 1)
    u = FESpace(m, CONTINUOUS, 1).interpolate(lambda X: X[:, 0])
    with pytest.raises(ValueError):
        trace_eval(u, bad[0], bad[1], [0.5])


def test_vertex_values_and_vector_interpolation():
    m = build_rectangle_mesh(UNIT, 2, 2)
    for fam in (CONTINUOUS, BROKEN):
        q = make_space(m, fam, 2, "vector").interpolate(lambda X: X[:, ::-1])
        assert np.allclose(q.vertex_values(), m.vertices[:, ::-1])


def test_space_validation():
    m = build_rectangle_mesh(UNIT, 1, 1)
    with pytest.raises(ValueError):
        FESpace(m, "nedelec", 1)
    with pytest.raises(ValueError):
        FESpace(m, CONTINUOUS, 4)
    with pytest.raises(ValueError):
        Field(FESpace(m, CONTINUOUS, 1), np.zeros(3))
    with pytest.raises(ValueError):
        eval_basis(FESpace(m, CONTINUOUS, 1), 9, [[0.1, 0.1]])
