import numpy as np
import pytest
from hypothesis import given, strategies as st

from avsfe.mesh import (LOCAL_EDGES, SPACETIME_TAGS, Mesh, Tag, bisect, build_rectangle_mesh,
                        element_geometry, uniform_refine)

UNIT = ((0.0, 1.0), (0.0, 1.0))


def min_angle(mesh):
    p = mesh.vertices[mesh.triangles]
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", a, b) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
        angles.append(np.arccos(np.clip(cos, -1, 1)))
    return np.min(angles)


def tagged_length(mesh, tag):
    e = mesh.edges[mesh.edges_with_tag(tag)]
    return np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).sum()


def random_refinement(mesh, seed, rounds):
    rng = np.random.default_rng(seed)
    for _ in range(rounds):
        k = rng.integers(1, max(2, mesh.n_triangles // 3))
        mesh = bisect(mesh, rng.choice(mesh.n_triangles, size=k, replace=False))
    return mesh


class TestRectangle:
    def test_counts_and_tags(self):
        m = build_rectangle_mesh(((-1.0, 0.0), (0.0, 2.0)), 3, 2, SPACETIME_TAGS)
        assert m.n_triangles == 12
        assert m.n_vertices == 12
        assert m.n_edges == 12 + 12 - 1  # Euler: V - E + F = 1
        assert tagged_length(m, Tag.INITIAL_TIME) == pytest.approx(1.0)
        assert tagged_length(m, Tag.FINAL_TIME) == pytest.approx(1.0)
        assert tagged_length(m, Tag.INFLOW) == pytest.approx(4.0)
        m.validate()

    def test_refinement_edge_is_longest(self):
        m = build_rectangle_mesh(UNIT, 4, 3)
        p = m.vertices[m.triangles]
        lengths = np.linalg.norm(p[:, LOCAL_EDGES[:, 0]] - p[:, LOCAL_EDGES[:, 1]], axis=2)
        assert np.all(lengths[:, 0] >= lengths.max(axis=1) - 1e-14)

    def test_positive_orientation(self):
        assert np.all(build_rectangle_mesh(UNIT, 5, 5).signed_areas() > 0)

    @pytest.mark.parametrize("bounds", [((0.0, 0.0), (0.0, 1.0)), ((1.0, 0.0), (0.0, 1.0))])
    def test_degenerate_bounds(self, bounds):
        with pytest.raises(ValueError):
            build_rectangle_mesh(bounds, 2, 2)

    def test_unknown_side(self):
        with pytest.raises(ValueError, match="unknown side"):
            build_rectangle_mesh(UNIT, 2, 2, {"front": "inflow"})

    def test_tag_parse(self):
        assert Tag.parse("final_time") is Tag.FINAL_TIME
        assert Tag.parse(2) is Tag.OUTFLOW
        with pytest.raises(ValueError):
            Tag.parse("sideways")


class TestFromTriangles:
    def test_reorients_and_picks_longest_edge(self):
        verts = [[0, 0], [1, 0], [0, 1]]
        m = Mesh.from_triangles(verts, [[0, 2, 1]], {(0, 1): "inflow", (1, 2): "inflow", (0, 2): "inflow"})
        assert m.signed_areas()[0] > 0
        assert m.triangles[0, 0] == 0  # right angle opposite the hypotenuse

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            Mesh.from_triangles([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]], {})

    def test_edge_shared_by_three(self):
        verts = [[0, 0], [1, 0], [0, 1], [0, -1], [1, 1]]
        with pytest.raises(ValueError, match="more than two"):
            Mesh(verts, [[0, 1, 2], [1, 0, 3], [0, 1, 4]], {})

    def test_tag_on_missing_edge(self):
        with pytest.raises(ValueError, match="not in the mesh"):
            Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], {(0, 5): "inflow"})


def test_element_geometry():
    m = build_rectangle_mesh(((0.0, 2.0), (0.0, 1.0)), 1, 1)
    g = element_geometry(m, 0)
    assert g.area == pytest.approx(1.0)
    assert g.diameter == pytest.approx(np.sqrt(5.0))
    assert np.allclose(np.linalg.norm(g.normals, axis=1), 1.0)
    # outward normals integrate to zero around a closed triangle
    assert np.allclose((g.normals * g.edge_lengths[:, None]).sum(axis=0), 0.0)


class TestBisection:
    def test_single_bisection_splits_refinement_edge(self):
        m = build_rectangle_mesh(UNIT, 1, 1)
        r = bisect(m, [0])
        # closure also splits the neighbour across the shared diagonal
        assert r.n_triangles == 4
        assert r.n_vertices == 5
        assert np.allclose(r.vertices[-1], [0.5, 0.5])
        r.validate()

    def test_empty_marking_is_identity(self):
        m = build_rectangle_mesh(UNIT, 2, 2)
        assert bisect(m, []) is m

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            bisect(build_rectangle_mesh(UNIT, 1, 1), [7])

    def test_uniform_two_rounds_halves_h(self):
        m = build_rectangle_mesh(UNIT, 2, 2)
        r = uniform_refine(m, 2)
        assert r.n_triangles == 4 * m.n_triangles
        assert r.h_max() == pytest.approx(m.h_max() / 2)

    def test_uniform_refinement_is_similar(self):
        r = uniform_refine(build_rectangle_mesh(UNIT, 2, 2), 4)
        assert np.allclose(r.signed_areas(), r.signed_areas()[0])
        assert min_angle(r) == pytest.approx(np.pi / 4)

    @given(seed=st.integers(0, 10_000), rounds=st.integers(1, 4))
    def test_random_refinement_invariants(self, seed, rounds):
        m0 = build_rectangle_mesh(((-1.0, 0.0), (0.0, 1.0)), 2, 2, SPACETIME_TAGS)
        m = random_refinement(m0, seed, rounds)
        m.validate()  # conforming, oriented, every boundary edge tagged
        assert m.signed_areas().sum() == pytest.approx(1.0)
        for tag in Tag:
            if tag is not Tag.INTERIOR:
                assert tagged_length(m, tag) == pytest.approx(tagged_length(m0, tag))
        # bisecting a right isosceles triangle from its right angle gives two similar ones
        assert min_angle(m) == pytest.approx(np.pi / 4)

    @given(seed=st.integers(0, 10_000))
    def test_parents_cover_areas(self, seed):
        m0 = build_rectangle_mesh(UNIT, 3, 2)
        rng = np.random.default_rng(seed)
        marked = rng.choice(m0.n_triangles, size=3, replace=False)
        m = bisect(m0, marked)
        child_area = np.bincount(m.parents, weights=m.signed_areas(), minlength=m0.n_triangles)
        assert np.allclose(child_area, m0.signed_areas())
        assert set(marked) <= set(np.flatnonzero(np.bincount(m.parents) > 1))

    def test_equality(self):
        a = build_rectangle_mesh(UNIT, 2, 2)
        assert a == build_rectangle_mesh(UNIT, 2, 2)
        assert a != uniform_refine(a)
