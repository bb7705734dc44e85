import numpy as np
import pytest

from avsfe.estimation import spacetime_solver
from avsfe.femspace import Field
from avsfe.forms import spaces_for
from avsfe.mesh import build_rectangle_mesh
from avsfe.problems import SPACE_TIME, manufactured
from avsfe.slices import ADAPT_AFTER, ADAPT_BETWEEN, SliceConfig, Trace, sweep, transfer_trace


def slab(spec, window, n=(3, 2), p=1):
    mesh = build_rectangle_mesh((spec.bounds[0], window), *n, spec.tagging)
    return mesh, spaces_for(spec, mesh, p=p)


@pytest.fixture
def spec():
    return manufactured("x**2 + x*t", mode=SPACE_TIME, eps=0.1, b=(1.0,))


class TestSliceConfig:
    def test_windows(self):
        c = SliceConfig([0.0, 0.25, 1.0])
        assert c.n_slices == 2 and c.windows() == [(0.0, 0.25), (0.25, 1.0)]

    @pytest.mark.parametrize("kw", [dict(boundaries=[0.0]), dict(boundaries=[0.0, 0.5, 0.5]),
                                    dict(boundaries=[0, 1], strategy="sometimes"),
                                    dict(boundaries=[0, 1], steps=-1), dict(boundaries=[0, 1], theta=0.0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SliceConfig(**kw)


class TestTrace:
    @pytest.mark.parametrize("p", [1, 2])
    def test_polynomial_trace_is_exact(self, spec, p):
        mesh, sp = slab(spec, (0.0, 0.5), p=p)
        u = sp.u.interpolate(lambda X: X[:, 0] ** p - 0.5 * X[:, 1] + 1)
        tr = Trace(u)
        xs = np.linspace(0, 1, 37)
        assert tr.time == 0.5 and tr.extent == (0.0, 1.0)
        assert np.allclose(tr(xs), xs**p - 0.25 + 1, atol=1e-13)
        assert np.allclose(tr(xs[:, None]), tr(xs))

    def test_transfer_to_finer_target(self, spec):
        mesh, sp = slab(spec, (0.0, 0.5))
        u = sp.u.interpolate(lambda X: np.sin(3 * X[:, 0]) + X[:, 1])
        target, _ = slab(spec, (0.5, 1.0), n=(6, 2))
        tr = transfer_trace(u, target)
        # source vertices lie on every second target vertex
        xs = np.linspace(0, 1, 4)
        assert np.allclose(tr(xs), np.sin(3 * xs) + 0.5, atol=1e-14)

    def test_time_mismatch(self, spec):
        _, sp = slab(spec, (0.0, 0.5))
        target, _ = slab(spec, (0.6, 1.0))
        with pytest.raises(ValueError, match="does not match"):
            transfer_trace(Field(sp.u), target)

    def test_extent_mismatch(self, spec):
        _, sp = slab(spec, (0.0, 0.5))
        target = build_rectangle_mesh(((0.0, 2.0), (0.5, 1.0)), 2, 2, spec.tagging)
        with pytest.raises(ValueError, match="extents"):
            transfer_trace(Field(sp.u), target)

    def test_missing_tags(self, spec):
        untagged = build_rectangle_mesh(((0.0, 1.0), (0.0, 0.5)), 2, 2)
        with pytest.raises(ValueError, match="final_time"):
            Trace(Field(spaces_for(spec, untagged).u))
        _, sp = slab(spec, (0.0, 0.5))
        with pytest.raises(ValueError, match="initial_time"):
            transfer_trace(Field(sp.u), untagged)


@pytest.mark.parametrize("strategy", [ADAPT_BETWEEN, ADAPT_AFTER])
def test_sweep_order_and_gluing(spec, strategy):
    res = sweep(spec, SliceConfig([0.0, 0.4, 0.7, 1.0], strategy=strategy, steps=2, resolution=(3, 2)))
    log = res.call_log
    # every solve of slice k>0 is directly preceded by the transfer from k-1
    for i, entry in enumerate(log):
        if entry[0] == "solve" and entry[1] > 0:
            assert log[i - 1] == ("transfer", entry[1] - 1, entry[1])
    if strategy == ADAPT_BETWEEN:
        assert log == [("solve", 0), ("transfer", 0, 1), ("solve", 1), ("transfer", 1, 2), ("solve", 2)]
        assert len(res.gluing_jumps) == 2
    else:
        assert log.count(("solve", 0)) == 3 and len(res.gluing_jumps) == 6
    assert max(res.gluing_jumps) <= 1e-12
    assert len(res.report) == 3
    assert [s.window for s in res.slices] == [(0.0, 0.4), (0.4, 0.7), (0.7, 1.0)]


def test_exact_solution_in_trial_space_survives_slicing(spec):
    res = sweep(spec, SliceConfig([0.0, 0.5, 1.0], resolution=(2, 2), p=2))
    errs = res.global_errors()
    assert errs["L2_u"] < 1e-10 and errs["energy_estimate"] < 1e-10


def test_single_slice_matches_direct_solve(spec):
    res = sweep(spec, SliceConfig([0.0, 1.0], resolution=(3, 3)))
    direct = spacetime_solver(spec, condense=True)(build_rectangle_mesh(spec.bounds, 3, 3, spec.tagging))
    assert np.allclose(res.slices[0].u.coeffs, direct.u.coeffs, atol=1e-12)
    assert res.max_dofs == direct.dofs


def test_sweep_validation(spec):
    with pytest.raises(ValueError, match="space-time"):
        sweep(manufactured("x"), SliceConfig([0, 1]))
    with pytest.raises(ValueError, match="one initial mesh"):
        sweep(spec, SliceConfig([0, 0.5, 1]), meshes=[build_rectangle_mesh(spec.bounds, 2, 2, spec.tagging)])
