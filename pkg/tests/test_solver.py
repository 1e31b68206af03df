import math

import numpy as np
import pytest

from fracheat.core import Grid, SpatialDomain, loglog_slope, lp_norm
from fracheat.fracop import assemble
from fracheat.kernel import spectral_decompose
from fracheat.solver import (
    SourceSpec,
    exterior_decay_bound,
    fractional_gradient_field,
    geometric_ladder,
    solve_duhamel,
    solve_implicit_euler,
    uniform_ladder,
    weighted_trace,
)


class TestLadders:
    def test_geometric(self):
        lad = geometric_ladder(0.01, 1.0, 5)
        assert lad[0] == 0.0 and lad[1] == pytest.approx(0.01) and lad[-1] == pytest.approx(1.0)
        assert np.all(np.diff(lad) > 0)
        with pytest.raises(ValueError):
            geometric_ladder(1.0, 0.5, 4)

    def test_ladder_validation(self, dec128):
        src = SourceSpec()
        with pytest.raises(ValueError):
            solve_duhamel(dec128, src, [0.1, 0.2])  # must start at 0
        with pytest.raises(ValueError):
            solve_duhamel(dec128, src, [0.0, 0.2, 0.2])


class TestDuhamel:
    def test_eigenmode_decay(self, dec128):
        lam1 = dec128.eigenvalues[0]
        phi1 = dec128.mode_field(0)
        traj = solve_duhamel(dec128, SourceSpec(w0=phi1), uniform_ladder(0.5, 8))
        for t, f in zip(traj.times, traj.fields):
            expect = math.exp(-lam1 * t) * phi1.interior_values()
            assert np.max(np.abs(f.interior_values() - expect)) < 1e-8

    def test_constant_mode_source_response(self, dec128):
        lam1 = dec128.eigenvalues[0]
        phi1 = dec128.mode_field(0)
        src = SourceSpec(source=lambda t: phi1.interior_values())
        traj = solve_duhamel(dec128, src, uniform_ladder(0.5, 8))
        for t, f in zip(traj.times, traj.fields):
            expect = (1 - math.exp(-lam1 * t)) / lam1 * phi1.interior_values()
            assert np.max(np.abs(f.interior_values() - expect)) < 1e-6

    def test_zero_data(self, dec128):
        traj = solve_duhamel(dec128, SourceSpec(), uniform_ladder(0.3, 4))
        assert all(np.all(f.values == 0) for f in traj.fields)

    def test_linearity(self, dec128, rng):
        grid = dec128.grid
        w1 = grid.field(np.where(grid.interior, rng.standard_normal(grid.node_count), 0.0))
        w2 = grid.field(np.where(grid.interior, rng.standard_normal(grid.node_count), 0.0))
        lad = uniform_ladder(0.2, 4)
        a, b = 1.7, -0.3
        combo = grid.field(a * w1.values + b * w2.values)
        t_combo = solve_duhamel(dec128, SourceSpec(w0=combo), lad)
        t1 = solve_duhamel(dec128, SourceSpec(w0=w1), lad)
        t2 = solve_duhamel(dec128, SourceSpec(w0=w2), lad)
        for fc, f1, f2 in zip(t_combo.fields, t1.fields, t2.fields):
            gap = np.max(np.abs(fc.values - a * f1.values - b * f2.values))
            assert gap <= 1e-10 * max(1.0, np.max(np.abs(fc.values)))

    def test_tabulated_source_matches_callable(self, dec128):
        grid = dec128.grid
        lad = uniform_ladder(0.2, 4)
        profile = grid.spike(mass=1.0).interior_values()
        fn = lambda t: (1 + t) * profile
        tab = [fn(t) for t in lad]
        a = solve_duhamel(dec128, SourceSpec(source=fn), lad)
        b = solve_duhamel(dec128, SourceSpec(source=tab, ladder=lad), lad)
        gap = max(np.max(np.abs(x.values - y.values)) for x, y in zip(a.fields, b.fields))
        # tabulated route linearly interpolates the same slices
        assert gap <= 1e-10 * np.max(np.abs(a.fields[-1].values))


class TestImplicitEuler:
    def test_unconditional_decay(self, dec128):
        grid = dec128.grid
        op = dec128.operator
        traj = solve_implicit_euler(op, SourceSpec(w0=grid.spike(mass=1.0)), uniform_ladder(0.3, 12))
        norms = [np.linalg.norm(f.interior_values()) for f in traj.fields]
        assert np.all(np.diff(norms) <= 1e-12)

    def test_positivity(self, dec128):
        grid = dec128.grid
        src = SourceSpec(
            w0=grid.spike(mass=1.0), source=lambda t: grid.spike(mass=0.5).interior_values()
        )
        traj = solve_implicit_euler(dec128.operator, src, uniform_ladder(0.3, 12))
        assert min(f.values.min() for f in traj.fields) >= -1e-12

    def test_comparison_principle(self, dec128, rng):
        grid = dec128.grid
        base = np.abs(rng.standard_normal(grid.node_count))
        w_small = grid.field(np.where(grid.interior, base, 0.0))
        w_big = grid.field(np.where(grid.interior, base + 0.5, 0.0))
        lad = uniform_ladder(0.2, 6)
        for solver in (
            lambda s: solve_duhamel(dec128, s, lad),
            lambda s: solve_implicit_euler(dec128.operator, s, lad),
        ):
            ta = solver(SourceSpec(w0=w_small))
            tb = solver(SourceSpec(w0=w_big))
            for fa, fb in zip(ta.fields, tb.fields):
                assert np.all(fa.values <= fb.values + 1e-10)

    def test_richardson_gap_halves(self, dec128):
        phi1 = dec128.mode_field(0)
        gaps = []
        for steps in (16, 32):
            lad = uniform_ladder(0.5, steps)
            d = solve_duhamel(dec128, SourceSpec(w0=phi1), lad)
            e = solve_implicit_euler(dec128.operator, SourceSpec(w0=phi1), lad)
            gaps.append(
                max(np.max(np.abs(a.values - b.values)) for a, b in zip(d.fields, e.fields))
            )
        ratio = gaps[0] / gaps[1]
        assert ratio == pytest.approx(2.0, abs=0.3)


class TestDerivedFields:
    def test_weighted_trace_zero_and_linearity(self, dec128):
        grid = dec128.grid
        lad = uniform_ladder(0.2, 4)
        zero = solve_duhamel(dec128, SourceSpec(), lad)
        assert all(np.all(f.values == 0) for f in weighted_trace(zero, 0.5).fields)
        traj = solve_duhamel(dec128, SourceSpec(w0=grid.spike(mass=1.0)), lad)
        doubled = solve_duhamel(dec128, SourceSpec(w0=grid.spike(mass=2.0)), lad)
        wt1 = weighted_trace(traj, 0.5)
        wt2 = weighted_trace(doubled, 0.5)
        for a, b in zip(wt1.fields, wt2.fields):
            assert np.allclose(2 * a.values, b.values, rtol=1e-12, atol=1e-12)

    def test_weighted_trace_finite_norms(self, dec128):
        lad = geometric_ladder(0.05, 0.4, 5)
        traj = solve_duhamel(dec128, SourceSpec(w0=dec128.grid.spike(mass=1.0)), lad)
        wt = weighted_trace(traj, 0.5)
        for f in wt.fields[1:]:
            assert np.isfinite(lp_norm(f, 2.0))

    def test_gradient_field_zero(self, dec128):
        lad = uniform_ladder(0.2, 3)
        zero = solve_duhamel(dec128, SourceSpec(), lad)
        g = fractional_gradient_field(zero, 0.5)
        assert all(np.all(f.values == 0) for f in g.fields)

    def test_exterior_sign_and_decay(self):
        # wide padding so the far-field decay exponent is observable
        grid = Grid(SpatialDomain.interval(-1, 1, padding=3.5), 384)
        dec = spectral_decompose(assemble(grid, 1.0))
        lad = geometric_ladder(0.05, 0.2, 3)
        traj = solve_duhamel(dec, SourceSpec(w0=grid.spike(mass=1.0)), lad)
        rho = 0.5
        g = fractional_gradient_field(traj, rho)
        x = grid.nodes[:, 0]
        last = g.fields[-1]
        ext = (~grid.interior) & (x > 1.05) & (x < 4.2)
        assert np.all(last.values[ext] <= 1e-12)
        sel = (x >= 3.0) & (x <= 4.2)
        slope, _, r2 = loglog_slope(x[sel], -last.values[sel])
        assert slope == pytest.approx(-(1 + rho), abs=0.3)
        bound = exterior_decay_bound(traj.fields[-1], rho)
        far = (x >= 3.9) & (x <= 4.3)
        for xv, val in zip(x[far], last.values[far]):
            assert abs(val) <= bound(xv)

    def test_duhamel_energy_decay(self, dec128):
        traj = solve_duhamel(
            dec128, SourceSpec(w0=dec128.grid.spike(mass=1.0)), geometric_ladder(0.01, 0.5, 10)
        )
        norms = [lp_norm(f, 2.0) for f in traj.fields[1:]]
        assert np.all(np.diff(norms) <= 1e-12)


def test_trajectory_save(dec128, tmp_path):
    import json

    lad = uniform_ladder(0.2, 3)
    traj = solve_duhamel(dec128, SourceSpec(w0=dec128.grid.spike(mass=1.0)), lad)
    traj.save(tmp_path / "run")
    manifest = json.loads((tmp_path / "run" / "trajectory.json").read_text())
    assert manifest["provenance"] == "duhamel"
    assert len(manifest["slices"]) == len(lad)
    assert (tmp_path / "run" / "slice_0002.csv").exists()
