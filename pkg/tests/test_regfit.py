import numpy as np
import pytest

from fracheat.core import Grid, SpatialDomain
from fracheat.fracop import assemble
from fracheat.kernel import spectral_decompose
from fracheat.regfit import (
    difference_quotient_levels,
    functional_inequalities,
    gradient_regularity_slope,
    gradient_smoothing_exponent,
    gut_check,
    sigma_surrogate,
    smoothing_exponent,
    smoothing_slope,
    source_spacetime_norm,
    weighted_smoothing_exponent,
    weighted_smoothing_slope,
)
from fracheat.solver import SourceSpec, solve_duhamel, uniform_ladder

WINDOW = np.geomspace(0.02, 0.3, 9)


class TestPredictedExponents:
    def test_closed_forms_at_example_points(self):
        assert smoothing_exponent(1, 0.5, 1.0, 2.0) == pytest.approx(-0.5)
        assert smoothing_exponent(1, 0.5, 2.0, 2.0) == 0.0
        assert weighted_smoothing_exponent(1, 0.5, 1.0, 2.0) == pytest.approx(-1.0)
        assert gradient_smoothing_exponent(1, 0.5, 2.0, 0.5, 2.0) == pytest.approx(-0.5)
        assert gradient_smoothing_exponent(1, 0.5, 1.0, 0.5, 2.0) == pytest.approx(-1.0)
        # sigma_hat truncates sigma through 1/(rho - s)
        assert gradient_smoothing_exponent(1, 0.5, 20.0, 0.6, 2.0) == pytest.approx(
            -(1.0) * (1 / 10 - 1 / 2) - 0.5 - 0.1
        )


class TestSmoothingSlopes:
    def test_spike_to_l2(self, dec256):
        res = smoothing_slope(dec256, 1.0, 2.0, WINDOW)
        assert res["pass"], res
        assert abs(res["measured"] - (-0.5)) <= 0.1

    def test_flat_case(self, dec256):
        res = smoothing_slope(dec256, 2.0, 2.0, np.geomspace(0.01, 0.1, 9))
        assert res["predicted"] == 0.0
        assert abs(res["measured"]) <= 0.1
        assert res["pass"], res

    def test_weighted_operator_norm(self, dec256):
        res = weighted_smoothing_slope(dec256, 2.0, np.geomspace(0.05, 0.4, 9))
        assert res["predicted"] == pytest.approx(-1.0)
        assert res["pass"], res

    def test_linearity_precheck(self, dec128):
        # doubling the datum doubles the norm at every time
        from fracheat.core import lp_norm

        grid = dec128.grid
        lad = uniform_ladder(0.2, 4)
        t1 = solve_duhamel(dec128, SourceSpec(w0=grid.spike(mass=1.0)), lad)
        t2 = solve_duhamel(dec128, SourceSpec(w0=grid.spike(mass=2.0)), lad)
        for a, b in zip(t1.fields[1:], t2.fields[1:]):
            assert lp_norm(b, 2.0) == pytest.approx(2 * lp_norm(a, 2.0), rel=1e-12)


class TestGradientSlopes:
    def test_spike_case(self, dec256):
        res = gradient_regularity_slope(dec256, 1.0, 0.5, 2.0, WINDOW)
        assert res["predicted"] == pytest.approx(-1.0)
        assert res["pass"], res

    def test_opnorm_case(self, dec256):
        res = gradient_regularity_slope(
            dec256, 2.0, 0.5, 2.0, WINDOW, mode="opnorm", tolerance=0.15
        )
        assert res["predicted"] == pytest.approx(-0.5)
        assert res["pass"], res

    def test_opnorm_mode_guard(self, dec128):
        with pytest.raises(ValueError):
            gradient_regularity_slope(dec128, 1.0, 0.5, 1.5, WINDOW, mode="opnorm")


@pytest.fixture(scope="module")
def builder():
    cache = {}

    def build(n):
        if n not in cache:
            grid = Grid(SpatialDomain.interval(-1, 1, padding=1.0), n)
            cache[n] = spectral_decompose(assemble(grid, 1.0))
        return cache[n]

    return build


class TestSourceSpacetime:
    def test_below_threshold_stable(self, builder):
        res = source_spacetime_norm(builder, 0.5, 1.2)
        assert res["below_cap"]
        assert res["params"]["cap"] == pytest.approx(4.0 / 3.0)
        assert res["stable"], res
        assert np.all(np.isfinite(res["norms"]))

    def test_above_threshold_grows(self, builder):
        res = source_spacetime_norm(builder, 0.5, 1.5)
        assert not res["below_cap"]
        assert res["blow_up_indicator"], res

    def test_zero_source(self, dec128):
        from fracheat.solver import geometric_ladder

        traj = solve_duhamel(dec128, SourceSpec(), geometric_ladder(0.05, 0.4, 6))
        assert traj.spacetime_lp(1.2) == 0.0


class TestDifferenceQuotient:
    def test_zero_field(self, grid128):
        f = grid128.field(np.zeros(grid128.node_count))
        assert gut_check(f, 0.5, 2.0)["ratio"] == 0.0

    def test_reference_ratio_and_stability(self, dec128, dec192):
        a = gut_check(dec128.mode_field(0), 0.5, 2.0)
        b = gut_check(dec192.mode_field(0), 0.5, 2.0)
        assert a["ratio"] > 0
        assert b["ratio"] == pytest.approx(a["ratio"], rel=0.25)
        # frozen band from the first validated run (ratio ~ 1.17)
        assert 0.9 <= a["ratio"] <= 1.5

    def test_scale_invariance(self, dec128):
        f = dec128.mode_field(0)
        doubled = f.copy_with(2 * f.values)
        a = gut_check(f, 0.5, 2.0)
        b = gut_check(doubled, 0.5, 2.0)
        assert b["ratio"] == pytest.approx(a["ratio"], rel=1e-9)

    def test_requires_zero_exterior(self, grid128):
        f = grid128.field(np.ones(grid128.node_count))
        with pytest.raises(ValueError):
            gut_check(f, 0.5, 2.0)

    def test_levels_regression(self, dec128, dec192):
        a = difference_quotient_levels(dec128, 1.2, 1.5)
        b = difference_quotient_levels(dec192, 1.2, 1.5)
        assert a["params"]["p_eff"] == pytest.approx(6.0 / 7.0)
        # frozen band from the first validated run (C ~ 0.85)
        assert 0.6 <= a["constant"] <= 1.1
        assert b["constant"] == pytest.approx(a["constant"], rel=0.2)

    def test_q_range_guard(self, dec128):
        with pytest.raises(ValueError):
            difference_quotient_levels(dec128, 1.5, 1.5)  # q above min(4/3, 2)


class TestFunctionalInequalities:
    def test_zero_field(self, grid128):
        f = grid128.field(np.zeros(grid128.node_count))
        out = functional_inequalities(f, 0.4, 2.0)
        assert out["hardy_lhs"] == 0.0 and out["hardy_ratio"] == 0.0

    def test_eigenmode_ratios_finite(self):
        grid = Grid(SpatialDomain.interval(-1, 1, padding=1.0), 128)
        dec = spectral_decompose(assemble(grid, 0.8))  # s = 0.4, N >= 2s
        out = functional_inequalities(dec.mode_field(0), 0.4, 2.0)
        assert 0 < out["hardy_ratio"] < 10
        assert 0 < out["sobolev_ratio"] < 10
        assert out["sobolev_p_star"] == pytest.approx(2 * 1 / (1 - 0.8))

    def test_sobolev_refusal(self, dec128):
        out = functional_inequalities(dec128.mode_field(0), 0.5, 2.0)
        assert "sobolev_refused" in out  # N = 1 = p*s


def test_sigma_surrogate_normalisation(grid128):
    for sigma in (1.0, 2.0, 3.0):
        f = sigma_surrogate(grid128, sigma)
        norm = (np.abs(f.values) ** sigma).sum() * grid128.cell_measure
        assert norm ** (1 / sigma) == pytest.approx(1.0, rel=1e-12)
