import numpy as np
import pytest

from fracheat.bounds import (
    CertificationReport,
    EnvelopeSpec,
    SRestrictionError,
    certify_comparability,
    certify_green_gradient,
    certify_kernel_gradient,
    green_envelope,
    with_stability,
)
from fracheat.core import Grid, SpatialDomain
from fracheat.fracop import assemble
from fracheat.kernel import spectral_decompose

from conftest import KERNEL_TIMES


class TestEnvelope:
    def test_regime_dispatch(self):
        assert EnvelopeSpec(0.5, 0.5, 1, 8.0).regime == "low"  # boundary case uses low
        assert EnvelopeSpec(0.75, 0.75, 1, 8.0).regime == "high"
        with pytest.raises(ValueError):
            EnvelopeSpec(0.5, 1.1, 1, 8.0)

    def test_positive_inside(self):
        env = EnvelopeSpec(0.5, 0.6, 1, 8.0)
        vals = env(0.3, 0.4, 0.2, 0.1)
        assert np.all(vals > 0)

    def test_no_dead_terms(self):
        # dropping any single bracket term strictly decreases the envelope
        for s, rho in ((0.5, 0.5), (0.5, 0.6), (0.75, 0.8)):
            env = EnvelopeSpec(s, rho, 1, 8.0)
            pre, terms = env.bracket_terms(0.05, 0.4, 0.3, 0.1)
            full = pre * sum(terms)
            for k in range(len(terms)):
                reduced = pre * sum(t for j, t in enumerate(terms) if j != k)
                assert reduced < full

    def test_green_envelope_monotone_in_distance(self):
        e_near = green_envelope(0.5, 0.5, 1, 8.0, 0.3, 0.2)
        e_far = green_envelope(0.5, 0.5, 1, 8.0, 0.3, 0.4)
        assert e_near > e_far


class TestKernelGradientCertification:
    def test_reference_case_finite_and_stable(self, dec128, dec192):
        coarse = certify_kernel_gradient(dec128, 0.5, KERNEL_TIMES)
        fine = certify_kernel_gradient(dec192, 0.5, KERNEL_TIMES)
        rep = with_stability(fine, coarse)
        assert np.isfinite(rep.c_star) and rep.c_star > 0
        assert 0.8 <= rep.stability_ratio <= 1.25
        assert rep.regime == "low"
        # regression band frozen from the first validated run (C* ~ 0.15)
        assert 0.08 <= coarse.c_star <= 0.30

    def test_mixed_order_case(self, dec128):
        rep = certify_kernel_gradient(dec128, 0.6, KERNEL_TIMES)
        assert np.isfinite(rep.c_star)
        assert rep.rho == 0.6

    def test_regime_two(self, dec128_s075):
        rep = certify_kernel_gradient(dec128_s075, 0.75, KERNEL_TIMES)
        assert rep.regime == "high"
        assert np.isfinite(rep.c_star)

    def test_sup_monotone_under_sampling(self, dec128):
        few = certify_kernel_gradient(dec128, 0.5, [0.1])
        more = certify_kernel_gradient(dec128, 0.5, [0.05, 0.1, 0.2])
        assert more.c_star >= few.c_star - 1e-12

    def test_rejects_bad_rho_and_times(self, dec128):
        with pytest.raises(ValueError):
            certify_kernel_gradient(dec128, 0.4, KERNEL_TIMES)  # rho < s
        with pytest.raises(ValueError):
            certify_kernel_gradient(dec128, 0.5, [-0.1])

    def test_report_serialization(self, dec128, tmp_path):
        rep = certify_kernel_gradient(dec128, 0.5, [0.1, 0.2])
        rep.save(tmp_path / "rep.json")
        import json

        payload = json.loads((tmp_path / "rep.json").read_text())
        for key in ("regime", "rho", "C_star", "argmax", "stability_ratio", "samples", "D", "exclusion"):
            assert key in payload


class TestGreenCertification:
    def test_reference_case(self, dec128, dec192):
        coarse = certify_green_gradient(dec128, 0.5)
        fine = certify_green_gradient(dec192, 0.5)
        rep = with_stability(fine, coarse)
        assert np.isfinite(rep.c_star)
        assert 0.8 <= rep.stability_ratio <= 1.25

    def test_refusal_below_quarter(self):
        grid = Grid(SpatialDomain.interval(-1, 1, padding=1.0), 64)
        dec = spectral_decompose(assemble(grid, 0.4))  # s = 0.2
        with pytest.raises(SRestrictionError, match="s > 1/4"):
            certify_green_gradient(dec, 0.25)

    def test_gradient_not_symmetric_in_arguments(self, dec128):
        from fracheat.kernel import green_function

        b = assemble(dec128.grid, 0.5, dec128.operator.scheme).full()
        grad = b @ green_function(dec128).values
        asym = np.max(np.abs(grad - grad.T)) / np.max(np.abs(grad))
        assert asym > 1e-3  # operator acts on x only


class TestComparability:
    def test_reference_regression(self, dec128):
        rep = certify_comparability(dec128, KERNEL_TIMES)
        assert 0 < rep.extras["min_ratio"] <= rep.extras["max_ratio"] < np.inf
        # frozen on the (N=1, s=0.5, n=128) reference after the first run
        assert rep.extras["spread"] < 15.0
        assert rep.extras["min_ratio"] > 0.15
        assert rep.extras["max_ratio"] < 4.0

    def test_spread_refinement_stable(self, dec128, dec192):
        a = certify_comparability(dec128, KERNEL_TIMES)
        b = certify_comparability(dec192, KERNEL_TIMES)
        assert b.extras["spread"] == pytest.approx(a.extras["spread"], rel=0.25)

    def test_deep_interior_matches_free_space_ratio(self, dec128):
        # at a deep-interior pair and small time the Dirichlet kernel is
        # within 10% of the free-space kernel, so the comparability ratio
        # matches the free-space-dominated value
        from fracheat.kernel import free_space_kernel, heat_kernel

        grid = dec128.grid
        t = 0.05
        P = heat_kernel(dec128, t)
        xs = grid.interior_nodes[:, 0]
        i = int(np.argmin(np.abs(xs + 0.15)))
        j = int(np.argmin(np.abs(xs - 0.15)))
        fs = free_space_kernel(xs[i] - xs[j], t, 0.5)
        assert P.values[i, j] == pytest.approx(fs, rel=0.1)


def test_stability_requires_matching_quantities(dec128):
    a = certify_kernel_gradient(dec128, 0.5, [0.1])
    b = certify_comparability(dec128, [0.1])
    with pytest.raises(ValueError):
        with_stability(a, b)
