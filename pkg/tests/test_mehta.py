import math

import numpy as np
import pytest
from scipy import integrate

from mehtalab.mehta import (
    detmoment_identity_check,
    exp_abs_det_mc,
    exp_det_pointwise_check,
    gamma_fn,
    kacrice_density,
    kacrice_total_mass,
    kacrice_vs_empirical,
    log_gamma,
    log_mehta_closed_form,
    mehta_closed_form,
    mehta_closed_form_scaled,
    mehta_mc,
    mehta_quadrature,
    mehta_ratio,
    reproduce_zm,
    vol_sphere,
)
from mehtalab.estimation import EstimatorResult
from mehtalab.spectral import weyl_rhs_quadrature

SQRT_2PI = math.sqrt(2.0 * math.pi)


def abs_moment_normal(sigma, c):
    """E|X - c| for X ~ N(0, sigma^2), exact."""
    return sigma * math.sqrt(2.0 / math.pi) * math.exp(-c * c / (2 * sigma * sigma)) + c * math.erf(
        c / (sigma * math.sqrt(2.0))
    )


class TestGammaFunctions:
    def test_lanczos_accuracy(self):
        xs = np.linspace(0.5, 30.0, 1181)
        for x in xs:
            ref = math.lgamma(float(x))
            got = log_gamma(float(x))
            assert abs(got - ref) <= 1e-13 * max(1.0, abs(ref))

    def test_half_integer_values(self):
        assert gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-14)
        assert gamma_fn(1.5) == pytest.approx(math.sqrt(math.pi) / 2.0, rel=1e-14)
        assert gamma_fn(5.0) == pytest.approx(24.0, rel=1e-14)

    def test_reflection_branch(self):
        assert gamma_fn(0.25) == pytest.approx(math.gamma(0.25), rel=1e-13)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            log_gamma(0.0)

    def test_sphere_volumes(self):
        assert vol_sphere(1) == pytest.approx(2.0 * math.pi, rel=1e-14)
        assert vol_sphere(2) == pytest.approx(4.0 * math.pi, rel=1e-14)
        # surface/(m+1) equals pi^((m+1)/2) / Gamma((m+3)/2)
        assert vol_sphere(2) / 3.0 == pytest.approx(math.pi**1.5 / gamma_fn(2.5), rel=1e-14)
        assert vol_sphere(2) / 3.0 == pytest.approx(4.0 * math.pi / 3.0, rel=1e-14)


class TestClosedForm:
    def test_first_values(self):
        assert mehta_closed_form(1) == pytest.approx(SQRT_2PI, rel=1e-14)
        assert mehta_closed_form(2) == pytest.approx(4.0 * math.sqrt(math.pi), rel=1e-14)
        # 2^(9/2) G(3/2) G(2) G(5/2) = 3 pi 2^(3/2)
        assert mehta_closed_form(3) == pytest.approx(3.0 * math.pi * 2.0**1.5, rel=1e-13)

    def test_log_variant(self):
        for m in (1, 5, 20):
            assert math.exp(log_mehta_closed_form(m)) == pytest.approx(mehta_closed_form(m), rel=1e-13)

    def test_scaling_law(self):
        for m in range(1, 11):
            for v in (0.5, 1.0, 2.0):
                ratio = mehta_closed_form_scaled(m, v) / mehta_closed_form(m)
                assert ratio == pytest.approx((2.0 * v) ** (m * (m + 1) / 4.0), rel=1e-12)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            mehta_closed_form(0)
        with pytest.raises(ValueError):
            mehta_ratio(0)


class TestRatioRecursion:
    def test_ratio_values(self):
        assert mehta_ratio(1) == pytest.approx(2.0**1.5, rel=1e-14)
        assert mehta_ratio(2) == pytest.approx(2.0**1.5 * gamma_fn(2.5), rel=1e-14)

    def test_recursion_exact(self):
        for m in range(1, 21):
            lhs = mehta_closed_form(m + 1)
            rhs = mehta_ratio(m) * mehta_closed_form(m)
            assert abs(lhs - rhs) / lhs <= 1e-12


class TestQuadratureOracle:
    def test_m1(self):
        assert abs(mehta_quadrature(1) - 2.506628274631) <= 1e-6
        assert abs(mehta_quadrature(1) - mehta_closed_form(1)) <= 2e-6

    def test_m2(self):
        assert abs(mehta_quadrature(2) - 7.089815403622) <= 1e-6
        assert abs(mehta_quadrature(2) - mehta_closed_form(2)) <= 2e-6

    def test_m3(self):
        assert abs(mehta_quadrature(3) - mehta_closed_form(3)) <= 2e-6

    def test_unsupported(self):
        with pytest.raises(ValueError):
            mehta_quadrature(4)

    def test_unreachable_tolerance_reports_achieved(self):
        from mehtalab.spectral import QuadratureError

        with pytest.raises(QuadratureError) as info:
            mehta_quadrature(3, tol=1e-30)
        assert info.value.achieved > 1e-30


class TestMehtaMC:
    def test_m1_exact(self):
        res = mehta_mc(1, 1000, seed=501)
        assert res.estimate == pytest.approx(SQRT_2PI, rel=1e-14)
        assert res.std_error == 0.0

    def test_m2_within_band(self):
        res = mehta_mc(2, 200000, seed=502)
        assert res.passed, f"z = {res.z_score:.2f}"

    def test_m5_within_band(self):
        res = mehta_mc(5, 200000, seed=503)
        assert res.passed, f"z = {res.z_score:.2f}"

    def test_large_m_no_overflow(self):
        res = mehta_mc(12, 5000, seed=504)
        assert math.isfinite(res.estimate)
        assert math.isfinite(res.std_error)

    def test_se_sqrt2_decay(self):
        # doubling the sample count shrinks the reported error near 1/sqrt(2)
        ratios = []
        for seed in (505, 506, 507, 508, 509):
            a = mehta_mc(3, 40000, seed=seed)
            b = mehta_mc(3, 80000, seed=seed + 100)
            ratios.append(b.std_error / a.std_error)
        assert 0.6 <= float(np.mean(ratios)) <= 0.8

    def test_determinism(self):
        a = mehta_mc(3, 20000, seed=510, workers=4)
        b = mehta_mc(3, 20000, seed=510, workers=4)
        assert a.estimate == b.estimate and a.std_error == b.std_error


class TestExpAbsDet:
    def test_m1_center(self):
        # oracle: E|N(0,1)| = sqrt(2/pi)
        res = exp_abs_det_mc(1, 0.5, 0.0, 200000, seed=511, reference=math.sqrt(2.0 / math.pi))
        assert res.passed, f"z = {res.z_score:.2f}"

    def test_m1_far_shift(self):
        # oracle: E|X - 10| for X ~ N(0,1), indistinguishable from 10
        ref = abs_moment_normal(1.0, 10.0)
        assert ref == pytest.approx(10.0, abs=1e-12)
        res = exp_abs_det_mc(1, 0.5, 10.0, 100000, seed=512, reference=ref)
        assert res.passed, f"z = {res.z_score:.2f}"

    def test_m2_against_weyl_quadrature(self):
        ref = weyl_rhs_quadrature(
            lambda lam: np.abs(np.prod(lam, axis=1)), 2, 0.5
        )
        res = exp_abs_det_mc(2, 0.5, 0.0, 200000, seed=513, reference=ref)
        assert res.passed, f"z = {res.z_score:.2f}"


class TestDetmomentIntegrated:
    def test_reference_values(self):
        # (2v)^((m+1)/2) ratio(m) at the three calibration points
        r1 = detmoment_identity_check(1, 0.5, 1000, seed=514)
        assert r1.reference == pytest.approx(2.0**1.5, rel=1e-13)
        r2 = detmoment_identity_check(2, 0.5, 1000, seed=515)
        assert r2.reference == pytest.approx(2.0**1.5 * gamma_fn(2.5), rel=1e-13)
        r3 = detmoment_identity_check(1, 2.0, 1000, seed=516)
        assert r3.reference == pytest.approx(4.0 * 2.0**1.5, rel=1e-13)

    def test_2d_quadrature_oracle_m1(self):
        # brute force: sqrt(4 pi v) int int |a - c| phi_{2v}(a) phi_{2v}(c) da dc
        v = 0.5
        sig = math.sqrt(2.0 * v)

        def inner(c):
            val, _ = integrate.quad(
                lambda a: abs(a - c)
                * math.exp(-a * a / (2 * sig * sig))
                / (sig * SQRT_2PI),
                -10, 10, limit=200,
            )
            return val * math.exp(-c * c / (2 * sig * sig)) / (sig * SQRT_2PI)

        val, _ = integrate.quad(inner, -10, 10, limit=200)
        assert math.sqrt(4.0 * math.pi * v) * val == pytest.approx(2.0**1.5, abs=1e-7)

    @pytest.mark.parametrize("m,v,seed", [(1, 0.5, 517), (2, 0.5, 518), (1, 2.0, 519)])
    def test_identity_holds(self, m, v, seed):
        res = detmoment_identity_check(m, v, 150000, seed=seed)
        assert res.passed, f"z = {res.z_score:.2f}"


class TestDetmomentPointwise:
    def test_m1_center_has_analytic_left_side(self):
        res = exp_det_pointwise_check(1, 0.5, 0.0, 150000, seed=520)
        assert abs(res.estimate - math.sqrt(2.0 / math.pi)) <= 4.0 * res.meta["left_se"]
        assert res.passed, f"z = {res.z_score:.2f}"
        assert res.meta["bandwidth"] > 0.0
        assert not res.meta["degraded"]

    @pytest.mark.parametrize("m,v,c,seed", [(1, 0.5, 1.0, 521), (2, 0.5, 0.0, 522)])
    def test_agreement(self, m, v, c, seed):
        res = exp_det_pointwise_check(m, v, c, 150000, seed=seed)
        assert res.passed, f"z = {res.z_score:.2f}"

    def test_bias_bound_below_half_left_se(self):
        res = exp_det_pointwise_check(1, 0.5, 0.0, 100000, seed=523)
        assert res.meta["bias_bound"] <= 0.55 * res.meta["left_se"]

    @pytest.mark.parametrize("v,c", [(0.5, 0.0), (0.5, 1.0), (1.0, 0.7), (2.0, -1.3)])
    def test_identity_analytic_at_m1(self, v, c):
        # both sides in closed form: E|a - c| for a ~ N(0, 2v) must equal
        # exp(c^2/4v) (2v) ratio(1) rho_2(c), rho_2 the two-eigenvalue density
        s = math.sqrt(2.0 * v)
        left = abs_moment_normal(s, abs(c))
        g = math.exp(-c * c / (2 * s * s))
        rho2 = (
            g
            * math.sqrt(2.0 * math.pi)
            * (s * math.sqrt(2.0 / math.pi) * g + c * math.erf(c / (s * math.sqrt(2.0))))
            / (4.0 * math.sqrt(math.pi) * s * s)
        )
        right = math.exp(c * c / (4.0 * v)) * (2.0 * v) * mehta_ratio(1) * rho2
        assert left == pytest.approx(right, rel=1e-12)


class TestKacRiceDensity:
    def test_m1_center(self):
        # (2 pi)^{-1/2} * 2 pi * E|N(0, sqrt 2)| = 2^{3/2}
        ref = 2.0**1.5
        analytic = (2.0 * math.pi) ** -0.5 * 2.0 * math.pi * abs_moment_normal(math.sqrt(2.0), 0.0)
        assert analytic == pytest.approx(ref, rel=1e-13)
        res = kacrice_density(1, 0.0, 1.0, 200000, seed=524, reference=ref)
        assert res.passed, f"z = {res.z_score:.2f}"

    @pytest.mark.parametrize("m,v,seed", [(1, 1.0, 525), (2, 1.0, 526), (2, 0.5, 527)])
    def test_total_mass(self, m, v, seed):
        res = kacrice_total_mass(m, v, 100000, seed=seed)
        assert res.reference == 2.0 * (m + 1)
        assert res.passed, f"z = {res.z_score:.2f}"


class TestKacRiceVsEmpirical:
    def test_full_line_is_exact_on_empirical_side(self):
        res = kacrice_vs_empirical(1, 1.0, -math.inf, math.inf, 50000, seed=528)
        assert res.empirical.estimate == 4.0
        assert res.empirical.std_error == 0.0
        assert res.passed

    def test_half_line_symmetry(self):
        res = kacrice_vs_empirical(1, 1.0, 0.0, math.inf, 100000, seed=529)
        z_emp = (res.empirical.estimate - 2.0) / res.empirical.std_error
        assert abs(z_emp) <= 4.0
        assert res.passed

    def test_three_way_agreement(self):
        res = kacrice_vs_empirical(2, 1.0, -1.0, 1.0, 100000, seed=530)
        assert res.passed
        d = res.to_dict()
        assert set(d) >= {"interval", "empirical", "kacrice", "spectral", "pass"}

    def test_rejects_empty_interval(self):
        with pytest.raises(ValueError):
            kacrice_vs_empirical(1, 1.0, 2.0, 1.0, 1000, seed=0)

    def test_interval_outside_truncation_box(self):
        res = kacrice_vs_empirical(1, 1.0, 50.0, 60.0, 2000, seed=533)
        assert res.empirical.estimate == 0.0
        assert res.kacrice.estimate == 0.0
        assert res.passed


class TestReproduce:
    def test_small_pipeline(self):
        rows = reproduce_zm(2, 150000, seed=531)
        assert [r.meta["m"] for r in rows] == [2, 3]
        for r in rows:
            assert r.passed, f"Z_{r.meta['m']}: z = {r.z_score:.2f}"
            assert r.reference == pytest.approx(mehta_closed_form(r.meta["m"]), rel=1e-13)

    def test_error_propagation_grows(self):
        rows = reproduce_zm(3, 50000, seed=532)
        rel = [r.std_error / r.estimate for r in rows]
        assert rel[0] < rel[1] < rel[2]

    def test_rejects_bad_m(self):
        with pytest.raises(ValueError):
            reproduce_zm(0, 1000)


class TestEstimatorResult:
    def test_z_and_pass(self):
        r = EstimatorResult(1.0, 0.5, 100, 0, reference=2.0)
        assert r.z_score == pytest.approx(-2.0)
        assert r.passed
        r = EstimatorResult(5.0, 0.5, 100, 0, reference=2.0)
        assert not r.passed

    def test_zero_se(self):
        r = EstimatorResult(2.0, 0.0, 100, 0, reference=2.0)
        assert r.z_score == 0.0 and r.passed
        r = EstimatorResult(2.5, 0.0, 100, 0, reference=2.0)
        assert not r.passed

    def test_no_reference(self):
        r = EstimatorResult(1.0, 0.5, 100, 0)
        assert r.z_score is None and r.passed
        assert r.to_dict()["z_score"] is None
