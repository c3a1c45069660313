import numpy as np
import pytest

from freemp.contour import (Exponential, Polynomial, RationalShift,
                            RectContour, build_contour, clt_variance,
                            contour_integral, default_contour,
                            denominator_margin, f_sigma, mean_statistic,
                            theorem_variance, variance_report, _node_values,
                            _theorem_terms)
from freemp.errors import ContourError, DomainError
from freemp.freeconv import density_batch, support_edges
from freemp.measures import integrate

ONE = Polynomial((1.0,))
LIN = Polynomial((0.0, 1.0))
SQ = Polynomial((0.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def c_mpq(mp_quarter):
    return build_contour(support_edges(mp_quarter), d=0.02, nodes_per_side=64)


class TestConstruction:
    def test_geometry(self, c_mpq):
        assert c_mpq.left > 0.0
        assert c_mpq.left < c_mpq.L_minus < c_mpq.L_plus < c_mpq.right
        assert c_mpq.half_height == pytest.approx(0.04)

    def test_margin_validation(self, mp_quarter):
        e = support_edges(mp_quarter)          # L_minus = 0.25
        with pytest.raises(DomainError):
            build_contour(e, d=0.025)          # = L_minus/10, not strictly below
        with pytest.raises(DomainError):
            build_contour(e, d=0.0)
        with pytest.raises(DomainError):
            build_contour(e, d=0.02, nodes_per_side=8)

    def test_self_test_passes_on_thin_default(self, fc_uniform):
        # L_minus ~ 0.06 forces a sliver rectangle; construction still
        # certifies the Cauchy integral to 1e-10
        c = default_contour(fc_uniform)
        assert c.d < 0.004
        assert default_contour(fc_uniform) is c   # cached per instance

    def test_node_closure_exact(self, c_mpq):
        for lvl in range(c_mpq.max_level() + 1):
            xi, w = c_mpq.nodes(lvl)
            assert abs(w.sum()) < 1e-13


class TestContourIntegral:
    def test_cauchy_pole_inside(self, c_mpq):
        got = contour_integral(c_mpq, lambda x: 1.0 / (x - 1.0))
        assert abs(got - 2j * np.pi) < 1e-10

    def test_pole_outside(self, c_mpq):
        got = contour_integral(c_mpq, lambda x: 1.0 / (x + 1.0))
        assert abs(got) < 1e-10

    def test_entire_integrand(self, c_mpq):
        got = contour_integral(c_mpq, lambda x: x ** 3)
        assert abs(got) < 1e-10

    def test_constant(self, c_mpq):
        assert abs(contour_integral(c_mpq, lambda x: np.ones_like(x))) < 1e-12

    def test_second_order_pole(self, c_mpq):
        c = c_mpq.center
        got = contour_integral(c_mpq, lambda x: 1.0 / (x - c) ** 2)
        assert abs(got) < 1e-9

    def test_refinement_is_cauchy(self, c_mpq):
        c = c_mpq.center
        vals = []
        for lvl in range(c_mpq.max_level() + 1):
            xi, w = c_mpq.nodes(lvl)
            vals.append(complex((w / (xi - c)).sum()))
        gaps = [abs(b - a) for a, b in zip(vals, vals[1:])]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_nonfinite_integrand_named(self, c_mpq):
        xi0 = c_mpq.nodes(0)[0][0]
        with pytest.raises(DomainError, match="non-finite"):
            with np.errstate(divide="ignore", invalid="ignore"):
                contour_integral(c_mpq, lambda x: 1.0 / (x - xi0))


class TestFSigma:
    def test_constant_f_counts_winding(self, mp_quarter, mp_four):
        # F(sigma; f=1) is the winding number of 1 + sigma*m around 0: equal
        # to 1 exactly when -1/sigma falls between the edge boundary values
        # m(L_minus) = -2 and m(L_plus) = -2/3, i.e. sigma in (1/2, 3/2).
        assert abs(f_sigma(mp_quarter, ONE, 0.37)) < 1e-10
        assert abs(f_sigma(mp_quarter, ONE, 1.0) - 1.0) < 1e-10
        # ratio 4: boundary values -x_minus = 1 > 0, so no sign change and
        # no winding for any sigma in (0, 1]
        for s in (0.37, 1.0):
            assert abs(f_sigma(mp_four, ONE, s)) < 1e-10

    def test_linear_f_is_identity(self, mp_quarter, fc_uniform):
        assert abs(f_sigma(mp_quarter, LIN, 1.0) - 1.0) < 1e-6
        for s in (0.6, 0.75, 0.9):
            assert abs(f_sigma(fc_uniform, LIN, s) - s) < 1e-8

    def test_refinement_agreement(self, mp_quarter):
        e = support_edges(mp_quarter)
        coarse = build_contour(e, d=0.02, nodes_per_side=64)
        fine = build_contour(e, d=0.02, nodes_per_side=512)
        f = RationalShift(-5.0)
        a = f_sigma(mp_quarter, f, 0.8, contour=coarse)
        b = f_sigma(mp_quarter, f, 0.8, contour=fine)
        assert abs(a - b) < 1e-9

    def test_sigma_positive_required(self, mp_quarter):
        with pytest.raises(DomainError):
            f_sigma(mp_quarter, LIN, -0.5)

    def test_node_values_cached(self, mp_quarter, c_mpq):
        f_sigma(mp_quarter, LIN, 0.9, contour=c_mpq)
        first = _node_values(mp_quarter, c_mpq, 0)
        f_sigma(mp_quarter, SQ, 0.7, contour=c_mpq)
        assert _node_values(mp_quarter, c_mpq, 0) is first


class TestCltVariance:
    def test_linear_f_closed_form(self, fc_uniform):
        # F(sigma; x) = sigma, so V = ratio * Var(sigma) = 0.5/48 = 1/96
        assert abs(clt_variance(fc_uniform, LIN) - 1.0 / 96.0) < 1e-8

    def test_constant_f_degenerate(self, fc_uniform, mp_four):
        assert clt_variance(fc_uniform, ONE) < 1e-7
        assert clt_variance(mp_four, ONE) < 1e-7

    def test_quadratic_f_closed_form(self, fc_uniform):
        # F(sigma; x^2) = sigma^2 + 2*ratio*E[t]*sigma + const, so with
        # c = 2*0.5*0.75: V = 0.5*Var(sigma^2 + 0.75 sigma) = 1219/23040
        assert abs(clt_variance(fc_uniform, SQ) - 1219.0 / 23040.0) < 1e-10

    def test_contour_invariance(self, fc_uniform):
        e = support_edges(fc_uniform)
        d = min(e.L_minus / 20.0, 0.05)
        half = build_contour(e, d=d / 2.0)
        for f in (SQ, Exponential(0.5)):
            v0 = clt_variance(fc_uniform, f)
            v1 = clt_variance(fc_uniform, f, contour=half)
            assert abs(v0 - v1) < 1e-6

    def test_exponential_regression(self, fc_uniform):
        assert clt_variance(fc_uniform, Exponential(0.5)) == pytest.approx(
            0.008665473155232473, abs=1e-9)

    def test_nonnegative(self, fc_uniform, mp_quarter):
        for fc in (fc_uniform, mp_quarter):
            for f in (ONE, LIN, SQ, Exponential(0.3), RationalShift(-5.0)):
                assert clt_variance(fc, f) >= 0.0


class TestTheoremDiagnostic:
    def test_terms_vanish_for_constant_f_ratio_above_one(self, mp_four):
        t1, t2 = _theorem_terms(mp_four, default_contour(mp_four), ONE,
                                mp_four.base)
        assert abs(t1) < 1e-6 and abs(t2) < 1e-6

    def test_terms_for_constant_f_ratio_below_one(self, mp_quarter):
        # winding values: A(1) = 2*pi*i and the single integral is
        # 2*pi*i*(AC mass inside) = pi*i/2, giving 1 and -pi^2/4
        t1, t2 = _theorem_terms(mp_quarter, default_contour(mp_quarter), ONE,
                                mp_quarter.base)
        assert abs(t1 - 1.0) < 1e-6
        assert abs(t2 + np.pi ** 2 / 4.0) < 1e-6

    def test_self_convergence(self, fc_uniform):
        e = support_edges(fc_uniform)
        a = theorem_variance(fc_uniform, SQ,
                             contour=build_contour(e, nodes_per_side=128))
        b = theorem_variance(fc_uniform, SQ,
                             contour=build_contour(e, nodes_per_side=256))
        assert abs(a - b) < 1e-8

    def test_report_block(self, fc_uniform):
        text = variance_report(fc_uniform, LIN)
        keys = [line.split(" = ")[0] for line in text.splitlines()]
        assert keys == ["clt_variance", "theorem_double_term",
                        "theorem_squared_term", "theorem_total"]
        assert float(text.splitlines()[0].split(" = ")[1]) == pytest.approx(
            1.0 / 96.0, abs=1e-8)


class TestMeanStatistic:
    def test_mass_inside(self, mp_quarter):
        assert abs(mean_statistic(mp_quarter, ONE) - 0.25) < 1e-6

    def test_first_moment(self, mp_quarter, fc_uniform):
        assert abs(mean_statistic(mp_quarter, LIN) - 0.25) < 1e-4
        assert abs(mean_statistic(fc_uniform, LIN) - 0.375) < 1e-4

    def test_against_density_quadrature(self, fc_uniform):
        c = default_contour(fc_uniform)
        xs = np.linspace(c.L_minus - c.d, c.L_plus + c.d, 4001)
        rho = density_batch(fc_uniform, xs, warn=False)
        direct = np.trapezoid(rho * xs * xs, xs)
        assert abs(mean_statistic(fc_uniform, SQ) - direct) < 1e-4


class TestDenominatorSafety:
    def test_margin_exceeds_floor(self, mp_quarter, fc_uniform):
        assert denominator_margin(mp_quarter, [1.0]) > 1e-4
        assert denominator_margin(fc_uniform, [0.5, 1.0]) > 1e-4


class TestFunctionValidation:
    def test_polynomial_eval(self):
        assert Polynomial((1.0, 2.0, 3.0))(2.0) == pytest.approx(17.0)

    def test_exponential_eval(self):
        assert Exponential(0.5)(2.0) == pytest.approx(np.e)

    def test_rational_shift_pole_inside_rejected(self, c_mpq):
        with pytest.raises(DomainError):
            RationalShift(2.0).validate(c_mpq)
        RationalShift(-5.0).validate(c_mpq)
        RationalShift(c_mpq.L_plus + 4.0 * c_mpq.d + 0.01).validate(c_mpq)

    def test_empty_polynomial_rejected(self):
        with pytest.raises(DomainError):
            Polynomial(())
