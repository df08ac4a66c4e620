import json
from fractions import Fraction

import numpy as np
import pytest

from multihom.expr import Const
from multihom.fixtures import (NonConvexDemo, borel, checkerboard, constant_power,
                               laminate_1d, two_scale_laminate)
from multihom.integrand import (GrowthBounds, NonAdmissibleError, PowerIso, QuadAniso,
                                SamplingSpec, Simple, build_composite, check_convexity,
                                check_growth, check_lipschitz, diagonal_membership,
                                dump_integrand, integrand_from_json, integrand_to_json,
                                load_integrand)
from multihom.sets import CheckerQuadrant, Interval


def test_eval_simple_identity_coefficient():
    f = constant_power(2.0)
    assert f.eval(0.5, [0.3], [2.0]) == 4.0


def test_eval_composite_indicator_selection():
    f = laminate_1d()
    assert f.eval(0.5, [0.25], [1.0]) == 1.0
    assert f.eval(0.5, [0.75], [1.0]) == 4.0


def test_eval_borel_diagonal_values():
    f = borel("diag_even_xy", p=2.0)
    x = 0.3
    y = (2 * x) % 1.0            # on the slope-2 line: chi = 1
    assert f.eval(x, [[y]], [3.0]) == pytest.approx(9.0)
    assert f.eval(0.3, [[0.123456]], [3.0]) == pytest.approx(18.0)


def test_eval_domain_errors():
    f = laminate_1d()
    with pytest.raises(ValueError, match="finite"):
        f.eval(0.5, [0.25], [np.inf])
    with pytest.raises(ValueError, match="reduce mod 1"):
        f.eval(0.5, [1.25], [1.0])


def test_grad_z_analytic_values():
    f = constant_power(2.0)
    np.testing.assert_allclose(f.grad_z(0.5, [0.3], [3.0]), [6.0])
    f4 = constant_power(4.0, a=2.0)
    np.testing.assert_allclose(f4.grad_z(0.5, [0.3], [1.0]), [8.0])


def test_grad_z_matches_central_differences():
    f = constant_power(3.0)
    z = 2.0
    step = 1e-5
    fd = (f.eval(0.5, [0.3], [z + step]) - f.eval(0.5, [0.3], [z - step])) / (2 * step)
    g = f.grad_z(0.5, [0.3], [z], eta=0.0)[0]
    assert abs(g - fd) / abs(fd) < 1e-8


def test_grad_z_subquadratic_needs_eta():
    f = constant_power(1.5)
    with pytest.raises(ValueError, match="eta"):
        f.grad_z(0.5, [0.3], [1.0], eta=0.0)
    # against differences of the regularized density
    eta = 1e-3
    z, step = 0.7, 1e-6

    def reg(zv):
        return (zv * zv + eta * eta) ** 0.75

    fd = (reg(z + step) - reg(z - step)) / (2 * step)
    assert f.grad_z(0.5, [0.3], [z], eta=eta)[0] == pytest.approx(fd, rel=1e-6)


def test_grad_z_rejects_counterexamples():
    with pytest.raises(NonAdmissibleError):
        borel("diag_even_xy").grad_z(0.5, [0.3], [1.0])


def test_build_composite_two_scales_product_indicator():
    f = build_composite(
        sets=[Interval.make((0, Fraction(1, 2))), Interval.make((0, Fraction(1, 2)))],
        inside=PowerIso(Const(Fraction(1))), outside=PowerIso(Const(Fraction(4))),
        growth=GrowthBounds(1.0, 4.0, 2.0))
    assert f.eval(0.5, [np.array([0.25]), np.array([0.25])], [1.0]) == 1.0
    assert f.eval(0.5, [np.array([0.25]), np.array([0.75])], [1.0]) == 4.0
    assert f.eval(0.5, [np.array([0.75]), np.array([0.25])], [1.0]) == 4.0


def test_build_composite_checkerboard_membership():
    f = checkerboard()
    assert f.eval([0.5, 0.5], [np.array([0.2, 0.3])], [1.0, 0.0]) == 1.0
    assert f.eval([0.5, 0.5], [np.array([0.7, 0.8])], [1.0, 0.0]) == 1.0
    assert f.eval([0.5, 0.5], [np.array([0.2, 0.8])], [1.0, 0.0]) == 4.0


def test_build_composite_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        build_composite(sets=[Interval.make((0, 1)), CheckerQuadrant()],
                        inside=PowerIso(Const(Fraction(1))),
                        outside=PowerIso(Const(Fraction(4))),
                        growth=GrowthBounds(1.0, 4.0, 2.0))


def test_growth_bounds_validation():
    with pytest.raises(ValueError):
        GrowthBounds(c1=-1.0, c2=1.0, p=2.0)
    with pytest.raises(ValueError):
        GrowthBounds(c1=2.0, c2=1.0, p=2.0)
    with pytest.raises(ValueError):
        GrowthBounds(c1=1.0, c2=1.0, p=1.0)


def test_check_growth_laminate_clean():
    rep = check_growth(laminate_1d(), SamplingSpec(points=2048))
    assert rep.violations == 0


def test_check_growth_flags_wrong_coercivity():
    f = laminate_1d()
    bad = build_composite(sets=f.form.sets, inside=f.form.inside, outside=f.form.outside,
                          growth=GrowthBounds(2.0, 4.0, 2.0))
    rep = check_growth(bad, SamplingSpec(points=2048))
    assert rep.violations > 0
    assert rep.worst_margin < 0


def test_check_growth_checkerboard_many_samples():
    rep = check_growth(checkerboard(), SamplingSpec(points=10000))
    assert rep.violations == 0


def test_check_convexity_power_laws():
    for p in (2.0, 3.0):
        rep = check_convexity(constant_power(p), SamplingSpec(points=2048))
        assert rep.violations == 0


def test_check_convexity_flags_nonconvex_fixture():
    rep = check_convexity(NonConvexDemo(), SamplingSpec(points=2048))
    assert rep.violations > 0


def test_check_lipschitz_uniform_constant():
    for f in (laminate_1d(), checkerboard(), two_scale_laminate(), constant_power(3.0)):
        rep = check_lipschitz(f, SamplingSpec(points=4096))
        assert rep.violations == 0, rep.summary()


def test_composite_degenerates_to_simple():
    full = build_composite(sets=[Interval.make((0, 1))],
                           inside=PowerIso(Const(Fraction(7))),
                           outside=PowerIso(Const(Fraction(4))),
                           growth=GrowthBounds(4.0, 7.0, 2.0))
    empty = build_composite(sets=[Interval.make((0, 0))],
                            inside=PowerIso(Const(Fraction(7))),
                            outside=PowerIso(Const(Fraction(4))),
                            growth=GrowthBounds(4.0, 7.0, 2.0))
    rng = np.random.default_rng(7)
    for _ in range(50):
        y, z = rng.uniform(0, 1), rng.uniform(-3, 3)
        assert full.eval(0.5, [y], [z]) == pytest.approx(7.0 * z * z, rel=1e-15)
        assert empty.eval(0.5, [y], [z]) == pytest.approx(4.0 * z * z, rel=1e-15)


def test_quad_aniso_density_and_gradient():
    f = type("F", (), {})  # direct law check
    law = QuadAniso(Const(Fraction(2)), Const(Fraction(0)), Const(Fraction(3)))
    env = {}
    z = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(law.density(env, z, 2.0), [2.0 + 12.0])
    np.testing.assert_allclose(law.density_grad(env, z, 2.0), [[4.0, 12.0]])


def test_diagonal_membership_exact():
    # (x, <2x>) lies on the slope-2 line for any rational x
    x = Fraction(3, 7)
    y = (2 * x) % 1
    assert diagonal_membership(x, y, even_only=True, cap=8)
    assert not diagonal_membership(Fraction(1, 7), Fraction(3, 11), even_only=True, cap=64)
    # odd slopes only count when even_only is off
    y3 = (3 * x) % 1
    assert diagonal_membership(x, y3, even_only=False, cap=8)
    assert not diagonal_membership(x, y3, even_only=True, cap=8)


def test_json_round_trip_bit_exact():
    for f in (laminate_1d(), two_scale_laminate(), checkerboard(),
              borel("diag_even_yy"), constant_power(3.0)):
        text = dump_integrand(f)
        f2 = load_integrand(text)
        assert dump_integrand(f2) == text
        if f.admissible:
            y = [np.full(f.d, 0.3)] * f.n
            assert f.eval([0.4] * f.d, y, [0.7] * f.d) == f2.eval([0.4] * f.d, y, [0.7] * f.d)


def test_integrand_json_schema_fields():
    doc = integrand_to_json(laminate_1d())
    assert set(doc) == {"dimension", "scales", "form", "sets", "laws", "growth"}
    f = integrand_from_json(doc)
    assert f.d == 1 and f.n == 1


def test_growth_sandwich_property_sample():
    rng = np.random.default_rng(3)
    for f in (laminate_1d(), checkerboard(), two_scale_laminate(), constant_power(3.0)):
        g = f.growth
        for _ in range(200):
            y = [rng.uniform(0, 1, size=f.d) for _ in range(f.n)]
            z = rng.uniform(-6, 6, size=f.d)
            v = f.eval([0.5] * f.d, y, z)
            zn = float(np.linalg.norm(z))
            assert g.c1 * zn ** g.p - 1e-10 <= v <= g.c2 * (1 + zn ** g.p) + 1e-10
