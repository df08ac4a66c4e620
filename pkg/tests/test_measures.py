from fractions import Fraction

import numpy as np
import pytest

from multihom.cell_solver import SolverOptions
from multihom.eps import DomainSpec, ScaleFamily, solve_eps
from multihom.expr import Const, Cos2pi, Mul, Sin2pi, coord
from multihom.fixtures import laminate_1d
from multihom.measures import (EmpiricalMeasure, TrajectorySampler, center_of_mass,
                               coprime_sample_count, empirical_young,
                               histogram_from_csv, histogram_to_csv,
                               indicator_weak_limit_check, riemann_lebesgue_check)
from multihom.sets import Interval

SC1 = ScaleFamily((Fraction(1),))
SC12 = ScaleFamily((Fraction(1), Fraction(2)))


def test_sampler_emits_unit_cell_values():
    s = TrajectorySampler(scales=SC12, eps=1 / 8, samples=500)
    for v in s.values():
        assert np.all(v >= 0.0) and np.all(v < 1.0)
    assert s.points().shape == (s.samples, 1)


def test_sampler_avoids_aliasing_counts():
    s = coprime_sample_count(4096, SC12, 1 / 64)
    assert s % 2 == 1
    import math
    assert math.gcd(s, 64) == 1 and math.gcd(s, 4096) == 1


def test_riemann_lebesgue_sin_squared_exact():
    phi = Mul((Sin2pi(coord("y1")), Sin2pi(coord("y1"))))
    rows = riemann_lebesgue_check(phi, SC1, [1 / 4, 1 / 64], samples=4096)
    for r in rows:
        assert r.reference == pytest.approx(0.5, abs=1e-14)
        assert r.error < 1e-12


def test_riemann_lebesgue_constant_exact():
    rows = riemann_lebesgue_check(Const(Fraction(3, 4)), SC12, [1 / 4, 1 / 16], samples=1000)
    for r in rows:
        assert r.error == 0.0


def test_riemann_lebesgue_two_scale_decay():
    phi = Mul((Sin2pi(coord("y1")), Cos2pi(coord("y2"))))
    rows = riemann_lebesgue_check(phi, SC12, [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64],
                                  samples=8192)
    assert rows[-1].error < 1e-2
    floor = 1e-12
    errs = [max(r.error, floor) for r in rows]
    violations = sum(1 for a, b in zip(errs[1:], errs[2:]) if b > a + floor)
    assert violations <= 1


def test_indicator_product_set_limit():
    sets = [Interval.make((0, Fraction(1, 2))), Interval.make((0, Fraction(1, 3)))]
    rows = indicator_weak_limit_check(sets, SC12, [1 / 64], samples=4096)
    assert rows[0].reference == pytest.approx(1 / 6, abs=1e-12)
    assert abs(rows[0].value - 1 / 6) < 2e-2
    assert rows[0].error < 2e-2


def test_indicator_full_cell_exact():
    rows = indicator_weak_limit_check([Interval.make((0, 1)), Interval.make((0, 1))],
                                      SC12, [1 / 4, 1 / 32], samples=2048)
    for r in rows:
        assert r.error == 0.0


def test_indicator_with_weight_and_decay():
    g = coord("x")
    rows = indicator_weak_limit_check([Interval.make((0, Fraction(1, 2)))], SC1,
                                      [1 / 4, 1 / 8, 1 / 16, 1 / 32], g=g, samples=4096)
    assert rows[0].reference == pytest.approx(0.25, abs=1e-6)
    errs = [max(r.error, 1e-6) for r in rows]
    violations = sum(1 for a, b in zip(errs, errs[1:]) if b > a + 1e-6)
    assert violations <= 1
    assert errs[-1] < 2e-2


def test_empirical_young_affine_field():
    dom = DomainSpec(d=1, M=4096, z=(1.0,))
    u = dom.affine_field()
    m = empirical_young(u, dom, SC1, 1 / 32, y_bins=8, z_bins=32, z_range=(-2.0, 2.0))
    assert m.mass() == pytest.approx(1.0, abs=1e-15)
    # all gradient mass in the bin containing z = 1
    zbin = int((1.0 - m.z_lo) / (m.z_hi - m.z_lo) * m.z_bins)
    counts_z = m.counts.sum(axis=0)
    assert counts_z[zbin] == m.total
    # y-marginal approximately uniform (limit law: Lebesgue on the cell)
    marg = m.y_marginal()
    assert np.max(np.abs(marg - 1.0 / 8)) < 2.0 * (1.0 / m.total + 1 / 32)


def test_empirical_young_zero_field():
    dom = DomainSpec(d=1, M=512, z=(0.0,))
    m = empirical_young(np.zeros(513), dom, SC1, 1 / 8, y_bins=4, z_bins=16,
                        z_range=(-1.0, 1.0))
    zbin = int((0.0 - m.z_lo) / (m.z_hi - m.z_lo) * m.z_bins)
    assert m.counts.sum(axis=0)[zbin] == m.total


def test_empirical_young_laminate_two_phase_mass():
    f = laminate_1d()
    dom = DomainSpec(d=1, M=2048, z=(1.0,))
    sol = solve_eps(f, SC1, 1 / 32, dom, SolverOptions(tol_grad=1e-7, tol_energy=1e-9,
                                                       max_iter=40000))
    m = empirical_young(sol.u, dom, SC1, 1 / 32, y_bins=2, z_bins=64, z_range=(-2.5, 2.5))
    means, occupied = center_of_mass(m)
    assert occupied.all()
    assert means[0, 0] == pytest.approx(1.6, rel=0.05)
    assert means[1, 0] == pytest.approx(0.4, rel=0.05)


def test_center_of_mass_identities():
    dom = DomainSpec(d=1, M=1024, z=(1.0,))
    rng = np.random.default_rng(9)
    u = dom.affine_field() + 0.01 * np.concatenate([[0], rng.standard_normal(1023), [0]])
    m = empirical_young(u, dom, SC1, 1 / 16, y_bins=8, z_bins=32, z_range=(-4.0, 4.0))
    means, occupied = center_of_mass(m)
    grads = np.diff(u) * dom.M
    weighted = float(np.nansum(means[..., 0] * m.y_counts())) / m.total
    assert weighted == pytest.approx(float(np.mean(grads)), abs=1e-12)


def test_center_of_mass_marks_empty_bins():
    dom = DomainSpec(d=1, M=8, z=(1.0,))
    m = empirical_young(dom.affine_field(), dom, SC1, 1 / 2, y_bins=64, z_bins=8,
                        z_range=(-2.0, 2.0))
    means, occupied = center_of_mass(m)
    assert not occupied.all()
    assert np.isnan(means[~occupied]).all()
    assert not np.isnan(means[occupied]).any()


def test_overflow_flagging():
    dom = DomainSpec(d=1, M=64, z=(10.0,))
    m = empirical_young(dom.affine_field(), dom, SC1, 1 / 4, y_bins=4, z_bins=8,
                        z_range=(-1.0, 1.0))
    assert m.overflow == m.total  # every gradient is 10, clipped into the edge bin
    assert m.counts.sum() == m.total


def test_histogram_csv_round_trip(tmp_path):
    dom = DomainSpec(d=1, M=256, z=(1.0,))
    m = empirical_young(dom.affine_field(), dom, SC1, 1 / 8, y_bins=4, z_bins=16,
                        z_range=(-2.0, 2.0))
    path = tmp_path / "h.csv"
    histogram_to_csv(m, path)
    m2 = histogram_from_csv(path)
    np.testing.assert_array_equal(m.counts, m2.counts)
    assert (m2.total, m2.y_bins, m2.z_bins) == (m.total, m.y_bins, m.z_bins)
