from fractions import Fraction

import numpy as np
import pytest

from multihom.grid import (Field, GradField, PeriodicGrid, adjoint_gradient,
                           cell_average, discrete_gradient, field_from_csv,
                           field_to_csv, kahan_sum, project_mean_zero)


def test_gradient_of_constant_is_zero():
    g = PeriodicGrid(1, 4)
    out = discrete_gradient(Field(np.zeros(4)), g)
    np.testing.assert_array_equal(out.vectors, np.zeros((4, 1)))


def test_gradient_linear_ramp_wraparound():
    g = PeriodicGrid(1, 4)
    out = discrete_gradient(Field(np.array([0.0, 0.25, 0.5, 0.75])), g)
    np.testing.assert_allclose(out.vectors[:, 0], [1.0, 1.0, 1.0, -3.0])


def test_gradient_2d_impulse_stencil():
    g = PeriodicGrid(2, 2)
    phi = np.zeros((2, 2))
    phi[0, 0] = 1.0
    out = discrete_gradient(Field(phi.ravel()), g).vectors.reshape(2, 2, 2)
    # axis 0 differences: (phi[1,j]-phi[0,j])*N at cell (0,j), wraparound at (1,j)
    assert out[0, 0, 0] == -2.0 and out[1, 0, 0] == 2.0
    assert out[0, 0, 1] == -2.0 and out[0, 1, 1] == 2.0
    assert out[1, 1, 0] == 0.0 and out[1, 1, 1] == 0.0


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("N", [2, 4, 8, 16])
def test_adjoint_identity(d, N):
    g = PeriodicGrid(d, N)
    rng = np.random.default_rng(12)
    for _ in range(25 if d == 1 else 6):
        u = Field(rng.standard_normal(g.size))
        q = GradField(rng.standard_normal((g.size, d)))
        lhs = np.mean(np.sum(discrete_gradient(u, g).vectors * q.vectors, axis=1))
        rhs = np.mean(u.values * adjoint_gradient(q, g).values)
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) / scale < 1e-14


def test_adjoint_of_constant_vanishes():
    g = PeriodicGrid(2, 8)
    q = GradField(np.ones((g.size, 2)))
    np.testing.assert_allclose(adjoint_gradient(q, g).values, 0.0, atol=1e-12)


def test_cell_average_trivial():
    assert cell_average(np.array([1.0, 1.0, 1.0, 1.0])) == 1.0
    assert cell_average(np.array([0.0, 2.0])) == 1.0


def test_cell_average_large_against_exact_rational():
    vals = np.full(10 ** 6, 0.1)
    exact = Fraction(0.1) * 10 ** 6
    assert abs(cell_average(vals) * 10 ** 6 - float(exact)) < 1e-9 * float(exact)


def test_cell_average_deterministic():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(10 ** 5)
    assert cell_average(vals) == cell_average(vals.copy())


def test_kahan_axis_mode():
    arr = np.arange(12.0).reshape(3, 4)
    np.testing.assert_allclose(kahan_sum(arr, axis=1), arr.sum(axis=1))
    np.testing.assert_allclose(kahan_sum(arr, axis=0), arr.sum(axis=0))


def test_project_mean_zero_examples():
    out = project_mean_zero(Field(np.full(8, 3.7)))
    np.testing.assert_allclose(out.values, 0.0, atol=1e-15)
    out = project_mean_zero(Field(np.array([0.0, 1.0])))
    np.testing.assert_allclose(out.values, [-0.5, 0.5])


def test_project_mean_zero_idempotent():
    rng = np.random.default_rng(5)
    phi = Field(rng.standard_normal(64) * 10)
    once = project_mean_zero(phi)
    twice = project_mean_zero(once)
    scale = np.max(np.abs(phi.values))
    assert np.max(np.abs(once.values - twice.values)) <= 1e-15 * scale
    assert abs(once.mean()) <= 1e-15 * scale


def test_field_rejects_nonfinite():
    with pytest.raises(ValueError):
        Field(np.array([1.0, np.nan]))


def test_field_csv_round_trip(tmp_path):
    g = PeriodicGrid(1, 8)
    phi = Field(np.linspace(-1, 1, 8) ** 3)
    path = tmp_path / "f.csv"
    field_to_csv(phi, g, path)
    phi2, g2 = field_from_csv(path)
    assert g2 == g
    np.testing.assert_array_equal(phi.values, phi2.values)
