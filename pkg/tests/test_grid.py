import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdv_backstepping.errors import InvalidArgumentError
from kdv_backstepping.grid import (Field, Grid, TriGrid, diff, diff_matrix, fd_weights,
                                   integrate, stencil_offsets)


def test_grid_nodes():
    g = Grid(11)
    assert g.h == pytest.approx(0.1)
    assert g.x[0] == 0.0 and g.x[-1] == 1.0
    assert not g.x.flags.writeable


@pytest.mark.parametrize("n", [4, 0, 2.5])
def test_grid_rejects_small_or_fractional(n):
    with pytest.raises(InvalidArgumentError):
        Grid(n)


def test_trigrid_mask_is_upper_triangle():
    t = TriGrid(6)
    assert t.mask.sum() == 21
    assert t.mask[0, 5] and not t.mask[5, 0]
    assert t.edge == Grid(6)


def test_field_is_frozen_copy():
    g = Grid(7)
    raw = np.arange(7.0)
    f = Field(g, raw)
    raw[0] = 99
    assert f.values[0] == 0
    with pytest.raises(ValueError):
        f.values[0] = 1


def test_field_rejects_bad_values():
    g = Grid(7)
    with pytest.raises(InvalidArgumentError):
        Field(g, np.zeros(6))
    with pytest.raises(InvalidArgumentError):
        Field(g, [np.nan] * 7)


def test_field_arithmetic_checks_grid():
    a = Grid(7).sample(np.sin)
    b = Grid(9).sample(np.sin)
    with pytest.raises(InvalidArgumentError):
        a + b
    c = 2 * a - a / 2 + 1
    assert np.allclose(c.values, 1.5 * np.sin(a.x) + 1)
    assert np.allclose((-a).values, -a.values)
    assert np.allclose((a ** 2).values, np.sin(a.x) ** 2)


def test_fd_weights_classic():
    assert np.allclose(fd_weights([-1, 0, 1], 1), [-0.5, 0, 0.5])
    assert np.allclose(fd_weights([-1, 0, 1], 2), [1, -2, 1])
    assert np.allclose(fd_weights([-2, -1, 0, 1, 2], 3), [-0.5, 1, 0, -1, 0.5])
    with pytest.raises(InvalidArgumentError):
        fd_weights([0, 1], 2)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_stencils_stay_inside(order):
    n = 9
    for i in range(n):
        offs = stencil_offsets(i, n, order)
        assert (i + offs).min() >= 0 and (i + offs).max() <= n - 1
        assert 0 in offs


@pytest.mark.parametrize("order,degree", [(1, 2), (2, 2), (2, 3), (3, 4)])
def test_diff_exact_on_polynomials(order, degree):
    # second-order stencils of width w are exact up to degree w - 1
    g = Grid(21)
    coeffs = np.arange(1, degree + 2, dtype=float)
    p = np.polynomial.Polynomial(coeffs)
    got = diff(g.sample(p), order).values
    assert np.allclose(got, p.deriv(order)(g.x), atol=1e-7 * np.abs(got).max())


@pytest.mark.parametrize("order", [1, 2, 3])
def test_diff_second_order_convergence(order):
    errs = []
    for n in (41, 81, 161):
        g = Grid(n)
        d = diff(g.sample(lambda x: np.sin(3 * x)), order).values
        exact = [3 * np.cos(3 * g.x), -9 * np.sin(3 * g.x), -27 * np.cos(3 * g.x)][order - 1]
        errs.append(np.abs(d - exact).max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_diff_matrix_rejects():
    with pytest.raises(InvalidArgumentError):
        diff_matrix(11, 4)
    with pytest.raises(InvalidArgumentError):
        diff_matrix(6, 3)


def test_integrate_exact_for_linear_and_converges():
    g = Grid(11)
    assert integrate(g.sample(lambda x: 3 * x + 1)) == pytest.approx(2.5, abs=1e-14)
    e1 = abs(integrate(Grid(51).sample(np.exp)) - (np.e - 1))
    e2 = abs(integrate(Grid(101).sample(np.exp)) - (np.e - 1))
    assert 3.9 < e1 / e2 < 4.1


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(1, 3))
def test_diff_is_linear(a, b, order):
    g = Grid(15)
    f1, f2 = g.sample(np.sin), g.sample(np.exp)
    lhs = diff(a * f1 + b * f2, order).values
    rhs = a * diff(f1, order).values + b * diff(f2, order).values
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=7, max_size=7))
def test_integrate_bounded_by_max(vals):
    f = Field(Grid(7), vals)
    assert abs(integrate(f)) <= np.abs(f.values).max() + 1e-9
