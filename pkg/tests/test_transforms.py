import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdv_backstepping.errors import InvalidArgumentError
from kdv_backstepping.grid import Field, Grid, diff
from kdv_backstepping.transforms import (F_functional, G_functional, derivative_functional_apply,
                                         round_trip_error, volterra_apply, volterra_op)

from conftest import kernel_set


def sine(n):
    g = Grid(n)
    return g.sample(lambda x: np.sin(np.pi * x))


@pytest.mark.parametrize("pair", [("k", "l"), ("p", "r")])
def test_round_trip_second_order(pair):
    errs = []
    for m in (41, 81):
        ks = kernel_set(8.0, m)
        errs.append(round_trip_error(volterra_op(ks[pair[0]]), volterra_op(ks[pair[1]]), sine(m)))
    assert errs[1] < 1e-4
    assert errs[0] / errs[1] > 3.5


def test_zero_kernel_is_identity():
    ks = kernel_set(0.0, 21)
    w = sine(21)
    for c in "kplr":
        assert np.array_equal(volterra_apply(volterra_op(ks[c]), w).values, w.values)
    assert np.array_equal(F_functional(w, ks).values, (w * diff(w, 1)).values)


def test_volterra_matches_direct_quadrature():
    ks = kernel_set(4.0, 21)
    w = sine(21)
    k = ks["k"].values
    h = 1 / 20
    out = volterra_apply(volterra_op(ks["k"]), w).values
    for i in (0, 7, 15):
        ys = np.arange(i, 21)
        integrand = k[i, ys] * w.values[ys]
        expect = w.values[i] - np.trapezoid(integrand, dx=h) if len(ys) > 1 else w.values[i]
        assert out[i] == pytest.approx(expect, abs=1e-14)
    assert out[-1] == w.values[-1]


def test_matrix_form_agrees():
    ks = kernel_set(8.0, 41)
    w = sine(41)
    op = volterra_op(ks["r"])
    assert np.allclose(w.values + op.matrix(w.grid) @ w.values, volterra_apply(op, w).values, atol=1e-14)


def test_operator_on_nested_grid():
    ks = kernel_set(8.0, 41)
    coarse = volterra_apply(volterra_op(ks["k"]), sine(41))
    fine = volterra_apply(volterra_op(ks["k"]), sine(81))
    assert np.abs(fine.values[::2] - coarse.values).max() < 1e-3


def test_derivative_functional_is_derivative_of_transform():
    # d/dx L[w] = w_x + L1[w] (up to quadrature error)
    errs = []
    for m in (41, 81):
        ks = kernel_set(8.0, m)
        w = sine(m)
        lhs = diff(volterra_apply(volterra_op(ks["l"]), w), 1)
        rhs = diff(w, 1) + derivative_functional_apply("L1", ks["l"], w)
        errs.append(np.abs(lhs.values - rhs.values).max())
        lhs = diff(volterra_apply(volterra_op(ks["p"]), w), 1)
        rhs = diff(w, 1) + derivative_functional_apply("P1", ks["p"], w)
        errs.append(np.abs(lhs.values - rhs.values).max())
    assert max(errs[2:]) < 2e-3
    assert errs[0] / errs[2] > 3 and errs[1] / errs[3] > 3


def test_bad_arguments():
    ks = kernel_set(8.0, 41)
    w = sine(41)
    with pytest.raises(InvalidArgumentError):
        derivative_functional_apply("K1", ks["k"], w)
    with pytest.raises(InvalidArgumentError):
        derivative_functional_apply("L1", ks["k"], w)
    with pytest.raises(InvalidArgumentError):
        volterra_apply(volterra_op(ks["k"]), sine(61))
    with pytest.raises(InvalidArgumentError):
        round_trip_error(volterra_op(ks["k"]), volterra_op(kernel_set(4.0, 41)["l"]), w)
    with pytest.raises(InvalidArgumentError):
        G_functional(w, sine(21), ks)


def test_G_weight_only_moves_hat_hat_term():
    ks = kernel_set(8.0, 41)
    w = sine(41)
    zero = Field(w.grid, np.zeros(41))
    # with w_tilde = 0 only the hat-hat term survives: G = c * R[u_hat u_hat_x]
    g1 = G_functional(w, zero, ks, hat_hat_weight=1.0).values
    gm = G_functional(w, zero, ks).values
    assert np.allclose(gm, -g1, atol=1e-14)
    assert not G_functional(w, zero, ks, hat_hat_weight=0.0).values.any()
    # with w_hat = 0 only the tilde-tilde term survives, independent of c
    assert np.array_equal(G_functional(zero, w, ks, 0.0).values, G_functional(zero, w, ks).values)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=41, max_size=41), st.floats(-3, 3))
def test_transforms_are_linear(vals, c):
    ks = kernel_set(8.0, 41)
    g = Grid(41)
    a = Field(g, np.array(vals))
    b = sine(41)
    for name in "kplr":
        op = volterra_op(ks[name])
        lhs = volterra_apply(op, a * c + b).values
        rhs = c * volterra_apply(op, a).values + volterra_apply(op, b).values
        assert np.allclose(lhs, rhs, atol=1e-11)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.floats(0.1, 2.0))
def test_round_trip_small_for_smooth_data(freq, amp):
    ks = kernel_set(8.0, 81)
    w = Grid(81).sample(lambda x: amp * np.cos(freq * x))
    err = round_trip_error(volterra_op(ks["k"]), volterra_op(ks["l"]), w)
    assert err < 2e-4 * amp * freq**2 + 1e-12
