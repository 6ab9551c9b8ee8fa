import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdv_backstepping.errors import InvalidArgumentError
from kdv_backstepping.grid import Grid, TriGrid
from kdv_backstepping.kernels import (Kernel, KernelKind, composite_gain_pbar, kernel_on_grid,
                                      observer_gain_p1, pde_residual, read_kernel_csv,
                                      reciprocity_residual, solve_kernel, trace_residuals,
                                      write_kernel_csv)

from conftest import kernel_set

S3 = np.sqrt(3.0)


def k1(x, y):
    """Exact first-order term: k = lam * k1 + O(lam^2)."""
    return -(1 - y) * np.sin((y - x) / S3) / S3


def lattice(m):
    x = TriGrid(m).x
    X, Y = np.meshgrid(x, x, indexing="ij")
    return X, Y, X <= Y


def test_first_order_oracle():
    X, Y, M = lattice(41)
    errs = []
    for lam in (0.01, 0.1):
        k = kernel_set(lam, 41)["k"]
        errs.append(np.abs(k.values / lam - k1(X, Y))[M].max())
    assert errs[0] < 1e-5
    assert errs[1] / errs[0] == pytest.approx(10, rel=0.01)   # error is O(lam)


def test_first_order_oracle_is_a_solution():
    # k1 satisfies the traces and L[k1] = 0 (independent check of the oracle)
    x = np.linspace(0, 1, 11)
    e = 1e-4
    assert np.allclose(k1(x, x), 0)
    assert np.allclose((k1(x + e, x) - k1(x - e, x)) / (2 * e), (1 - x) / 3, atol=1e-7)
    assert np.allclose(k1(x, 1.0), 0)


def test_second_order_oracle_from_reciprocity():
    X, Y, M = lattice(41)
    h = 1 / 40
    f = np.where(M, k1(X, Y), 0.0)
    conv = h * (f @ f - 0.5 * (np.diag(f)[:, None] * f + f * np.diag(f)[None, :]))
    ks = kernel_set(0.01, 41)
    diff2 = (ks["l"].values - ks["k"].values) / 0.01**2
    assert np.abs(diff2 - conv)[M].max() < 1e-3 * np.abs(conv).max() + 1e-6


def test_zero_lambda_gives_zero_kernels():
    for kern in kernel_set(0.0, 21).values():
        assert not kern.values.any()
        assert trace_residuals(kern) == (0.0, 0.0, 0.0)
        assert pde_residual(kern) == 0.0


def test_reflection_relations():
    ks = kernel_set(8.0, 41)
    k, p, l, r = (ks[c].values for c in "kplr")
    assert np.allclose(p, k[::-1, ::-1].T, atol=1e-13)
    assert np.allclose(r, l[::-1, ::-1].T, atol=1e-13)


@pytest.mark.parametrize("kind", list("kplr"))
def test_traces_and_pde(kind):
    res = []
    for m in (41, 81):
        kern = kernel_set(8.0, m)[kind]
        tr = trace_residuals(kern)
        assert tr.diagonal < 1e-12 and tr.edge < 1e-12
        res.append((tr.derivative, pde_residual(kern)))
    assert res[0][0] / res[1][0] > 3.5
    assert res[0][1] / res[1][1] > 3.5


def test_solver_residual_small():
    for kern in kernel_set(8.0, 41).values():
        assert kern.solver_residual <= 1e-13
        assert 1 <= kern.iterations < 50


def test_large_lambda_converges():
    kern = solve_kernel("k", 32.0, TriGrid(21))
    assert kern.solver_residual <= 1e-13


@pytest.mark.parametrize("lam", [-1.0, np.nan, np.inf])
def test_bad_lambda(lam):
    with pytest.raises(InvalidArgumentError):
        solve_kernel("k", lam, TriGrid(11))


def test_reciprocity_pairs_only():
    ks = kernel_set(4.0, 21)
    with pytest.raises(InvalidArgumentError):
        reciprocity_residual(ks["k"], ks["r"])
    with pytest.raises(InvalidArgumentError):
        reciprocity_residual(ks["k"], kernel_set(8.0, 21)["l"])
    assert reciprocity_residual(ks["p"], ks["r"]) < 1e-3


def test_evaluate_matches_lattice():
    k = kernel_set(8.0, 41)["k"]
    x = k.trigrid.x
    assert np.allclose(k.evaluate(x[3], x[10]), k.values[3, 10], atol=1e-14)
    plain = Kernel(k.trigrid, k.values, "k", 8.0)
    assert plain.evaluate(x[3], x[10]) == pytest.approx(k.values[3, 10])
    # off-lattice interpolation agrees with the series to O(h^2)
    assert plain.evaluate(0.31, 0.77) == pytest.approx(k.evaluate(0.31, 0.77), abs=5e-4)


def test_kernel_on_nested_grids():
    k = kernel_set(8.0, 41)["k"]
    fine = kernel_on_grid(k, Grid(81))
    assert np.allclose(fine[::2, ::2], k.values, atol=1e-13)
    coarse = kernel_on_grid(k, Grid(21))
    assert np.allclose(coarse, k.values[::2, ::2])


def test_observer_gain_and_pbar():
    ks = kernel_set(8.0, 41)
    g = Grid(41)
    p1 = observer_gain_p1(ks["p"], g)
    assert np.allclose(p1.values, ks["p"].values[:, -1])
    pbar = composite_gain_pbar(ks["k"], p1)
    assert pbar.values[-1] == pytest.approx(p1.values[-1])
    with pytest.raises(InvalidArgumentError):
        observer_gain_p1(ks["k"], g)
    with pytest.raises(InvalidArgumentError):
        composite_gain_pbar(ks["p"], p1)


def test_csv_round_trip(tmp_path):
    k = kernel_set(4.0, 21)["p"]
    path = tmp_path / "p.csv"
    write_kernel_csv(k, path)
    assert path.read_text().splitlines()[0] == "x,y,value"
    back = read_kernel_csv(path, "p", 4.0)
    assert back.kind is KernelKind.OBSERVER_P
    assert np.array_equal(back.values, k.values)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 16.0))
def test_traces_hold_for_any_lambda(lam):
    kern = solve_kernel("k", lam, TriGrid(21))
    tr = trace_residuals(kern)
    assert tr.diagonal < 1e-12 and tr.edge < 1e-12
    # derivative trace is second order; at m = 21 it sits below 2e-3 * lam
    assert tr.derivative <= 2e-3 * max(lam, 1e-300) + 1e-14
