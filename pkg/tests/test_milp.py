import io
import itertools

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from dcflex.config import ITParams
from dcflex.milp import (HighsBackend, ModelError, ModelInstance, SolutionStatus, default_backend,
                         lin_sum, linearize_power_curve, power_law, solve)

IT = ITParams()


def exact(u):
    return power_law(u, IT.p_idle_kw, IT.p_max_kw, IT.exponent)


# -- power curve --------------------------------------------------------------

@pytest.mark.parametrize("u,expected", [(0.0, 166.7), (1.0, 1000.0)])
def test_power_curve_endpoints(u, expected):
    assert float(exact(u)) == pytest.approx(expected, abs=1e-9)


def test_power_curve_half_load():
    # 0.5**1.32 = exp(-1.32 ln 2) = 0.400535
    assert float(exact(0.5)) == pytest.approx(166.7 + 833.3 * 0.400535, abs=0.01)
    assert float(exact(0.5)) == pytest.approx(500.5, abs=0.05)


def test_single_segment_is_full_chord():
    c = linearize_power_curve(IT, 1)
    assert c.u == (0.0, 1.0) and c.p == (166.7, 1000.0)
    chord_mid = 0.5 * (166.7 + 1000.0)
    assert chord_mid - float(exact(0.5)) == pytest.approx(83.0, abs=0.5)
    assert c.max_abs_error >= chord_mid - float(exact(0.5))


@pytest.mark.parametrize("spacing", ["uniform", "equal-error"])
@pytest.mark.parametrize("n", [1, 2, 5, 16, 40])
def test_endpoints_exact_and_chords_overestimate(spacing, n):
    c = linearize_power_curve(IT, n, spacing)
    assert c.n_segments == n
    assert c.p[0] == IT.p_idle_kw and c.p[-1] == IT.p_max_kw
    grid = np.linspace(0, 1, 5001)
    assert np.all(c(grid) >= exact(grid) - 1e-9)
    # the reported bound holds under independent dense sampling
    assert np.max(c(grid) - exact(grid)) <= c.max_abs_error + 1e-9


@pytest.mark.parametrize("spacing", ["uniform", "equal-error"])
def test_doubling_segments_shrinks_error(spacing):
    errs = [linearize_power_curve(IT, n, spacing).max_abs_error for n in (1, 2, 4, 8, 16, 32)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_sixteen_segments_error_below_two_kw():
    c = linearize_power_curve(IT, 16)
    grid = np.linspace(0, 1, 200001)
    assert np.max(np.abs(c(grid) - exact(grid))) < 2.0


def test_uniform_sixteen_segments_misses_two_kw():
    # the steep start of u**1.32 dominates with equal steps
    assert linearize_power_curve(IT, 16, "uniform").max_abs_error > 2.0


def test_equal_error_segments_are_balanced():
    from dcflex.milp import _chord_error
    c = linearize_power_curve(IT, 16, "equal-error")
    errs = [_chord_error(a, b, IT.exponent) for a, b in zip(c.u[:-1], c.u[1:])]
    assert max(errs) / min(errs) < 1.001


# -- piecewise encoding -------------------------------------------------------

def _pw_model(curve, lo, hi):
    m = ModelInstance("pw")
    x = m.add_var("x", lo, hi)
    y = m.add_piecewise(x, curve)
    return m, x, y


@pytest.mark.parametrize("k", [0, 3, 7, 16])
def test_piecewise_at_breakpoint_gives_ordinate(k):
    c = linearize_power_curve(IT, 16)
    m, x, y = _pw_model(c, c.u[k], c.u[k])
    for sense in (1.0, -1.0):
        m.minimize(y * sense)
        r = solve(m)
        assert r.status == SolutionStatus.OPTIMAL
        assert r.value(y) == pytest.approx(c.p[k], abs=1e-6)


@given(st.floats(0.0, 1.0))
@example(1e-6)
@settings(max_examples=25, deadline=None)
def test_piecewise_mid_segment_on_chord(u):
    c = linearize_power_curve(IT, 8, "uniform")
    m, x, y = _pw_model(c, u, u)
    lo_hi = []
    for sense in (1.0, -1.0):
        m.minimize(y * sense)
        lo_hi.append(solve(m).value(y))
    # pinned input leaves no freedom: min == max == chord value, up to the
    # solver's ~1e-6 row tolerance on u amplified by the steepest chord
    tol = 1e-5 + 2e-6 * float(np.max(np.diff(c.p) / np.diff(c.u)))
    assert lo_hi[0] == pytest.approx(lo_hi[1], abs=tol)
    assert lo_hi[0] == pytest.approx(float(np.interp(u, c.u, c.p)), abs=tol)


def test_piecewise_rejects_unbounded_input():
    m = ModelInstance()
    x = m.add_var("x", 0.0, float("inf"))
    with pytest.raises(ModelError):
        m.add_piecewise(x, linearize_power_curve(IT, 4))


def test_piecewise_rejects_bad_breakpoints():
    from dcflex.milp import PiecewiseCurve
    m = ModelInstance()
    x = m.add_var("x", 0.0, 1.0)
    with pytest.raises(ModelError):
        m.add_piecewise(x, PiecewiseCurve((0.0, 0.0, 1.0), (0.0, 1.0, 2.0), 0.0))


# -- model container and solver ----------------------------------------------

def test_empty_model_is_optimal_zero():
    r = solve(ModelInstance())
    assert r.status == SolutionStatus.OPTIMAL and r.objective == 0.0


def test_contradictory_bounds_are_infeasible():
    m = ModelInstance()
    x = m.add_var("x", 1.0, 0.0)
    m.minimize(x)
    assert solve(m).status == SolutionStatus.INFEASIBLE


def test_infeasible_rows_detected():
    m = ModelInstance()
    x = m.add_var("x", 0, 10)
    m.add(x >= 5)
    m.add(x <= 4)
    assert solve(m).status == SolutionStatus.INFEASIBLE


def test_comparison_must_build_constraint():
    m = ModelInstance()
    with pytest.raises(ModelError):
        m.add(True)  # type: ignore[arg-type]


def test_duplicate_component_registration():
    m = ModelInstance()
    m.register("ups", None)
    with pytest.raises(ModelError):
        m.register("ups", None)


def test_linexpr_arithmetic():
    m = ModelInstance()
    a, b = m.add_var("a", 0, 5), m.add_var("b", 0, 5)
    e = 2 * a - (b / 2) + 3 - a
    assert e.terms == {a.index: 1.0, b.index: -0.5} and e.const == 3.0
    assert lin_sum([a, b, 1.0]).const == 1.0


def test_lp_dump_names_everything():
    m = ModelInstance("tiny")
    x = m.add_var("x", 0, 2)
    z = m.add_var("z", binary=True)
    m.add(x + z <= 2, "cap")
    m.minimize(-x)
    buf = io.StringIO()
    m.write_lp(buf)
    text = buf.getvalue()
    assert "Minimize" in text and "cap#0" in text and "Binaries" in text and " z" in text


def test_default_backend_env(monkeypatch):
    monkeypatch.setenv("DCFLEX_SOLVER", "highs")
    assert isinstance(default_backend(), HighsBackend)
    monkeypatch.setenv("DCFLEX_SOLVER", "gurobi-but-not-really")
    with pytest.raises(ValueError):
        default_backend()


@given(st.lists(st.tuples(st.integers(1, 9), st.integers(1, 9)), min_size=1, max_size=8),
       st.integers(1, 30))
@settings(max_examples=40, deadline=None)
def test_binary_knapsack_matches_enumeration(items, cap):
    """MILP optimum equals brute force over every 0/1 assignment."""
    m = ModelInstance("knap")
    z = [m.add_var(f"z{i}", binary=True) for i in range(len(items))]
    m.add(lin_sum(w * zi for (w, _), zi in zip(items, z)) <= cap)
    m.minimize(lin_sum(-v * zi for (_, v), zi in zip(items, z)))
    r = solve(m, HighsBackend(mip_rel_gap=0.0))
    best = max(sum(v for (w, v), t in zip(items, pick) if t)
               for pick in itertools.product((0, 1), repeat=len(items))
               if sum(w for (w, v), t in zip(items, pick) if t) <= cap)
    assert r.status == SolutionStatus.OPTIMAL
    assert -r.objective == pytest.approx(best)
