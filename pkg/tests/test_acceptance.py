"""The nine acceptance criteria, one test each.

Every test records a PASS/FAIL line in ``conftest.ACCEPTANCE`` before asserting,
so the terminal summary lists all nine even when some fail.
"""

import json
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import ACCEPTANCE
from dcflex import io as rio
from dcflex.cli import EXIT_OK, main
from dcflex.milp import linearize_power_curve, power_law
from dcflex.scenarios import (check_flex_feasible, flex_sweep, horizon_cap, max_duration, run_scenario1,
                              run_scenario2)
from dcflex.thermal import STATE_NODES, step_matrices, thermal_step
from invariants import audit_schedule

COARSE_T0 = list(range(0, 96, 4))
COARSE_DP = [-200.0, -100.0, -50.0, 50.0, 100.0, 200.0]


def record(k: int, ok: bool, detail: str):
    ACCEPTANCE[k] = ("PASS" if ok else "FAIL", detail)
    assert ok, detail


def demanded(profile, n_slots=None):
    inflex = profile.u_inflex[:n_slots]
    return sum(j.cpu_hours for j in profile.base_jobs()) + float(inflex.sum()) * profile.slot_hours


def fixed_point_gap(sol, cfg):
    """Largest one-step drift when each slot's state is fed its own power and cooling."""
    sm = step_matrices(cfg.thermal, cfg.time)
    worst = 0.0
    for i in range(sol.n):
        state = {nd: sol.temps[nd][i + 1] for nd in STATE_NODES}
        new = thermal_step(state, sol.p_it_kw[i], sol.q_cool_kw[i], cfg.thermal, cfg.time, sm)
        worst = max(worst, max(abs(new[nd] - state[nd]) for nd in STATE_NODES))
    return worst


@pytest.fixture(scope="module")
def coarse(baseline, cfg, profile):
    """Hourly t0 by {±50, ±100, ±200} kW, solved once with breakdowns."""
    cells = flex_sweep(baseline, COARSE_T0, COARSE_DP, cfg, profile)
    return {(c.t0, c.delta_p_kw): c for c in cells}


def test_criterion_1_base_cost(cfg, profile):
    t = time.perf_counter()
    base = run_scenario1(cfg, profile)
    elapsed = time.perf_counter() - t
    cost = base.cost_main_gbp
    rel = cost / 1659.54 - 1
    record(1, abs(rel) <= 0.03 and elapsed < 30,
           f"base cost {cost:.2f} GBP ({rel:+.2%} vs 1659.54), {elapsed:.2f} s")


def test_criterion_2_optimised_cost(cfg, profile, base):
    t = time.perf_counter()
    opt = run_scenario2(cfg, profile)
    elapsed = time.perf_counter() - t
    saving = 100 * (base.cost_main_gbp - opt.cost_main_gbp) / base.cost_main_gbp
    peak = slice(64, 76)   # 16:00-19:00
    base_peak = base.p_grid_kw[peak].mean()
    opt_peak = opt.p_grid_kw[peak].mean()
    ok = (opt.cost_main_gbp <= base.cost_main_gbp and abs(saving - 10.02) <= 2.0
          and opt_peak < base_peak and elapsed < 300)
    record(2, ok, f"optimised {opt.cost_main_gbp:.2f} GBP (extended day {opt.cost_total_gbp:.2f}), "
                  f"saving {saving:.2f}% vs 10.02%, peak grid {opt_peak:.0f} vs {base_peak:.0f} kW, "
                  f"{elapsed:.1f} s")


def test_criterion_3_flexibility_anchors(baseline, cfg, profile):
    early = max_duration(baseline, 1, -100.0, cfg, profile, with_breakdown=False)
    late = max_duration(baseline, 70, -100.0, cfg, profile, with_breakdown=False)
    ok = 5.3 <= early.tau_hours <= 8.3 and 0.0 <= late.tau_hours <= 0.7
    record(3, ok, f"00:15 -100 kW -> {early.tau_hours:.2f} h (want 5.3-8.3), "
                  f"17:30 -100 kW -> {late.tau_hours:.2f} h (want 0-0.7)")


def test_criterion_4_heatmap_structure(coarse):
    failed = [k for k, c in coarse.items() if c.status == "failed"]
    violations = []
    for t0 in COARSE_T0:
        for sign in (-1, 1):
            taus = [coarse[(t0, sign * m)].tau_slots for m in (50.0, 100.0, 200.0)]
            if not taus[0] >= taus[1] >= taus[2]:
                violations.append((t0, sign, taus))
    surge, share = [], []
    for m in (50.0, 100.0, 200.0):
        early = [coarse[(t0, m)].tau_hours for t0 in COARSE_T0 if t0 < 48]
        late = [coarse[(t0, m)].tau_hours for t0 in COARSE_T0 if t0 >= 64]
        ref = float(np.median(early))
        surge.append(float(np.median(late)) > ref)
        share.append(f"+{m:g}: late median {np.median(late):.2f} h vs early {ref:.2f} h, "
                     f"{sum(v > ref for v in late)}/{len(late)} late cells above")
    ok = not failed and not violations and all(surge)
    record(4, ok, f"{len(violations)} monotonicity violations, {len(failed)} failed cells; " + "; ".join(share))


def test_criterion_5_binary_equals_linear(baseline, cfg, profile):
    t0s, dps = [10, 40, 70, 88], [-100.0, -50.0, 50.0, 100.0]
    fast = flex_sweep(baseline, t0s, dps, cfg, profile, with_breakdown=False)
    slow = flex_sweep(baseline, t0s, dps, cfg, profile, linear_scan=True, with_breakdown=False)
    diff = [(a.t0, a.delta_p_kw, a.tau_slots, b.tau_slots)
            for a, b in zip(fast, slow) if a.tau_slots != b.tau_slots]
    nonzero = sum(c.tau_slots > 0 for c in fast)
    record(5, not diff, f"{len(fast)} cells, {nonzero} with tau > 0, mismatches {diff}")


_AUDIT_LOG: list[str] = []


@given(t0=st.integers(0, 90), dp=st.sampled_from([-150.0, -75.0, -25.0, 25.0, 75.0, 150.0]),
       tau=st.integers(1, 8))
@settings(max_examples=12, deadline=None, derandomize=True,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
def _flex_audit(baseline, cfg, profile, t0, dp, tau):
    tau = min(tau, horizon_cap(t0, cfg.time.total_slots))
    chk = check_flex_feasible(baseline, t0, dp, tau, cfg, profile)
    if chk.feasible:
        bad = audit_schedule(chk.solution, cfg, ca_max=cfg.thermal.t_ca_max_flex_c)
        _AUDIT_LOG.extend(f"flex({t0},{dp:g},{tau}): {v}" for v in bad)
        _AUDIT_LOG.append("ok")


def test_criterion_6_conservation(base, baseline, cfg, profile):
    # the base holds every slot at its own steady state, so it is checked as a
    # fixed point instead of by open-loop replay
    issues = [f"base: {v}" for v in audit_schedule(base, cfg, demanded_cpu_hours=demanded(profile, base.n),
                                                    replay=False)]
    drift = fixed_point_gap(base, cfg)
    if drift > 1e-6:
        issues.append(f"base: slot states drift {drift:.2e} C under one thermal step")
    issues += [f"optimised: {v}" for v in audit_schedule(baseline, cfg, demanded_cpu_hours=demanded(profile),
                                                          cyclic=True)]
    _AUDIT_LOG.clear()
    _flex_audit(baseline, cfg, profile)
    issues += [v for v in _AUDIT_LOG if v != "ok"]
    n_flex = _AUDIT_LOG.count("ok")
    record(6, not issues and n_flex > 0,
           f"base (fixed-point drift {drift:.1e} C), optimum and {n_flex} feasible flex schedules audited; "
           f"issues: {issues or 'none'}")


def test_criterion_7_linearization(baseline, cfg):
    it = cfg.it
    exact = power_law(baseline.u_total, it.p_idle_kw, it.p_max_kw, it.exponent)
    gap_kwh = abs(float(np.sum(exact - baseline.p_it_kw)) * baseline.slot_hours)
    curve = linearize_power_curve(it, 16)
    u = np.linspace(0.0, it.u_max, 400_001)
    dense = float(np.max(np.abs(curve(u) - power_law(u, it.p_idle_kw, it.p_max_kw, it.exponent))))
    bound = dense * 108 * 0.25
    record(7, gap_kwh <= bound and dense < 2.0,
           f"IT energy gap {gap_kwh:.3f} kWh <= {bound:.2f} kWh; max error at 16 segments {dense:.4f} kW")


def test_criterion_8_breakdown_closure(coarse, cfg, tmp_path):
    p_tol = cfg.economic.p_tol_kw
    worst, n = 0.0, 0
    opposing = {-1: 0, 1: 0}
    for (t0, dp), cell in coarse.items():
        if cell.breakdown is None:
            continue
        path = tmp_path / rio.breakdown_filename(cell)
        rio.write_breakdown_csv(cell, path)
        b = rio.read_csv(path, "breakdown")
        parts = np.vstack([b["d_it_kw"], b["d_ups_kw"], b["d_crac_kw"], b["d_tes_kw"]])
        worst = max(worst, float(np.max(np.abs(parts.sum(axis=0) - b["d_total_kw"]))))
        n += 1
        if np.any((parts > 1.0).any(axis=0) & (parts < -1.0).any(axis=0)):
            opposing[int(np.sign(dp))] += 1
    ok = n > 0 and worst <= p_tol and opposing[-1] > 0 and opposing[1] > 0
    record(8, ok, f"{n} feasible cells, worst closure {worst:.2e} kW (p_tol {p_tol}); cells with opposing "
                  f"asset signs: upward {opposing[-1]}, downward {opposing[1]}")


def test_criterion_9_determinism(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["optimise", "--out", str(out)]) == EXIT_OK
        man = json.loads((out / rio.MANIFEST_NAME).read_text())
        man.pop("timestamps")
        csvs = {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}
        runs.append((man, csvs))
    (ma, ca), (mb, cb) = runs
    same_csv = ca == cb and "schedule.csv" in ca
    record(9, ma == mb and same_csv,
           f"objectives {ma['objectives']} vs {mb['objectives']}; {len(ca)} CSVs identical: {same_csv}; "
           f"manifests equal modulo timestamps: {ma == mb}")
