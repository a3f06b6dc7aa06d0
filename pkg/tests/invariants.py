"""Conservation and feasibility audit applied to any solved schedule."""

import numpy as np

from dcflex.thermal import _NODE_KEY, STATE_NODES, replay_thermal

BAL_TOL = 1e-4      # kWh
TEMP_TOL = 1e-6     # C


def audit_schedule(sol, cfg, *, demanded_cpu_hours=None, cyclic=False, ca_max=None, replay=True):
    """Return a list of human-readable violations (empty when clean).

    ``replay=False`` skips the open-loop comparison, for schedules whose
    temperatures are per-slot fixed points rather than an optimised trajectory.
    """
    out = []
    dt = sol.slot_hours
    ups, cp, tp = cfg.ups, cfg.cooling, cfg.thermal

    if demanded_cpu_hours is not None:
        executed = sum(a["u"] for a in sol.allocations) * dt + float(np.sum(sol.u_fixed)) * dt
        if abs(executed - demanded_cpu_hours) > 1e-6:
            out.append(f"IT work {executed:.6f} CPU-h executed vs {demanded_cpu_hours:.6f} demanded")

    e = sol.e_ups_kwh
    step = (ups.eta_ch * sol.p_ups_ch_kw - sol.p_ups_disch_kw / ups.eta_disch) * dt
    if np.max(np.abs(np.diff(e) - step)) > BAL_TOL or abs(e[-1] - e[0] - step.sum()) > BAL_TOL:
        out.append("UPS energy balance does not telescope")
    if np.any((sol.p_ups_ch_kw > 0) & (sol.p_ups_disch_kw > 0)):
        out.append("UPS charges and discharges in one slot")
    if np.any(e < ups.e_min_kwh - BAL_TOL) or np.any(e > ups.e_max_kwh + BAL_TOL):
        out.append("UPS energy outside its band")
    ch = sol.p_ups_ch_kw[sol.p_ups_ch_kw > 0]
    if np.any(ch < ups.p_ch_min_kw - 1e-6) or np.any(ch > ups.p_ch_max_kw + 1e-6):
        out.append("UPS charge power outside its band")

    E = sol.e_tes_kwh
    tstep = (cp.eta_tes_ch * sol.q_chil_tes_kw - sol.q_tes_crac_kw / cp.eta_tes_dis) * dt
    if np.max(np.abs(np.diff(E) - tstep)) > BAL_TOL or abs(E[-1] - E[0] - tstep.sum()) > BAL_TOL:
        out.append("TES energy balance does not telescope")
    if np.any((sol.q_chil_tes_kw > 0) & (sol.q_tes_crac_kw > 0)):
        out.append("TES charges and discharges in one slot")
    if np.any(E < -BAL_TOL) or np.any(E > cp.e_tes_max_kwh + BAL_TOL):
        out.append("TES energy outside [0, capacity]")

    if cyclic:
        n = cfg.time.total_slots - sol.slots.start
        if abs(e[n] - ups.e_start_kwh) > BAL_TOL or abs(e[0] - ups.e_start_kwh) > BAL_TOL:
            out.append("UPS does not start and end at its start level")
        if abs(E[n] - E[0]) > BAL_TOL:
            out.append("TES does not return to its start level")

    if np.any(sol.p_chil_crac_kw + sol.p_chil_tes_kw > cp.p_chiller_max_kw + 1e-6):
        out.append("chiller rating exceeded")

    bounds = dict(tp.bounds_c)
    if ca_max is not None:
        bounds["ca"] = (bounds["ca"][0], ca_max)
    for nd in STATE_NODES:
        lo, hi = bounds[_NODE_KEY[nd]]
        v = sol.temps[nd]
        if np.any(v < lo - TEMP_TOL) or np.any(v > hi + TEMP_TOL):
            out.append(f"{nd} outside [{lo}, {hi}]")

    if not replay:
        return out
    init = {nd: sol.temps[nd][0] for nd in STATE_NODES}
    rp = replay_thermal(sol.p_it_opt_kw, sol.q_cool_kw, sol.q_chil_tes_kw, sol.q_tes_crac_kw, init,
                        E[0], tp, cp, cfg.time, start_slot=sol.slots.start, ca_max_override=ca_max)
    worst = max(float(np.max(np.abs(rp.temps[nd] - sol.temps[nd]))) for nd in STATE_NODES)
    if worst > TEMP_TOL:
        out.append(f"replay differs from optimiser temperatures by {worst:.2e} C")
    if np.max(np.abs(rp.e_tes_kwh - E)) > BAL_TOL:
        out.append("replay TES energy differs")
    return out


def replay_gap(sol, cfg) -> float:
    if not replay:
        return out
    init = {nd: sol.temps[nd][0] for nd in STATE_NODES}
    rp = replay_thermal(sol.p_it_opt_kw, sol.q_cool_kw, sol.q_chil_tes_kw, sol.q_tes_crac_kw, init,
                        sol.e_tes_kwh[0], cfg.thermal, cfg.cooling, cfg.time)
    return max(float(np.max(np.abs(rp.temps[nd] - sol.temps[nd]))) for nd in STATE_NODES)
