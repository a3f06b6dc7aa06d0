"""Chiller, CRAC and TES variables plus the five-node air/IT thermal network.

Temperatures and TES energy live on slot boundaries like the UPS: index 0 is
the state entering the first slot of the window, index ``i + 1`` the state
after slot ``i``.  Slot ``i`` inputs (IT heat, cooling) drive the step
``i -> i + 1``.  The step multiplies kW by ``3600 * dt`` seconds to land in kJ
against capacities in kJ/K.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import NODES, CoolingParams, ThermalParams, TimeGrid
from .milp import LinExpr, ModelInstance, SolveResult, Var, as_expr

# boundary-state columns shared by CSVs and replay
STATE_NODES = ("t_ain", "t_it", "t_r", "t_ca", "t_ha")
_NODE_KEY = {"t_ain": "ain", "t_it": "it", "t_r": "r", "t_ca": "ca", "t_ha": "ha"}


class ThermalError(ValueError):
    pass


@dataclass(frozen=True)
class ThermalState:
    t_ain: float
    t_it: float
    t_r: float
    t_ca: float
    t_ha: float

    def as_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in STATE_NODES}


@dataclass
class ThermalVars:
    slots: range
    temps: dict[str, list[Var]]      # node -> boundary temperatures (n + 1)
    q_cool: list[LinExpr]
    q_chil_crac: list[LinExpr]
    q_chil_tes: list[LinExpr]
    q_tes_crac: list[Var]
    p_chil_crac: list[Var]
    p_chil_tes: list[Var]
    e_tes: list[Var]                 # boundary levels (n + 1)
    z_tes_ch: list[Var]
    z_tes_dis: list[Var]


@dataclass(frozen=True)
class StepMatrices:
    """One slot of the thermal network as ``M1 @ x_new = M0 @ x_old + B @ u + c``.

    ``x`` follows ``STATE_NODES``; ``u`` is (IT heat kW, cooling kW).  The MILP
    rows and the replay integrator are both generated from these arrays.
    """

    scheme: str
    m1: np.ndarray
    m0: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def ha_ref_new(self) -> bool:
        """Whether the inlet equation reads the post-step hot-aisle temperature."""
        return self.m1[0, 4] != 0.0


def step_matrices(tp: ThermalParams, grid: TimeGrid, scheme: str | None = None) -> StepMatrices:
    """Discretise the network over one slot.

    ``explicit`` evaluates every flux on the old state (the unstable textbook
    form at 15-minute slots); ``semi-implicit`` takes the upstream neighbour
    at the new state and self terms at the old one; ``implicit`` is backward
    Euler.
    """
    scheme = scheme or tp.discretisation
    f = grid.seconds_per_slot
    a, b_, c_, d = f / tp.c_it_kj_k, f / tp.c_r_kj_k, f / tp.c_ca_kj_k, f / tp.c_ha_kj_k
    G, K, Gd, To, mc = tp.g_cv_kw_k, tp.mkc, tp.g_cd_kw_k, tp.t_out_c, tp.mc
    AIN, IT, R, CA, HA = range(5)
    m1 = np.eye(5)
    m0 = np.zeros((5, 5))
    B = np.zeros((5, 2))
    c = np.zeros(5)
    B[AIN, 1] = -1.0 / mc
    B[IT, 0] = a
    c[CA] = c_ * Gd * To
    if scheme == "explicit":
        m0[AIN, HA] = 1.0
        m0[IT, IT], m0[IT, R] = 1 - a * G, a * G
        m0[R, R], m0[R, CA], m0[R, IT] = 1 - b_ * (K + G), b_ * K, b_ * G
        m0[CA, CA], m0[CA, AIN] = 1 - c_ * (K + Gd), c_ * K
        m0[HA, HA], m0[HA, R] = 1 - d * K, d * K
    elif scheme == "semi-implicit":
        m1[AIN, HA] = -1.0
        m1[IT, R], m0[IT, IT] = -a * G, 1 - a * G
        m1[R, CA], m0[R, R], m0[R, IT] = -b_ * K, 1 - b_ * (K + G), b_ * G
        m1[CA, AIN], m0[CA, CA] = -c_ * K, 1 - c_ * (K + Gd)
        m1[HA, R], m0[HA, HA] = -d * K, 1 - d * K
    elif scheme == "implicit":
        m1[AIN, HA] = -1.0
        m1[IT, IT], m1[IT, R] = 1 + a * G, -a * G
        m1[R, R], m1[R, CA], m1[R, IT] = 1 + b_ * (K + G), -b_ * K, -b_ * G
        m1[CA, CA], m1[CA, AIN] = 1 + c_ * (K + Gd), -c_ * K
        m1[HA, HA], m1[HA, R] = 1 + d * K, -d * K
        for j in (IT, R, CA, HA):
            m0[j, j] = 1.0
    else:
        raise ThermalError(f"unknown discretisation {scheme!r}")
    return StepMatrices(scheme, m1, m0, B, c)


def add_cooling(model: ModelInstance, tp: ThermalParams, cp: CoolingParams, p_it: Sequence,
                grid: TimeGrid, ca_max_override: float | None = None, *, slots: range | None = None,
                initial_state: ThermalState | None = None, tes_initial: float | None = None,
                tes_terminal: float | None = None, terminal_state: ThermalState | None = None,
                cyclic_slot: int | None = None) -> ThermalVars:
    """Add cooling supply, TES and the thermal recursions for ``slots``.

    ``p_it[i]`` is the heat released by the IT load in slot ``i`` of the window.
    With ``tes_initial``/``tes_terminal`` unset the TES start level is free and
    tied to the level at the cyclic slot.  ``terminal_state`` pins the boundary
    temperatures after the last slot.
    """
    model.register("cooling", None)
    slots = slots if slots is not None else range(grid.total_slots)
    n = len(slots)
    if len(p_it) != n:
        raise ThermalError(f"p_it has {len(p_it)} entries for a {n}-slot window")
    dt = grid.slot_hours
    sm = step_matrices(tp, grid)
    mc = tp.mc
    bounds = dict(tp.bounds_c)
    if ca_max_override is not None:
        bounds["ca"] = (bounds["ca"][0], float(ca_max_override))

    b = slots.start
    temps = {}
    for node in STATE_NODES:
        lo, hi = bounds[_NODE_KEY[node]]
        temps[node] = [model.add_var(f"{node}[{b + i}]", lo, hi) for i in range(n + 1)]

    p_crac = [model.add_var(f"p_chil_crac[{s}]", 0.0, cp.p_chiller_max_kw) for s in slots]
    p_tes = [model.add_var(f"p_chil_tes[{s}]", 0.0, cp.q_tes_ch_max_kw / cp.cop_chiller) for s in slots]
    q_dis = [model.add_var(f"q_tes_crac[{s}]", 0.0, cp.q_tes_dis_max_kw) for s in slots]
    z_ch = [model.add_var(f"z_tes_ch[{s}]", binary=True) for s in slots]
    z_dis = [model.add_var(f"z_tes_dis[{s}]", binary=True) for s in slots]
    e = [model.add_var(f"e_tes[{b + i}]", 0.0, cp.e_tes_max_kwh) for i in range(n + 1)]
    q_crac = [p * cp.cop_chiller for p in p_crac]
    q_tes = [p * cp.cop_chiller for p in p_tes]
    q_cool = [qc + qd for qc, qd in zip(q_crac, q_dis)]

    ha = temps["t_ha"]
    t_ca_min = tp.bounds_c["ca"][0]
    for i, s in enumerate(slots):
        model.add(p_crac[i] + p_tes[i] <= cp.p_chiller_max_kw, f"chiller_cap[{s}]")
        model.add(q_tes[i] <= z_ch[i] * cp.q_tes_ch_max_kw, f"tes_ch[{s}]")
        model.add(q_dis[i] <= z_dis[i] * cp.q_tes_dis_max_kw, f"tes_dis[{s}]")
        model.add(z_ch[i] + z_dis[i] <= 1, f"tes_excl[{s}]")
        model.add(e[i + 1] == e[i] + q_tes[i] * (cp.eta_tes_ch * dt) - q_dis[i] * (dt / cp.eta_tes_dis),
                  f"tes_soc[{s}]")
        ha_ref = ha[i + 1] if sm.ha_ref_new else ha[i]
        model.add(q_cool[i] <= (ha_ref - t_ca_min) * mc, f"overcool[{s}]")

        heat = as_expr(p_it[i])
        for j, node in enumerate(STATE_NODES):
            row = LinExpr()
            for jj, other in enumerate(STATE_NODES):
                if sm.m1[j, jj]:
                    row.iadd(temps[other][i + 1], sm.m1[j, jj])
                if sm.m0[j, jj]:
                    row.iadd(temps[other][i], -sm.m0[j, jj])
            if sm.b[j, 0]:
                row.iadd(heat, -sm.b[j, 0])
            if sm.b[j, 1]:
                row.iadd(q_cool[i], -sm.b[j, 1])
            model.add(row == float(sm.c[j]), f"{node}[{s}]")

    if initial_state is not None:
        for node, val in initial_state.as_dict().items():
            model.fix(temps[node][0], val)
    if terminal_state is not None:
        for node, val in terminal_state.as_dict().items():
            model.fix(temps[node][-1], val)
    if tes_initial is not None:
        model.fix(e[0], tes_initial)
    if tes_terminal is not None:
        model.fix(e[-1], tes_terminal)
    elif tes_initial is None:
        if cyclic_slot is None:
            cyclic_slot = grid.total_slots if cp.cyclic_endpoint == "extended" else grid.main_slots
        model.add(e[cyclic_slot - b] == e[0], "tes_cyclic")

    handles = ThermalVars(slots, temps, q_cool, q_crac, q_tes, q_dis, p_crac, p_tes, e, z_ch, z_dis)
    model.components["cooling"] = handles
    return handles


@dataclass
class CoolingSolution:
    temps: dict[str, np.ndarray]     # boundary values (n + 1)
    q_cool_kw: np.ndarray
    q_chil_tes_kw: np.ndarray
    q_tes_crac_kw: np.ndarray
    p_chil_crac_kw: np.ndarray
    p_chil_tes_kw: np.ndarray
    e_tes_kwh: np.ndarray


def extract_cooling_solution(result: SolveResult, h: ThermalVars, tol: float = 1e-6) -> CoolingSolution:
    if not result.status.has_solution:
        raise RuntimeError(f"model not solved (status {result.status.value})")

    def clean(a):
        a = np.asarray(a, dtype=float)
        a[np.abs(a) < tol] = 0.0
        return a

    ch = clean(result.values(h.q_chil_tes))
    dis = clean(result.values(h.q_tes_crac))
    both = np.flatnonzero((ch > 0) & (dis > 0))
    if both.size:
        raise AssertionError(f"TES charges and discharges in slot {h.slots.start + both[0]}")
    return CoolingSolution(
        temps={nd: result.values(v) for nd, v in h.temps.items()},
        q_cool_kw=np.array([result.value(q) for q in h.q_cool]),
        q_chil_tes_kw=ch,
        q_tes_crac_kw=dis,
        p_chil_crac_kw=clean(result.values(h.p_chil_crac)),
        p_chil_tes_kw=clean(result.values(h.p_chil_tes)),
        e_tes_kwh=result.values(h.e_tes),
    )


# ---------------------------------------------------------------------------
# Replay oracle
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    slot: int          # boundary index in absolute slots
    node: str
    value: float
    bound: float
    magnitude: float


@dataclass
class ReplayResult:
    temps: dict[str, np.ndarray]
    e_tes_kwh: np.ndarray
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def thermal_step(state: Mapping[str, float], p_it: float, q_cool: float, tp: ThermalParams,
                 grid: TimeGrid, sm: StepMatrices | None = None) -> dict[str, float]:
    """Advance the five temperatures by one slot."""
    sm = sm or step_matrices(tp, grid)
    x = np.array([state[n] for n in STATE_NODES], dtype=float)
    rhs = sm.m0 @ x + sm.b @ np.array([p_it, q_cool], dtype=float) + sm.c
    if sm.scheme == "explicit":
        new = rhs
    else:
        new = np.linalg.solve(sm.m1, rhs)
    return dict(zip(STATE_NODES, new.tolist()))


def replay_thermal(p_it, q_cool, q_chil_tes, q_tes_crac, initial_state, e_tes_initial: float,
                   tp: ThermalParams, cp: CoolingParams, grid: TimeGrid, *, start_slot: int = 0,
                   anchor=None, ca_max_override: float | None = None,
                   bound_tol: float = 1e-6) -> ReplayResult:
    """Integrate the thermal and TES recursions outside the optimiser.

    Open loop by default.  The explicit scheme at 15-minute slots amplifies
    rounding error by one to two orders of magnitude per step, so long open-loop
    runs drift away from any optimiser trajectory.  Passing ``anchor`` (a dict of
    node -> boundary arrays, e.g. the optimiser's temperatures) re-seeds every
    step from the anchored state, which checks each step's arithmetic
    independently.
    """
    p_it, q_cool = np.asarray(p_it, float), np.asarray(q_cool, float)
    q_chil_tes, q_tes_crac = np.asarray(q_chil_tes, float), np.asarray(q_tes_crac, float)
    n = len(p_it)
    if not (len(q_cool) == len(q_chil_tes) == len(q_tes_crac) == n):
        raise ThermalError("replay inputs must have equal length")
    init = initial_state.as_dict() if isinstance(initial_state, ThermalState) else dict(initial_state)
    temps = {nd: np.empty(n + 1) for nd in STATE_NODES}
    for nd in STATE_NODES:
        temps[nd][0] = init[nd]
    e = np.empty(n + 1)
    e[0] = e_tes_initial
    dt = grid.slot_hours
    sm = step_matrices(tp, grid)
    for i in range(n):
        if anchor is not None:
            prev = {nd: float(anchor[nd][i]) for nd in STATE_NODES}
        else:
            prev = {nd: temps[nd][i] for nd in STATE_NODES}
        nxt = thermal_step(prev, p_it[i], q_cool[i], tp, grid, sm)
        for nd in STATE_NODES:
            temps[nd][i + 1] = nxt[nd]
        e[i + 1] = e[i] + cp.eta_tes_ch * q_chil_tes[i] * dt - q_tes_crac[i] / cp.eta_tes_dis * dt

    bounds = dict(tp.bounds_c)
    if ca_max_override is not None:
        bounds["ca"] = (bounds["ca"][0], ca_max_override)
    viol = []
    for i in range(n + 1):
        for nd in STATE_NODES:
            lo, hi = bounds[_NODE_KEY[nd]]
            v = temps[nd][i]
            if v < lo - bound_tol:
                viol.append(Violation(start_slot + i, nd, v, lo, lo - v))
            elif v > hi + bound_tol:
                viol.append(Violation(start_slot + i, nd, v, hi, v - hi))
        if e[i] < -bound_tol:
            viol.append(Violation(start_slot + i, "e_tes", e[i], 0.0, -e[i]))
        elif e[i] > cp.e_tes_max_kwh + bound_tol:
            viol.append(Violation(start_slot + i, "e_tes", e[i], cp.e_tes_max_kwh, e[i] - cp.e_tes_max_kwh))
    return ReplayResult(temps, e, viol)


REPLAY_INPUT_COLUMNS = ("slot", "p_it_kw", "q_cool_kw", "q_chil_tes_kw", "q_tes_crac_kw")
REPLAY_OUTPUT_COLUMNS = ("slot",) + tuple(f"{n}_c" for n in STATE_NODES) + ("e_tes_kwh",)


def read_replay_inputs(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    """Read a replay schedule CSV; returns (first slot, column arrays)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or any(c not in rows[0] for c in REPLAY_INPUT_COLUMNS):
        raise ThermalError(f"replay CSV needs columns {','.join(REPLAY_INPUT_COLUMNS)}")
    slots = [int(r["slot"]) for r in rows]
    if slots != list(range(slots[0], slots[0] + len(slots))):
        raise ThermalError("replay CSV slots must be contiguous")
    cols = {c: np.array([float(r[c]) for r in rows]) for c in REPLAY_INPUT_COLUMNS[1:]}
    return slots[0], cols


def write_replay_trajectory(result: ReplayResult, path_or_buf, start_slot: int = 0) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLAY_OUTPUT_COLUMNS)
    for i in range(len(result.e_tes_kwh)):
        w.writerow([start_slot + i] + [f"{result.temps[n][i]:.9f}" for n in STATE_NODES]
                   + [f"{result.e_tes_kwh[i]:.9f}"])
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(buf.getvalue())
    else:
        Path(path_or_buf).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# Steady state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    state: ThermalState
    q_cool_kw: float
    q_out_kw: float
    p_chiller_kw: float


def steady_state(p_it_kw: float, tp: ThermalParams, cp: CoolingParams, t_ca_c: float,
                 check_bounds: bool = True) -> SteadyState:
    """Fixed point of the thermal recursions with the cold aisle held at ``t_ca_c``.

    With every increment zero the recursions give
    ``T_HA = T_R = T_CA + P/mkc``, ``T_IT = T_R + P/G_cv``,
    ``T_Ain = T_CA + G_cd (T_CA - T_out)/mkc`` and
    ``Q_cool = mc (T_HA - T_Ain) = (P + Q_out) / kappa``.
    """
    mc, mkc = tp.mc, tp.mkc
    t_r = t_ca_c + p_it_kw / mkc
    t_it = t_r + p_it_kw / tp.g_cv_kw_k
    t_ain = t_ca_c + tp.g_cd_kw_k * (t_ca_c - tp.t_out_c) / mkc
    q_out = tp.g_cd_kw_k * (tp.t_out_c - t_ca_c)
    q_cool = mc * (t_r - t_ain)
    st = ThermalState(t_ain=t_ain, t_it=t_it, t_r=t_r, t_ca=t_ca_c, t_ha=t_r)
    if check_bounds:
        for nd, v in st.as_dict().items():
            lo, hi = tp.bounds_c[_NODE_KEY[nd]]
            if not lo - 1e-9 <= v <= hi + 1e-9:
                raise ThermalError(f"steady state puts {nd} at {v:.3f} C outside [{lo}, {hi}]")
        if q_cool > (t_r - tp.bounds_c["ca"][0]) * mc + 1e-9:
            raise ThermalError("steady state violates the overcooling cap")
    p_chil = q_cool / cp.cop_chiller
    if check_bounds and p_chil > cp.p_chiller_max_kw + 1e-9:
        raise ThermalError(f"steady chiller power {p_chil:.1f} kW exceeds the chiller rating")
    return SteadyState(st, q_cool, q_out, p_chil)


def steady_state_init(u_total_slot1: float, it_params, tp: ThermalParams, cp: CoolingParams,
                      t_ca_target: float) -> SteadyState:
    """Initial temperatures at the fixed point for a given utilisation."""
    from .milp import power_law

    if not 0.0 <= u_total_slot1 <= it_params.u_max:
        raise ThermalError("utilisation must lie in [0, u_max]")
    p = float(power_law(u_total_slot1, it_params.p_idle_kw, it_params.p_max_kw, it_params.exponent))
    return steady_state(p, tp, cp, t_ca_target)
