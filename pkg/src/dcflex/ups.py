"""UPS battery used as a schedulable store.

Energies are kept on slot boundaries: ``e[0]`` is the level before the first
slot of the window and ``e[i + 1]`` the level after slot ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TimeGrid, UPSParams
from .milp import LinExpr, ModelInstance, SolveResult, Var


@dataclass
class UPSVars:
    slots: range
    e: list[Var]            # len(slots) + 1 boundary levels
    p_ch: list[Var]
    p_disch: list[Var]
    z_ch: list[Var]
    z_disch: list[Var]

    @property
    def p_net(self) -> list[LinExpr]:
        return [c - d for c, d in zip(self.p_ch, self.p_disch)]


def add_ups(model: ModelInstance, params: UPSParams, grid: TimeGrid, *, slots: range | None = None,
            e_initial: float | None = None, e_terminal: float | None = None,
            cyclic_slot: int | None = None) -> UPSVars:
    """Add SoC recursion, power bands with status binaries and the endpoint rule.

    ``e_initial`` defaults to the start level.  Without an explicit
    ``e_terminal`` the level at the end of the extended horizon (or after the
    main day when ``cyclic_endpoint == "main"``) is bound to the start level.
    """
    model.register("ups", None)
    slots = slots if slots is not None else range(grid.total_slots)
    n = len(slots)
    dt = grid.slot_hours
    e = [model.add_var(f"e_ups[{slots.start + i}]", params.e_min_kwh, params.e_max_kwh) for i in range(n + 1)]
    p_ch = [model.add_var(f"p_ups_ch[{s}]", 0.0, params.p_ch_max_kw) for s in slots]
    p_dis = [model.add_var(f"p_ups_disch[{s}]", 0.0, params.p_disch_max_kw) for s in slots]
    z_ch = [model.add_var(f"z_ups_ch[{s}]", binary=True) for s in slots]
    z_dis = [model.add_var(f"z_ups_disch[{s}]", binary=True) for s in slots]
    for i, s in enumerate(slots):
        model.add(e[i + 1] == e[i] + p_ch[i] * (params.eta_ch * dt) - p_dis[i] * (dt / params.eta_disch),
                  f"ups_soc[{s}]")
        model.add(p_ch[i] <= z_ch[i] * params.p_ch_max_kw, f"ups_ch_hi[{s}]")
        model.add(p_ch[i] >= z_ch[i] * params.p_ch_min_kw, f"ups_ch_lo[{s}]")
        model.add(p_dis[i] <= z_dis[i] * params.p_disch_max_kw, f"ups_dis_hi[{s}]")
        model.add(p_dis[i] >= z_dis[i] * params.p_disch_min_kw, f"ups_dis_lo[{s}]")
        model.add(z_ch[i] + z_dis[i] <= 1, f"ups_excl[{s}]")

    model.fix(e[0], params.e_start_kwh if e_initial is None else e_initial)
    if e_terminal is not None:
        model.fix(e[-1], e_terminal)
    else:
        if cyclic_slot is None:
            cyclic_slot = grid.total_slots if params.cyclic_endpoint == "extended" else grid.main_slots
        model.fix(e[cyclic_slot - slots.start], params.e_start_kwh)
    handles = UPSVars(slots, e, p_ch, p_dis, z_ch, z_dis)
    model.components["ups"] = handles
    return handles


@dataclass
class UPSSolution:
    e_kwh: np.ndarray        # boundary levels, len n + 1
    p_ch_kw: np.ndarray
    p_disch_kw: np.ndarray
    mode: list[str]

    @property
    def p_net_kw(self) -> np.ndarray:
        return self.p_ch_kw - self.p_disch_kw


def extract_ups_solution(result: SolveResult, handles: UPSVars, params: UPSParams,
                         tol: float = 1e-6) -> UPSSolution:
    """Pull the trajectory and check modes against the binaries."""
    if not result.status.has_solution:
        raise RuntimeError(f"model not solved (status {result.status.value})")
    ch = result.values(handles.p_ch)
    dis = result.values(handles.p_disch)
    zc = np.round(result.values(handles.z_ch))
    zd = np.round(result.values(handles.z_disch))
    # snap solver noise on idle slots
    ch[np.abs(ch) < tol] = 0.0
    dis[np.abs(dis) < tol] = 0.0
    mode = []
    for i, s in enumerate(handles.slots):
        if ch[i] > 0 and dis[i] > 0:
            raise AssertionError(f"UPS charges and discharges in slot {s}")
        if (ch[i] > 0 and zc[i] != 1) or (dis[i] > 0 and zd[i] != 1):
            raise AssertionError(f"UPS power without status binary in slot {s}")
        mode.append("charge" if ch[i] > 0 else "discharge" if dis[i] > 0 else "idle")
    return UPSSolution(result.values(handles.e), ch, dis, mode)


def ups_step(e: float, p_ch: float, p_disch: float, params: UPSParams, dt: float) -> float:
    """One slot of the SoC recursion, evaluated directly."""
    return e + params.eta_ch * p_ch * dt - p_disch / params.eta_disch * dt
