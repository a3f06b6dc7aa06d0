"""IT workload profiles and the deferrable-job scheduling constraints.

Flexible work arriving in slot ``t`` is split into tranches; tranche ``k`` may
run anywhere in ``[t, t + D_k]``.  Each job keeps a constant CPU-hour demand, so
spreading it thinner over more slots is allowed as long as it completes.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ITParams, TimeGrid, hourly_to_slots
from .milp import LinExpr, ModelInstance, PiecewiseCurve, SolveResult, Var, lin_sum, power_law

RATIO_COLUMNS = ("flex_proposed_pct", "inflex_proposed_pct")
DEFERRAL_COLUMNS = ("le_30min_pct", "le_60min_pct", "le_2h_pct", "le_3h_pct")
RATIOS_FILE = "workload_ratios.csv"
DEFERRAL_FILE = "deferral_windows.csv"


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadProfile:
    """Per-slot demand over the extended horizon.

    ``alpha[t, k]`` is the share of slot-``t`` flexible work in tranche ``k``;
    rows cover the main day only.
    """

    u_inflex: np.ndarray
    u_flex_base: np.ndarray
    alpha: np.ndarray
    delays: tuple[int, ...]
    slot_hours: float
    main_slots: int

    def __post_init__(self):
        n = len(self.u_inflex)
        if self.u_flex_base.shape != (n,):
            raise WorkloadError("u_inflex and u_flex_base must cover the same slots")
        if self.alpha.shape != (self.main_slots, len(self.delays)):
            raise WorkloadError("alpha must be (main_slots, n_tranches)")
        if np.any(self.u_flex_base[self.main_slots:] != 0):
            raise WorkloadError("no flexible arrivals allowed in extension slots")
        if np.any(np.abs(self.alpha.sum(axis=1) - 1.0) > 1e-9) or np.any(self.alpha < 0):
            raise WorkloadError("tranche fractions must be non-negative and sum to 1 per slot")

    @property
    def n_slots(self) -> int:
        return len(self.u_inflex)

    @property
    def u_total_base(self) -> np.ndarray:
        return self.u_inflex + self.u_flex_base

    @property
    def job_cpu_hours(self) -> np.ndarray:
        """R_t: flexible CPU-hours arriving in each main slot."""
        return self.u_flex_base[: self.main_slots] * self.slot_hours

    def base_jobs(self) -> list["Job"]:
        jobs = []
        r = self.job_cpu_hours
        for t in range(self.main_slots):
            for k, d in enumerate(self.delays):
                demand = r[t] * self.alpha[t, k]
                if demand > 0:
                    jobs.append(Job(t, k, t, min(t + d, self.n_slots - 1), demand, d))
        return jobs


@dataclass(frozen=True)
class Job:
    """A block of CPU-hours that must run within ``[earliest, latest]``."""

    origin: int
    tranche: int
    earliest: int
    latest: int
    cpu_hours: float
    tolerance: int


def read_workload_tables(path: str | Path | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load the hourly ratio and deferral tables from a directory of CSVs.

    Returns ``(ratios, deferral)``: ratios is (24, 2) with flexible and
    inflexible fractions, deferral is (24, 4) in percent.
    """

    def read(name):
        if path is None:
            text = resources.files("dcflex.data").joinpath(name).read_text()
        else:
            p = Path(path) / name
            if not p.exists():
                raise FileNotFoundError(f"workload table missing: {p}")
            text = p.read_text()
        return list(csv.DictReader(text.splitlines()))

    ratio_rows = read(RATIOS_FILE)
    defer_rows = read(DEFERRAL_FILE)
    for rows, cols, name in ((ratio_rows, RATIO_COLUMNS, RATIOS_FILE),
                             (defer_rows, DEFERRAL_COLUMNS, DEFERRAL_FILE)):
        if not rows or any(c not in rows[0] for c in ("hour",) + cols):
            raise WorkloadError(f"{name}: expected columns hour,{','.join(cols)}")
        if [int(r["hour"]) for r in rows] != list(range(len(rows))):
            raise WorkloadError(f"{name}: hours must run 0..{len(rows) - 1} in order")
    ratios = np.array([[float(r[c]) / 100.0 for c in RATIO_COLUMNS] for r in ratio_rows])
    deferral = np.array([[float(r[c]) for c in DEFERRAL_COLUMNS] for r in defer_rows])
    return ratios, deferral


def build_workload_profile(hourly_ratios, deferral_dist, grid: TimeGrid,
                           delays: Sequence[int] = (2, 4, 8, 12), u_max: float = 1.0,
                           extension_hours: Sequence[int] = (0, 1, 2)) -> WorkloadProfile:
    """Expand hourly tables to the slot grid.

    ``hourly_ratios`` rows are (flexible, inflexible) fractions; deferral rows
    are tranche percentages summing to 100 (+-0.5).  Inflexible demand in the
    extension repeats the listed hours of the next day.
    """
    ratios = np.asarray(hourly_ratios, dtype=float)
    deferral = np.asarray(deferral_dist, dtype=float)
    n_hours = round(grid.main_slots * grid.slot_hours)
    if ratios.shape != (n_hours, 2):
        raise WorkloadError(f"need {n_hours} rows of (flexible, inflexible) ratios")
    if deferral.shape != (n_hours, len(delays)):
        raise WorkloadError(f"need {n_hours} rows of {len(delays)} deferral percentages")
    if np.any(ratios < 0) or np.any(ratios > 1):
        raise WorkloadError("workload ratios must lie in [0, 1]")
    if np.any(ratios.sum(axis=1) > u_max + 1e-12):
        raise WorkloadError("combined utilisation exceeds u_max")
    sums = deferral.sum(axis=1)
    if np.any(np.abs(sums - 100.0) > 0.5):
        bad = int(np.argmax(np.abs(sums - 100.0) > 0.5))
        raise WorkloadError(f"deferral row for hour {bad} sums to {sums[bad]:g}, not 100")
    if np.any(deferral < 0):
        raise WorkloadError("deferral percentages must be non-negative")

    flex = hourly_to_slots(ratios[:, 0], grid)
    inflex_day = hourly_to_slots(ratios[:, 1], grid)
    ext_hours = hourly_to_slots(ratios[list(extension_hours), 1], grid)
    if len(ext_hours) < grid.extension_slots:
        raise WorkloadError("extension_hours do not cover the extension horizon")
    inflex = np.concatenate([inflex_day, ext_hours[: grid.extension_slots]])
    u_flex = np.concatenate([flex, np.zeros(grid.extension_slots)])
    alpha = np.repeat(deferral / sums[:, None], round(1 / grid.slot_hours), axis=0)
    return WorkloadProfile(inflex, u_flex, alpha, tuple(int(d) for d in delays),
                           grid.slot_hours, grid.main_slots)


def default_profile(grid: TimeGrid | None = None, delays=(2, 4, 8, 12)) -> WorkloadProfile:
    grid = grid or TimeGrid()
    ratios, deferral = read_workload_tables()
    return build_workload_profile(ratios, deferral, grid, delays)


def base_it_power(profile: WorkloadProfile, params: ITParams) -> np.ndarray:
    """Exact IT power with every job run on arrival, kW per slot."""
    u = profile.u_total_base
    if np.any(u > params.u_max + 1e-12):
        raise WorkloadError("combined utilisation exceeds u_max")
    return power_law(u, params.p_idle_kw, params.p_max_kw, params.exponent)


# ---------------------------------------------------------------------------
# MILP contribution
# ---------------------------------------------------------------------------


@dataclass
class ITScheduleVars:
    slots: range
    jobs: list[Job]
    alloc: dict[tuple[int, int], Var]          # (job index, slot) -> utilisation
    u_total: list[Var]
    p_it: list[Var]                             # linearised physical IT power
    p_it_opt: list[LinExpr]                     # power to be served (ext: increment only)
    u_fixed: np.ndarray                         # inflexible utilisation per window slot
    extras: dict = field(default_factory=dict)


def add_it_scheduling(model: ModelInstance, profile: WorkloadProfile, params: ITParams,
                      grid: TimeGrid, curve: PiecewiseCurve, *, slots: range | None = None,
                      jobs: Sequence[Job] | None = None, u_fixed=None) -> ITScheduleVars:
    """Add allocation variables, completion/capacity rows and linearised power.

    By default the window is the full extended horizon with the profile's own
    tranches.  The flexibility checks pass a clipped ``slots`` range, their own
    ``jobs`` and the fixed utilisation ``u_fixed`` for that window instead.
    In extension slots ``p_it_opt`` is the linearised power minus the
    linearised no-shift baseline, i.e. only the load moved there.
    """
    model.register("it", None)
    slots = slots if slots is not None else range(profile.n_slots)
    jobs = list(jobs) if jobs is not None else profile.base_jobs()
    if u_fixed is None:
        u_fixed = profile.u_inflex[slots.start:slots.stop]
    u_fixed = np.asarray(u_fixed, dtype=float)
    if len(u_fixed) != len(slots):
        raise WorkloadError("u_fixed must match the window length")
    dt = grid.slot_hours

    alloc: dict[tuple[int, int], Var] = {}
    per_slot: dict[int, list[Var]] = defaultdict(list)
    for j, job in enumerate(jobs):
        lo, hi = max(job.earliest, slots.start), min(job.latest, slots.stop - 1)
        if lo > hi:
            raise WorkloadError(f"job {job} has an empty window inside {slots}")
        vs = []
        for s in range(lo, hi + 1):
            v = model.add_var(f"u[{job.origin},{job.tranche},{s}]#{j}", 0.0, params.u_max)
            alloc[(j, s)] = v
            per_slot[s].append(v)
            vs.append(v)
        model.add(lin_sum(vs) * dt == job.cpu_hours, f"complete[{j}]")

    u_total, p_it, p_it_opt = [], [], []
    for i, s in enumerate(slots):
        if u_fixed[i] > params.u_max + 1e-9:
            raise WorkloadError(f"fixed utilisation {u_fixed[i]:.4f} exceeds u_max at slot {s}")
        ut = model.add_var(f"u_total[{s}]", 0.0, params.u_max)
        model.add(ut == lin_sum(per_slot[s]) + float(u_fixed[i]), f"capacity[{s}]")
        p = model.add_piecewise(ut, curve, f"p_it[{s}]")
        u_total.append(ut)
        p_it.append(p)
        if s >= grid.main_slots:
            p_it_opt.append(p - float(curve(profile.u_total_base[s])))
        else:
            p_it_opt.append(p._as_expr())
    handles = ITScheduleVars(slots, jobs, alloc, u_total, p_it, p_it_opt, u_fixed)
    model.components["it"] = handles
    return handles


@dataclass
class ITSolution:
    slots: range
    u_total: np.ndarray
    p_it_kw: np.ndarray                 # linearised
    p_it_exact_kw: np.ndarray
    p_it_opt_kw: np.ndarray
    u_fixed: np.ndarray
    allocations: list[dict]             # one row per positive allocation
    shift_histogram: np.ndarray         # [slot offset in window, shift distance]

    def executed_cpu_hours(self, dt: float) -> float:
        return float(sum(a["u"] for a in self.allocations) * dt + self.u_fixed.sum() * dt)


def extract_it_solution(result: SolveResult, handles: ITScheduleVars, params: ITParams,
                        tol: float = 1e-9) -> ITSolution:
    if not result.status.has_solution:
        raise RuntimeError(f"model not solved (status {result.status.value})")
    slots = handles.slots
    u_total = result.values(handles.u_total)
    rows = []
    max_shift = max([0] + [j.latest - j.earliest for j in handles.jobs])
    hist = np.zeros((len(slots), max_shift + 1))
    for (j, s), v in handles.alloc.items():
        val = result.value(v)
        if val > tol:
            job = handles.jobs[j]
            shift = s - job.earliest
            rows.append({"origin": job.origin, "tranche": job.tranche, "slot": s,
                         "u": val, "shift": shift, "tolerance": job.tolerance,
                         "earliest": job.earliest})
            hist[s - slots.start, shift] += val
    rows.sort(key=lambda r: (r["slot"], r["origin"], r["tranche"]))
    return ITSolution(
        slots=slots,
        u_total=u_total,
        p_it_kw=result.values(handles.p_it),
        p_it_exact_kw=power_law(np.clip(u_total, 0, None), params.p_idle_kw, params.p_max_kw, params.exponent),
        p_it_opt_kw=np.array([result.value(e) for e in handles.p_it_opt]),
        u_fixed=handles.u_fixed.copy(),
        allocations=rows,
        shift_histogram=hist,
    )
