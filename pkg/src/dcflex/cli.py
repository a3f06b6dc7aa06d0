"""Command-line entry point: ``dcflex base | optimise | flex``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from importlib import resources
from pathlib import Path

from . import io as rio
from . import plotting
from .config import ConfigError, check_overhead, load_facility_config
from .config import replace as replace_config
from .milp import BACKENDS, SolutionStatus, default_backend
from .scenarios import (BREAKDOWN_GAP, PROBE_GAP, RECOVERY_SLOTS, ScenarioError, default_dp_grid, flex_sweep,
                        recomputed_overhead, run_scenario1, run_scenario2, saving_fraction)
from .thermal import ThermalError
from .workload import DEFERRAL_FILE, RATIOS_FILE, WorkloadError, build_workload_profile, read_workload_tables

logger = logging.getLogger("dcflex")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2          # argparse
EXIT_INPUT = 3
EXIT_INFEASIBLE = 4
EXIT_SOLVER = 5
EXIT_ORACLE_MISMATCH = 6


class InputError(Exception):
    pass


def _status_exit(status: SolutionStatus | None) -> int:
    return EXIT_INFEASIBLE if status == SolutionStatus.INFEASIBLE else EXIT_SOLVER


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

_HHMM = re.compile(r"^(\d{1,2}):(\d{2})$")


def _slot(token: str, slot_hours: float) -> int:
    m = _HHMM.match(token)
    if m:
        minutes = int(m.group(1)) * 60 + int(m.group(2))
        q = minutes / (slot_hours * 60)
        if q != int(q):
            raise InputError(f"time {token} is not on a slot boundary")
        return int(q)
    return int(token)


def parse_t0_grid(text: str, slot_hours: float = 0.25) -> list[int]:
    """``"0:96:4"`` (start:stop:step slots), or a comma list of slots / HH:MM times."""
    text = text.strip()
    try:
        if text.count(":") == 2 and "," not in text:
            a, b, c = (int(x) for x in text.split(":"))
            return list(range(a, b, c))
        return [_slot(t.strip(), slot_hours) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"bad --t0-grid {text!r}: {exc}") from None


def parse_dp_grid(text: str) -> list[float]:
    """Comma list of kW values, or ``"lo:hi:step"`` inclusive of both ends."""
    text = text.strip()
    try:
        if text.count(":") == 2 and "," not in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError("step must be > 0")
            n = int(round((hi - lo) / step))
            return [lo + step * i for i in range(n + 1)]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"bad --dp-grid {text!r}: {exc}") from None


def _table_files(tables: str | None) -> list[Path]:
    if tables is None:
        base = resources.files("dcflex.data")
        return [Path(str(base.joinpath(RATIOS_FILE))), Path(str(base.joinpath(DEFERRAL_FILE)))]
    return [Path(tables) / RATIOS_FILE, Path(tables) / DEFERRAL_FILE]


def _load_inputs(args):
    try:
        cfg = load_facility_config(args.config)
        ratios, deferral = read_workload_tables(args.tables)
        profile = build_workload_profile(ratios, deferral, cfg.time, cfg.it.tranche_delays_slots, cfg.it.u_max)
    except (OSError, ConfigError, WorkloadError, ThermalError) as exc:
        raise InputError(str(exc)) from exc
    return cfg, profile


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _backend(args):
    try:
        return default_backend() if args.solver is None else BACKENDS[args.solver]()
    except (KeyError, ValueError) as exc:
        raise InputError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_base(args) -> int:
    started = rio.now_iso()
    cfg, profile = _load_inputs(args)
    out = _out_dir(args.out)
    try:
        base = run_scenario1(cfg, profile)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _status_exit(exc.status)
    anomalies = []
    od = recomputed_overhead(cfg, profile)
    if not check_overhead(cfg, od):
        anomalies.append(f"configured overhead {cfg.economic.p_grid_od_kw:.3f} kW vs recomputed {od:.3f} kW")
    rio.write_schedule_csv(base, out / "base_schedule.csv")
    rio.write_utilisation_csv(base, out / "base_utilisation.csv")
    rio.write_manifest(out, command="base", config=cfg, table_files=_table_files(args.tables),
                       objectives={"total_base_cost_gbp": base.cost_main_gbp}, anomalies=anomalies,
                       started=started)
    print(f"total_base_cost_gbp {base.cost_main_gbp:.2f}")
    return EXIT_OK


def cmd_optimise(args) -> int:
    started = rio.now_iso()
    cfg, profile = _load_inputs(args)
    if args.segments < 1:
        raise InputError("--segments must be >= 1")
    if args.spacing:
        cfg = replace_config(cfg, it={"segment_spacing": args.spacing})
    out = _out_dir(args.out)
    backend = _backend(args)
    base = run_scenario1(cfg, profile)
    try:
        opt = run_scenario2(cfg, profile, n_segments=args.segments, backend=backend,
                            time_limit=args.time_limit, lp_dump=args.lp_dump,
                            tes_tie_break=not args.no_tie_break)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        rio.write_manifest(out, command="optimise", config=cfg, table_files=_table_files(args.tables),
                           backend=backend, n_segments=args.segments, started=started,
                           status=exc.status.value if exc.status else "error")
        return _status_exit(exc.status)
    anomalies = []
    if opt.cost_main_gbp > base.cost_main_gbp + 1e-6:
        anomalies.append("optimised main-day cost exceeds base cost")
    if opt.status != SolutionStatus.OPTIMAL:
        anomalies.append(f"solver status {opt.status.value}")

    rio.write_schedule_csv(base, out / "base_schedule.csv")
    rio.write_schedule_csv(opt, out / "schedule.csv")
    rio.write_shift_histogram_csv(opt, out / "shift_histogram.csv")
    rio.write_utilisation_csv(opt, out / "utilisation.csv")
    rio.write_cost_summary_csv(base, opt, out / "cost_summary.csv")
    rio.save_solution(opt, out / rio.BASELINE_JSON)
    if not args.no_plots:
        plotting.plot_cost_comparison(out / "base_schedule.csv", out / "schedule.csv", out / "cost_comparison.svg")
        plotting.plot_decomposition(out / "schedule.csv", out / "decomposition.svg")
        plotting.plot_shift_histogram(out / "shift_histogram.csv", out / "shift_histogram.svg")
    objectives = {"total_base_cost_gbp": base.cost_main_gbp, "optimised_cost_gbp": opt.cost_main_gbp,
                  "optimised_extended_cost_gbp": opt.cost_total_gbp,
                  "saving_pct": 100 * saving_fraction(base, opt), "mip_gap": opt.mip_gap}
    rio.write_manifest(out, command="optimise", config=cfg, table_files=_table_files(args.tables),
                       backend=backend, n_segments=args.segments,
                       linearization_error_kw=opt.linearization_error_kw, objectives=objectives,
                       anomalies=anomalies, started=started, status=opt.status.value,
                       runtime_s={"optimise": round(opt.runtime_s, 2)})
    print(f"total_base_cost_gbp {base.cost_main_gbp:.2f}")
    print(f"optimised_cost_gbp {opt.cost_main_gbp:.2f}")
    print(f"optimised_extended_cost_gbp {opt.cost_total_gbp:.2f}")
    print(f"saving_pct {100 * saving_fraction(base, opt):.2f}")
    return EXIT_OK


def _cells_key(cells):
    return [(c.t0, c.delta_p_kw, c.tau_slots) for c in cells]


def cmd_flex(args) -> int:
    started = rio.now_iso()
    cfg, profile = _load_inputs(args)
    bdir = Path(args.baseline_dir)
    bfile = bdir / rio.BASELINE_JSON
    if not bfile.exists():
        raise InputError(f"{bdir} holds no optimised baseline ({rio.BASELINE_JSON}); run 'dcflex optimise' first")
    baseline = rio.load_solution(bfile)
    mpath = bdir / rio.MANIFEST_NAME
    if mpath.exists():
        digest = json.loads(mpath.read_text()).get("config_digest")
        if digest and digest != cfg.digest():
            raise InputError("baseline was produced with a different facility config")
    g = cfg.time
    t0s = parse_t0_grid(args.t0_grid, g.slot_hours)
    dps = parse_dp_grid(args.dp_grid) if args.dp_grid else default_dp_grid()
    if not t0s or not dps:
        raise InputError("empty --t0-grid or --dp-grid")
    if any(not 0 <= t < g.main_slots for t in t0s):
        raise InputError(f"t0 values must lie in 0..{g.main_slots - 1}")
    out = _out_dir(args.out)
    backend = _backend(args)
    factory = type(backend)

    def progress(cell):
        logger.info("t0=%s dp=%+g tau=%.2f h (%s)", g.slot_label(cell.t0), cell.delta_p_kw, cell.tau_hours,
                    cell.status)

    cells = flex_sweep(baseline, t0s, dps, cfg, profile, parallelism=args.jobs, backend_factory=factory,
                       time_limit=args.time_limit, progress=progress)
    anomalies = [f"t0={c.t0} dp={c.delta_p_kw:g}: {a}" for c in cells for a in c.anomalies]
    failed = [c for c in cells if c.status == "failed"]
    anomalies += [f"t0={c.t0} dp={c.delta_p_kw:g}: failed: {c.error}" for c in failed]
    code = EXIT_OK
    extra = {"search": {"probe_mip_rel_gap": PROBE_GAP, "breakdown_mip_rel_gap": BREAKDOWN_GAP,
                        "recovery_slots": RECOVERY_SLOTS, "t0_grid": t0s, "delta_p_grid_kw": dps}}
    if args.verify_linear_scan:
        oracle = flex_sweep(baseline, t0s, dps, cfg, profile, parallelism=args.jobs, backend_factory=factory,
                            time_limit=args.time_limit, linear_scan=True, with_breakdown=False)
        mism = [(a.t0, a.delta_p_kw, a.tau_slots, b.tau_slots)
                for a, b in zip(cells, oracle) if a.tau_slots != b.tau_slots]
        extra["linear_scan_check"] = {"cells": len(cells), "mismatches": [list(m) for m in mism]}
        if mism:
            anomalies.append(f"{len(mism)} cell(s) differ from the linear-scan oracle")
            code = EXIT_ORACLE_MISMATCH
        print(f"linear_scan_check {'ok' if not mism else 'MISMATCH'} ({len(cells)} cells)")

    rio.write_heatmap_csv(cells, out / "heatmap.csv")
    for c in cells:
        if c.breakdown is not None:
            path = out / rio.breakdown_filename(c)
            rio.write_breakdown_csv(c, path)
            if not args.no_plots:
                title = f"{g.slot_label(c.t0)}, {c.delta_p_kw:+g} kW, {c.tau_hours:g} h"
                plotting.plot_breakdown(path, path.with_suffix(".svg"), title=title)
    if not args.no_plots:
        plotting.plot_heatmap(out / "heatmap.csv", out / "heatmap.svg")
    status = "ok"
    if cells and len(failed) == len(cells):
        status, code = "failed", EXIT_SOLVER
    rio.write_manifest(out, command="flex", config=cfg, table_files=_table_files(args.tables),
                       backend=backend, n_segments=baseline.meta.get("n_segments"),
                       linearization_error_kw=baseline.linearization_error_kw,
                       objectives={"baseline_cost_gbp": baseline.cost_main_gbp},
                       anomalies=anomalies, started=started, status=status,
                       extra={"baseline_sha256": rio.file_sha256(bfile), **extra})
    for c in cells:
        print(f"{g.slot_label(c.t0)} {c.delta_p_kw:+g} kW tau_hours {c.tau_hours:g} {c.status}")
    if failed:
        print(f"{len(failed)} of {len(cells)} cell(s) failed; see manifest", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="facility TOML (default: bundled configuration)")
    common.add_argument("--tables", help="directory with workload_ratios.csv and deferral_windows.csv "
                                         "(default: bundled tables)")
    common.add_argument("--out", required=True, help="output directory (created if missing)")
    common.add_argument("--solver", choices=sorted(BACKENDS),
                        help="MILP backend (default: $DCFLEX_SOLVER or highs)")
    common.add_argument("--time-limit", type=float, default=None, help="per-solve time limit in seconds")
    common.add_argument("--no-plots", action="store_true", help="skip SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dcflex", description="Data-centre cost and flexibility scheduling.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("base", parents=[common], help="cost of running every job on arrival")

    o = sub.add_parser("optimise", parents=[common], help="cost-optimal schedule over the extended day")
    o.add_argument("--segments", type=int, default=16, help="linear pieces for the IT power curve")
    o.add_argument("--spacing", choices=("equal-error", "uniform"), default=None,
                   help="breakpoint placement (default: from the config)")
    o.add_argument("--lp-dump", help="write the model in LP format to this path")
    o.add_argument("--no-tie-break", action="store_true",
                   help="skip the second solve that fixes the TES start level")

    f = sub.add_parser("flex", parents=[common], help="maximum duration of grid-power deviations")
    f.add_argument("--baseline-dir", required=True, help="output directory of a previous 'optimise' run")
    f.add_argument("--t0-grid", default="0:96:4",
                   help="start slots: 'start:stop:step' or a comma list of slots or HH:MM (default hourly)")
    f.add_argument("--dp-grid", default=None,
                   help="deviations in kW: 'lo:hi:step' or a comma list (default -300:300:25)")
    f.add_argument("--jobs", type=int, default=1, help="worker processes")
    f.add_argument("--verify-linear-scan", action="store_true",
                   help="re-solve every cell by exhaustive scan and compare")
    return p


_COMMANDS = {"base": cmd_base, "optimise": cmd_optimise, "flex": cmd_flex}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ScenarioError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return _status_exit(exc.status)


if __name__ == "__main__":
    sys.exit(main())
