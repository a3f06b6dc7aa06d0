"""CSV and JSON persistence for schedules, sweeps and run manifests."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .milp import SolutionStatus
from .scenarios import FlexibilityCell, ScheduleSolution
from .workload import Job

SCHEMA_FILE = "csv_schema.json"
MANIFEST_NAME = "manifest.json"
BASELINE_JSON = "baseline_solution.json"


class SchemaError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("dcflex.data").joinpath(SCHEMA_FILE).read_text())


def schema_columns(kind: str) -> list[str]:
    schema = load_schema()
    if kind not in schema:
        raise KeyError(f"no CSV schema named {kind!r}")
    return [c["name"] for c in schema[kind]["columns"]]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    x = float(v)
    if x == 0.0:
        x = 0.0  # drop negative zero
    return f"{x:.6f}"


def write_csv(path: str | Path, kind: str, rows: Iterable[Sequence]) -> Path:
    cols = schema_columns(kind)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            if len(row) != len(cols):
                raise SchemaError(f"{kind}: row has {len(row)} fields, schema has {len(cols)}")
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: str | Path, kind: str | None = None) -> dict[str, np.ndarray | list]:
    """Read a result CSV into columns; numeric columns become float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if kind is not None:
        validate_csv(path, kind)
    out: dict = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in vals])
        except ValueError:
            out[name] = vals
    return out


def validate_csv(path: str | Path, kind: str) -> None:
    """Check header and per-column types against the shipped schema."""
    spec = load_schema()[kind]["columns"]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0] if rows else []
    expected = [c["name"] for c in spec]
    if header != expected:
        raise SchemaError(f"{path}: header {header} != schema {expected}")
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(spec):
            raise SchemaError(f"{path}:{ln}: {len(row)} fields, expected {len(spec)}")
        for v, col in zip(row, spec):
            t = col["type"]
            try:
                if t == "int":
                    int(v)
                elif t == "float":
                    float(v)
                elif t == "enum" and v not in col["values"]:
                    raise ValueError(v)
            except ValueError:
                raise SchemaError(f"{path}:{ln}: column {col['name']} value {v!r} is not {t}") from None


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def write_schedule_csv(sol: ScheduleSolution, path: str | Path) -> Path:
    """One row per slot; state columns hold the value at the end of the slot."""
    rows = []
    for i, s in enumerate(sol.slots):
        rows.append((s, sol.prices[i], sol.p_grid_it_kw[i], sol.p_grid_od_kw[i], sol.p_ups_ch_kw[i],
                     sol.p_ups_disch_kw[i], sol.p_chil_crac_kw[i], sol.p_chil_tes_kw[i],
                     sol.e_ups_kwh[i + 1], sol.e_tes_kwh[i + 1], sol.temps["t_it"][i + 1],
                     sol.temps["t_r"][i + 1], sol.temps["t_ca"][i + 1], sol.temps["t_ha"][i + 1],
                     sol.temps["t_ain"][i + 1]))
    return write_csv(path, "schedule", rows)


def write_shift_histogram_csv(sol: ScheduleSolution, path: str | Path) -> Path:
    rows = []
    for i, s in enumerate(sol.slots):
        for d, u in enumerate(sol.shift_histogram[i]):
            if u > 0:
                rows.append((s, d, u))
    return write_csv(path, "shift_histogram", rows)


def write_utilisation_csv(sol: ScheduleSolution, path: str | Path) -> Path:
    rows = [(s, sol.u_fixed[i], sol.u_total[i], sol.p_it_kw[i], sol.p_it_exact_kw[i])
            for i, s in enumerate(sol.slots)]
    return write_csv(path, "utilisation", rows)


def write_heatmap_csv(cells: Sequence[FlexibilityCell], path: str | Path) -> Path:
    return write_csv(path, "heatmap", [(c.t0, c.delta_p_kw, c.tau_hours, c.status) for c in cells])


def write_breakdown_csv(cell: FlexibilityCell, path: str | Path) -> Path:
    b = cell.breakdown or {}
    rows = []
    if b:
        for i, s in enumerate(b["slot"]):
            rows.append((int(s), b["d_it_kw"][i], b["d_ups_kw"][i], b["d_crac_kw"][i],
                         b["d_tes_kw"][i], b["d_total_kw"][i]))
    return write_csv(path, "breakdown", rows)


def write_cost_summary_csv(base: ScheduleSolution | None, opt: ScheduleSolution, path) -> Path:
    rows = []
    if base is not None:
        rows.append(("base_main", base.cost_main_gbp))
    rows.append(("optimised_main", opt.cost_main_gbp))
    rows.append(("optimised_extended", opt.cost_total_gbp))
    if base is not None:
        rows.append(("saving_main_pct", 100 * (base.cost_main_gbp - opt.cost_main_gbp) / base.cost_main_gbp))
        rows.append(("saving_extended_pct", 100 * (base.cost_main_gbp - opt.cost_total_gbp) / base.cost_main_gbp))
    return write_csv(path, "cost_summary", rows)


def breakdown_filename(cell: FlexibilityCell) -> str:
    sign = "m" if cell.delta_p_kw < 0 else "p"
    return f"breakdown_t{cell.t0:03d}_{sign}{abs(cell.delta_p_kw):g}.csv"


# ---------------------------------------------------------------------------
# Baseline persistence
# ---------------------------------------------------------------------------

_ARRAY_FIELDS = ("prices", "p_grid_it_kw", "p_grid_od_kw", "p_ups_ch_kw", "p_ups_disch_kw",
                 "p_chil_crac_kw", "p_chil_tes_kw", "q_cool_kw", "q_chil_tes_kw", "q_tes_crac_kw",
                 "e_ups_kwh", "e_tes_kwh", "u_total", "p_it_kw", "p_it_exact_kw", "p_it_opt_kw",
                 "shift_histogram", "u_fixed")


def solution_to_dict(sol: ScheduleSolution) -> dict:
    # runtime is left out so reruns produce identical files
    d = {"scenario": sol.scenario, "slots": [sol.slots.start, sol.slots.stop],
         "slot_hours": sol.slot_hours, "main_slots": sol.main_slots,
         "status": sol.status.value, "objective": sol.objective, "mip_gap": sol.mip_gap,
         "linearization_error_kw": sol.linearization_error_kw,
         "meta": sol.meta, "allocations": sol.allocations,
         "jobs": [[j.origin, j.tranche, j.earliest, j.latest, j.cpu_hours, j.tolerance] for j in sol.jobs],
         "temps": {k: v.tolist() for k, v in sol.temps.items()}}
    for f in _ARRAY_FIELDS:
        d[f] = np.asarray(getattr(sol, f)).tolist()
    return d


def solution_from_dict(d: dict) -> ScheduleSolution:
    kw = {f: np.asarray(d[f], dtype=float) for f in _ARRAY_FIELDS}
    return ScheduleSolution(
        scenario=d["scenario"], slots=range(*d["slots"]), slot_hours=d["slot_hours"],
        main_slots=d["main_slots"], temps={k: np.asarray(v) for k, v in d["temps"].items()},
        allocations=d["allocations"], jobs=[Job(*j) for j in d["jobs"]],
        status=SolutionStatus(d["status"]), objective=d["objective"], mip_gap=d["mip_gap"],
        linearization_error_kw=d["linearization_error_kw"],
        meta=d["meta"], **kw)


def save_solution(sol: ScheduleSolution, path: str | Path) -> Path:
    Path(path).write_text(json.dumps(solution_to_dict(sol), sort_keys=True))
    return Path(path)


def load_solution(path: str | Path) -> ScheduleSolution:
    return solution_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def now_iso() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: str | Path, *, command: str, config, table_files: Sequence[Path],
                   backend=None, n_segments: int | None = None, linearization_error_kw: float | None = None,
                   objectives: dict | None = None, anomalies: Sequence[str] = (), started: str,
                   status: str = "ok", runtime_s: dict | None = None, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` listing every result file in ``out_dir`` with its hash."""
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.iterdir() if p.is_file() and p.name != MANIFEST_NAME)
    manifest = {
        "command": command,
        "status": status,
        "config_digest": config.digest(),
        "thermal_discretisation": config.thermal.discretisation,
        "tables": {Path(p).name: file_sha256(p) for p in table_files},
        "solver": None if backend is None else {
            "name": backend.name, "mip_rel_gap": backend.mip_rel_gap,
            "feasibility_tol": backend.feasibility_tol},
        "n_segments": n_segments,
        "linearization_max_abs_error_kw": linearization_error_kw,
        "objectives": objectives or {},
        "anomalies": list(anomalies),
        "files": {p.name: file_sha256(p) for p in files},
        # everything wall-clock dependent lives here
        "timestamps": {"started": started, "finished": now_iso(), "runtime_s": runtime_s or {}},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
