"""Static figures rendered from result CSVs.

Every function reads CSVs only, so re-plotting an output directory gives the
same SVG bytes: the SVG id salt is fixed and the date metadata is dropped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import read_csv  # noqa: E402

_RC = {"svg.hashsalt": "dcflex", "svg.fonttype": "path", "font.size": 9}
_META = {"Date": None, "Creator": "dcflex"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg", metadata=_META if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def _hours(slots) -> np.ndarray:
    return np.asarray(slots) / 4.0


def plot_cost_comparison(base_csv, opt_csv, out_path) -> Path:
    """Grid draw of both schedules over the day, with the price on a twin axis."""
    with plt.rc_context(_RC):
        base = read_csv(base_csv, "schedule")
        opt = read_csv(opt_csv, "schedule")
        fig, ax = plt.subplots(figsize=(8, 3.5))
        for d, label, style in ((base, "base", "-"), (opt, "optimised", "-")):
            total = (d["p_grid_it_kw"] + d["p_grid_od_kw"] + d["p_ups_ch_kw"]
                     + d["p_chil_crac_kw"] + d["p_chil_tes_kw"])
            ax.step(_hours(d["slot"]), total, where="post", ls=style, label=label)
        ax2 = ax.twinx()
        ax2.step(_hours(opt["slot"]), opt["price_gbp_per_mwh"], where="post", color="0.5", lw=0.8, ls=":")
        ax2.set_ylabel("price [GBP/MWh]")
        ax.set_xlabel("hour")
        ax.set_ylabel("grid power [kW]")
        ax.legend(loc="upper left")
        fig.tight_layout()
        return _save(fig, out_path)


def plot_decomposition(schedule_csv, out_path) -> Path:
    """Stacked grid draw by consumer, plus UPS discharge drawn below zero."""
    with plt.rc_context(_RC):
        d = read_csv(schedule_csv, "schedule")
        h = _hours(d["slot"])
        layers = [("IT from grid", d["p_grid_it_kw"]), ("overhead", d["p_grid_od_kw"]),
                  ("UPS charge", d["p_ups_ch_kw"]), ("chiller to CRAC", d["p_chil_crac_kw"]),
                  ("chiller to TES", d["p_chil_tes_kw"])]
        fig, (ax, axs) = plt.subplots(2, 1, figsize=(8, 5.5), sharex=True,
                                      gridspec_kw={"height_ratios": [3, 1.4]})
        ax.stackplot(h, *[v for _, v in layers], labels=[n for n, _ in layers], step="post")
        ax.fill_between(h, -d["p_ups_disch_kw"], step="post", color="tab:red", alpha=0.5,
                        label="UPS discharge")
        ax.set_ylabel("power [kW]")
        ax.legend(loc="upper left", fontsize=7, ncol=3)
        axs.plot(h, d["t_ca_c"], label="cold aisle")
        axs.plot(h, d["t_ain_c"], label="CRAC supply")
        axs.set_ylabel("[C]")
        axs.set_xlabel("hour")
        axs.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, out_path)


def plot_shift_histogram(hist_csv, out_path) -> Path:
    """Executed flexible utilisation per slot, stacked by delay."""
    with plt.rc_context(_RC):
        d = read_csv(hist_csv, "shift_histogram")
        fig, ax = plt.subplots(figsize=(8, 3.5))
        slots = d["slot"].astype(int)
        shifts = d["shift_slots"].astype(int)
        if len(slots):
            grid = np.zeros((shifts.max() + 1, slots.max() + 1))
            np.add.at(grid, (shifts, slots), d["u"])
            x = np.arange(grid.shape[1]) / 4.0
            bottom = np.zeros(grid.shape[1])
            cmap = plt.get_cmap("viridis", grid.shape[0])
            for k in range(grid.shape[0]):
                if grid[k].any():
                    ax.bar(x, grid[k], width=0.25, bottom=bottom, align="edge", color=cmap(k),
                           label=f"{k * 15} min" if k in (0, 4, 8, 12) else None)
                    bottom += grid[k]
        ax.set_xlabel("hour")
        ax.set_ylabel("flexible utilisation")
        ax.legend(title="delay", fontsize=7)
        fig.tight_layout()
        return _save(fig, out_path)


def plot_heatmap(heatmap_csv, out_path) -> Path:
    with plt.rc_context(_RC):
        d = read_csv(heatmap_csv, "heatmap")
        t0s = np.unique(d["t0_slot"])
        dps = np.unique(d["delta_p_kw"])
        grid = np.full((len(dps), len(t0s)), np.nan)
        ti = {v: i for i, v in enumerate(t0s)}
        di = {v: i for i, v in enumerate(dps)}
        for t0, dp, tau, st in zip(d["t0_slot"], d["delta_p_kw"], d["tau_hours"], d["status"]):
            if st != "failed":
                grid[di[dp], ti[t0]] = tau
        fig, ax = plt.subplots(figsize=(8, 4))
        x_edges = np.append(t0s, t0s[-1] + (t0s[1] - t0s[0] if len(t0s) > 1 else 1)) / 4.0
        y_step = dps[1] - dps[0] if len(dps) > 1 else 1.0
        y_edges = np.append(dps - y_step / 2, dps[-1] + y_step / 2)
        mesh = ax.pcolormesh(x_edges, y_edges, grid, cmap="viridis", shading="flat")
        fig.colorbar(mesh, ax=ax, label="max duration [h]")
        ax.set_xlabel("start time [h]")
        ax.set_ylabel("grid deviation [kW]")
        fig.tight_layout()
        return _save(fig, out_path)


def plot_breakdown(breakdown_csv, out_path, title: str | None = None) -> Path:
    """Per-slot asset deviations as stacked bars (positive and negative parts stacked apart)."""
    with plt.rc_context(_RC):
        d = read_csv(breakdown_csv, "breakdown")
        x = _hours(d["slot"])
        fig, ax = plt.subplots(figsize=(7, 3.5))
        pos = np.zeros(len(x))
        neg = np.zeros(len(x))
        for name, col in (("IT", "d_it_kw"), ("UPS", "d_ups_kw"), ("chiller CRAC", "d_crac_kw"),
                          ("chiller TES", "d_tes_kw")):
            v = d[col]
            up, dn = np.clip(v, 0, None), np.clip(v, None, 0)
            bars = ax.bar(x, up, width=0.25, bottom=pos, align="edge", label=name)
            ax.bar(x, dn, width=0.25, bottom=neg, align="edge", color=bars.patches[0].get_facecolor()
                   if len(bars.patches) else None)
            pos += up
            neg += dn
        ax.step(np.append(x, x[-1] + 0.25) if len(x) else x,
                np.append(d["d_total_kw"], d["d_total_kw"][-1]) if len(x) else x,
                where="post", color="k", lw=1, label="total")
        ax.axhline(0, color="0.3", lw=0.5)
        ax.set_xlabel("hour")
        ax.set_ylabel("deviation from baseline [kW]")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7, ncol=5)
        fig.tight_layout()
        return _save(fig, out_path)
