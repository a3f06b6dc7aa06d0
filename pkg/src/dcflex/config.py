"""Facility parameters, time grid and the TOML config format.

Every physical or economic constant the model builders use lives in one of the
frozen dataclasses below.  Field names carry their units.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

logger = logging.getLogger(__name__)

NODES = ("ain", "ca", "ha", "r", "it")
DISCRETISATIONS = ("explicit", "semi-implicit", "implicit")
OVERHEAD_FRACTION = 0.07
OVERHEAD_WARN_KW = 0.5


class ConfigError(ValueError):
    """Config file could not be parsed or failed validation."""


@dataclass(frozen=True)
class TimeGrid:
    slot_hours: float = 0.25
    main_slots: int = 96
    extension_slots: int = 12

    @property
    def total_slots(self) -> int:
        return self.main_slots + self.extension_slots

    @property
    def seconds_per_slot(self) -> float:
        return 3600.0 * self.slot_hours

    def validate(self) -> None:
        if self.slot_hours <= 0 or self.main_slots <= 0 or self.extension_slots < 0:
            raise ConfigError("time: slot_hours, main_slots must be positive, extension_slots >= 0")
        if not math.isclose(self.slot_hours * self.main_slots, 24.0):
            raise ConfigError("time: slot_hours * main_slots must equal 24 h")

    def slot_label(self, slot: int) -> str:
        minutes = int(round(slot * self.slot_hours * 60))
        return f"{(minutes // 60) % 24:02d}:{minutes % 60:02d}"


@dataclass(frozen=True)
class ITParams:
    p_idle_kw: float = 166.7
    p_max_kw: float = 1000.0
    u_max: float = 1.0
    exponent: float = 1.32
    tranche_delays_slots: tuple[int, ...] = (2, 4, 8, 12)
    segment_spacing: str = "equal-error"

    def validate(self) -> None:
        if self.segment_spacing not in ("equal-error", "uniform"):
            raise ConfigError("it: segment_spacing must be 'equal-error' or 'uniform'")
        if not 0 < self.p_idle_kw < self.p_max_kw:
            raise ConfigError("it: need 0 < p_idle_kw < p_max_kw")
        if self.exponent <= 1:
            raise ConfigError("it: exponent must be > 1 (convex power curve)")
        if not 0 < self.u_max <= 1:
            raise ConfigError("it: u_max must be in (0, 1]")
        d = self.tranche_delays_slots
        if not d or any(x < 0 for x in d) or list(d) != sorted(d):
            raise ConfigError("it: tranche_delays_slots must be non-negative and ascending")


@dataclass(frozen=True)
class UPSParams:
    e_base_kwh: float = 600.0
    soc_min: float = 0.5
    soc_max: float = 1.0
    p_ch_min_kw: float = 40.0
    p_ch_max_kw: float = 270.0
    p_disch_min_kw: float = 100.0
    p_disch_max_kw: float = 2700.0
    eta_ch: float = 0.82
    eta_disch: float = 0.92
    soc_start_end: float = 0.5
    cyclic_endpoint: str = "extended"

    @property
    def e_min_kwh(self) -> float:
        return self.soc_min * self.e_base_kwh

    @property
    def e_max_kwh(self) -> float:
        return self.soc_max * self.e_base_kwh

    @property
    def e_start_kwh(self) -> float:
        return self.soc_start_end * self.e_base_kwh

    def validate(self) -> None:
        for name in ("soc_min", "soc_max", "soc_start_end"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"ups: {name} = {v} outside [0, 1]")
        if not self.soc_min <= self.soc_start_end <= self.soc_max:
            raise ConfigError("ups: need soc_min <= soc_start_end <= soc_max")
        if self.e_base_kwh <= 0:
            raise ConfigError("ups: e_base_kwh must be positive")
        if not 0 <= self.p_ch_min_kw <= self.p_ch_max_kw:
            raise ConfigError("ups: need 0 <= p_ch_min_kw <= p_ch_max_kw")
        if not 0 <= self.p_disch_min_kw <= self.p_disch_max_kw:
            raise ConfigError("ups: need 0 <= p_disch_min_kw <= p_disch_max_kw")
        for name in ("eta_ch", "eta_disch"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"ups: {name} = {v} outside (0, 1]")
        if self.cyclic_endpoint not in ("extended", "main"):
            raise ConfigError("ups: cyclic_endpoint must be 'extended' or 'main'")


@dataclass(frozen=True)
class ThermalParams:
    m_dot_air_kg_s: float = 100.0
    c_pa_kj_kgk: float = 1.005
    c_it_kj_k: float = 1.788e4
    c_r_kj_k: float = 1.802e4
    c_ca_kj_k: float = 2.33e3
    c_ha_kj_k: float = 1.17e3
    g_cv_kw_k: float = 109.0
    g_cd_kw_k: float = 4.484
    kappa: float = 0.766
    t_out_c: float = 22.0
    bounds_c: Mapping[str, tuple[float, float]] = field(default_factory=lambda: {
        "ain": (14.0, 30.0), "ca": (18.0, 22.5), "ha": (18.0, 40.0),
        "r": (18.0, 40.0), "it": (18.0, 60.0)})
    t_ca_max_flex_c: float = 23.0
    discretisation: str = "implicit"

    @property
    def mc(self) -> float:
        """Air capacity flow through the CRAC, kW/K."""
        return self.m_dot_air_kg_s * self.c_pa_kj_kgk

    @property
    def mkc(self) -> float:
        """Effective rack air capacity flow, kW/K."""
        return self.m_dot_air_kg_s * self.kappa * self.c_pa_kj_kgk

    def validate(self) -> None:
        for name in ("m_dot_air_kg_s", "c_pa_kj_kgk", "c_it_kj_k", "c_r_kj_k", "c_ca_kj_k",
                     "c_ha_kj_k", "g_cv_kw_k", "g_cd_kw_k"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"thermal: {name} must be strictly positive")
        if not 0 < self.kappa <= 1:
            raise ConfigError("thermal: kappa must be in (0, 1]")
        if set(self.bounds_c) != set(NODES):
            raise ConfigError(f"thermal: bounds_c needs exactly the nodes {NODES}")
        for node, (lo, hi) in self.bounds_c.items():
            if not lo < hi:
                raise ConfigError(f"thermal: bounds_c.{node} needs min < max")
        if self.discretisation not in DISCRETISATIONS:
            raise ConfigError(f"thermal: discretisation must be one of {DISCRETISATIONS}")
        if self.t_ca_max_flex_c < self.bounds_c["ca"][1]:
            raise ConfigError("thermal: t_ca_max_flex_c must not tighten the cold-aisle bound")


@dataclass(frozen=True)
class CoolingParams:
    cop_chiller: float = 5.0
    p_chiller_max_kw: float = 400.0
    e_tes_max_kwh: float = 1000.0
    q_tes_ch_max_kw: float = 300.0
    q_tes_dis_max_kw: float = 300.0
    eta_tes_ch: float = 0.9
    eta_tes_dis: float = 0.9
    cyclic_endpoint: str = "extended"

    def validate(self) -> None:
        if self.cop_chiller <= 0:
            raise ConfigError("cooling: cop_chiller must be positive")
        if self.p_chiller_max_kw * self.cop_chiller < self.q_tes_ch_max_kw:
            raise ConfigError("cooling: chiller cannot feed the TES at its full charge rate")
        if self.e_tes_max_kwh <= 0 or self.q_tes_ch_max_kw < 0 or self.q_tes_dis_max_kw < 0:
            raise ConfigError("cooling: TES capacity and rates must be positive")
        for name in ("eta_tes_ch", "eta_tes_dis"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"cooling: {name} outside (0, 1]")
        if self.cyclic_endpoint not in ("extended", "main"):
            raise ConfigError("cooling: cyclic_endpoint must be 'extended' or 'main'")


@dataclass(frozen=True)
class EconomicParams:
    hourly_prices_gbp_per_mwh: tuple[float, ...] = (
        60, 55, 52, 50, 48, 48, 55, 65, 80, 90, 95, 100,
        98, 95, 110, 120, 130, 140, 135, 120, 100, 90, 80, 70)
    extension_price_hours: tuple[int, ...] = (0, 1, 2)
    p_grid_od_kw: float = 53.095
    p_tol_kw: float = 0.1

    def slot_prices(self, grid: TimeGrid) -> np.ndarray:
        """Per-slot prices over the extended horizon (hourly values repeated)."""
        per_hour = round(1.0 / grid.slot_hours)
        hourly = list(self.hourly_prices_gbp_per_mwh) + [
            self.hourly_prices_gbp_per_mwh[h] for h in self.extension_price_hours]
        prices = np.repeat(np.asarray(hourly, dtype=float), per_hour)
        if len(prices) < grid.total_slots:
            missing = len(prices)
            raise ConfigError(f"economic: no price for slot {missing + 1} (extension horizon uncovered)")
        return prices[: grid.total_slots]

    def validate(self, grid: TimeGrid) -> None:
        n_day = round(grid.main_slots * grid.slot_hours)
        if len(self.hourly_prices_gbp_per_mwh) != n_day:
            raise ConfigError(f"economic: need {n_day} hourly prices, got {len(self.hourly_prices_gbp_per_mwh)}")
        if any(not 0 <= h < n_day for h in self.extension_price_hours):
            raise ConfigError("economic: extension_price_hours must index hours of the day")
        self.slot_prices(grid)
        if self.p_grid_od_kw < 0:
            raise ConfigError("economic: p_grid_od_kw must be >= 0")
        if self.p_tol_kw <= 0:
            raise ConfigError("economic: p_tol_kw must be > 0")


@dataclass(frozen=True)
class FacilityConfig:
    time: TimeGrid = field(default_factory=TimeGrid)
    it: ITParams = field(default_factory=ITParams)
    ups: UPSParams = field(default_factory=UPSParams)
    thermal: ThermalParams = field(default_factory=ThermalParams)
    cooling: CoolingParams = field(default_factory=CoolingParams)
    economic: EconomicParams = field(default_factory=EconomicParams)

    def validate(self) -> "FacilityConfig":
        self.time.validate()
        self.it.validate()
        self.ups.validate()
        self.thermal.validate()
        self.cooling.validate()
        self.economic.validate(self.time)
        if max(self.it.tranche_delays_slots) > self.time.extension_slots:
            raise ConfigError("it: longest tranche delay exceeds the extension horizon")
        return self

    @property
    def prices(self) -> np.ndarray:
        return self.economic.slot_prices(self.time)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for sect in ("time", "it", "ups", "thermal", "cooling", "economic"):
            d = dataclasses.asdict(getattr(self, sect))
            for k, v in d.items():
                if isinstance(v, tuple):
                    d[k] = list(v)
            if sect == "thermal":
                d["bounds_c"] = {n: list(b) for n, b in d["bounds_c"].items()}
            out[sect] = d
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {"time": TimeGrid, "it": ITParams, "ups": UPSParams,
             "thermal": ThermalParams, "cooling": CoolingParams, "economic": EconomicParams}


def _build_section(name: str, cls, raw: Mapping[str, Any]):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{name}: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if isinstance(v, list):
            v = tuple(v)
        if k == "bounds_c":
            if not isinstance(v, Mapping):
                raise ConfigError("thermal: bounds_c must be a table of [min, max] pairs")
            try:
                v = {n: (float(b[0]), float(b[1])) for n, b in v.items()}
            except (TypeError, IndexError, ValueError):
                raise ConfigError("thermal: bounds_c entries must be [min, max]") from None
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(raw: Mapping[str, Any]) -> FacilityConfig:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    parts = {name: _build_section(name, cls, raw.get(name, {})) for name, cls in _SECTIONS.items()}
    return FacilityConfig(**parts).validate()


def load_facility_config(path: str | Path | None = None) -> FacilityConfig:
    """Read and validate a TOML facility config.  ``None`` loads the bundled default."""
    try:
        if path is None:
            text = resources.files("dcflex.data").joinpath("default_config.toml").read_text()
        else:
            text = Path(path).read_text()
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(raw)


def dump_facility_config(cfg: FacilityConfig, path: str | Path) -> None:
    Path(path).write_text(tomli_w.dumps(cfg.to_dict()))


def compute_overhead_power(schedule, fraction: float = OVERHEAD_FRACTION,
                           main_slots: int | None = None) -> float:
    """Constant auxiliary load: ``fraction`` of the mean IT-grid + chiller-CRAC draw.

    ``schedule`` needs ``p_grid_it_kw`` and ``p_chil_crac_kw`` arrays; only the
    first ``main_slots`` entries (default: all) are averaged.
    """
    it = np.asarray(schedule.p_grid_it_kw, dtype=float)
    crac = np.asarray(schedule.p_chil_crac_kw, dtype=float)
    if it.shape != crac.shape or it.ndim != 1 or len(it) == 0:
        raise ValueError("schedule power arrays must be equal-length 1-D")
    n = len(it) if main_slots is None else main_slots
    return float(fraction * np.mean(it[:n] + crac[:n]))


def check_overhead(cfg: FacilityConfig, recomputed_kw: float) -> bool:
    """Warn when the configured overhead and the recomputed one disagree."""
    diff = abs(cfg.economic.p_grid_od_kw - recomputed_kw)
    if diff > OVERHEAD_WARN_KW:
        logger.warning("configured p_grid_od_kw=%.3f differs from recomputed %.3f kW by %.3f kW",
                       cfg.economic.p_grid_od_kw, recomputed_kw, diff)
        return False
    return True


def replace(cfg: FacilityConfig, **sections: Mapping[str, Any]) -> FacilityConfig:
    """Copy of ``cfg`` with per-section field overrides, revalidated."""
    parts = {}
    for name in _SECTIONS:
        cur = getattr(cfg, name)
        parts[name] = dataclasses.replace(cur, **sections[name]) if name in sections else cur
    return FacilityConfig(**parts).validate()


def hourly_to_slots(values: Sequence[float], grid: TimeGrid) -> np.ndarray:
    per_hour = round(1.0 / grid.slot_hours)
    return np.repeat(np.asarray(values, dtype=float), per_hour)
