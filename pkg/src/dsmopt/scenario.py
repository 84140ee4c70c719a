"""Microgrid scenario description: storages, dispatchable loads, grid and series.

Scenario files are TOML documents with the tables ``[time]``, ``[prices]``,
``[site]``, ``[grid]`` and the arrays ``[[storage]]``, ``[[type1_load]]`` and
``[[type2_load]]``. See ``docs/scenario-format.md`` in the repository for the
full grammar.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .timeseries import (
    Series,
    TimeGrid,
    TimeSeriesError,
    Unit,
    constant_series,
    load_series,
    series_from_values,
    step_of_clock,
)


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, *, field: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line


class UnknownSeriesRef(ParseError):
    pass


@dataclass(frozen=True)
class StorageSpec:
    name: str
    eta_ch: float
    eta_disch: float
    e_rated_kwh: float
    soc_min_pct: float
    soc_max_pct: float
    soc_init_pct: float
    soc_req_pct: float
    t_req: int
    p_ch_max_kw: float
    p_disch_max_kw: float
    availability: Series
    discharge_enabled: bool = True

    def soc_gain_per_kw(self, delta_t_hours: float) -> float:
        """Percent SoC per kW held for one step, before efficiency."""
        return 100.0 * delta_t_hours / self.e_rated_kwh


@dataclass(frozen=True)
class Type1LoadSpec:
    """Interruptible load: ``duration_steps`` on-steps anywhere inside ``window``."""

    name: str
    power_kw: float
    duration_steps: int
    window: tuple[int, int]

    def window_length(self) -> int:
        return self.window[1] - self.window[0] + 1

    def energy_kwh(self, delta_t_hours: float) -> float:
        return self.power_kw * self.duration_steps * delta_t_hours


@dataclass(frozen=True)
class Type2LoadSpec(Type1LoadSpec):
    """Non-interruptible load: one contiguous run of ``duration_steps`` inside ``window``."""


@dataclass(frozen=True)
class GridSpec:
    p_import_max: Series
    p_export_max: Series
    export_enabled: bool = True
    exclusive_exchange: bool = False


@dataclass(frozen=True)
class Scenario:
    time: TimeGrid
    grid_spec: GridSpec
    import_price: Series
    export_price: Series
    pv: Series
    base_load: Series
    storages: tuple[StorageSpec, ...] = ()
    type1_loads: tuple[Type1LoadSpec, ...] = ()
    type2_loads: tuple[Type2LoadSpec, ...] = ()
    name: str = "scenario"

    def __post_init__(self):
        for attr in ("storages", "type1_loads", "type2_loads"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def loads(self) -> tuple[Type1LoadSpec, ...]:
        """Type 1 loads followed by Type 2 loads; positions are the load ordinals."""
        return self.type1_loads + self.type2_loads

    @property
    def num_steps(self) -> int:
        return self.time.num_steps

    def digest(self) -> str:
        return hashlib.sha256(serialize_scenario(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True, order=True)
class Violation:
    device: str
    code: str
    message: str = field(compare=False)
    structural: bool = field(default=False, compare=False)

    def as_dict(self) -> dict[str, Any]:
        return {"device": self.device, "code": self.code, "message": self.message,
                "structural": self.structural}


# Codes that make a scenario unusable for model building. Everything else is a
# feasibility warning: the model is still built and the solver decides.
STRUCTURAL_CODES = frozenset({
    "SERIES_LENGTH_MISMATCH",
    "DUPLICATE_NAME",
    "BAD_PARAMETER",
    "SOC_BOUNDS_INVERTED",
    "SOC_INIT_OUT_OF_RANGE",
    "TARGET_TIME_OUT_OF_HORIZON",
    "WINDOW_OUT_OF_HORIZON",
    "AVAILABILITY_NOT_BINARY",
})


def validate_scenario(s: Scenario) -> list[Violation]:
    """Structural and reachability checks, ordered by device then code."""
    T = s.num_steps
    dt = s.time.delta_t_hours
    groups: list[list[Violation]] = []

    def add(bucket: list[Violation], device: str, code: str, message: str) -> None:
        bucket.append(Violation(device, code, message, code in STRUCTURAL_CODES))

    site: list[Violation] = []
    named = [("import_price", s.import_price), ("export_price", s.export_price), ("pv", s.pv),
             ("base_load", s.base_load), ("p_import_max", s.grid_spec.p_import_max),
             ("p_export_max", s.grid_spec.p_export_max)]
    named += [(f"{st.name}.availability", st.availability) for st in s.storages]
    for label, series in named:
        if len(series) != T:
            add(site, "scenario", "SERIES_LENGTH_MISMATCH", f"{label} has {len(series)} values, expected {T}")
    for label in ("pv", "base_load", "p_import_max", "p_export_max"):
        series = dict(named)[label]
        if any(v < 0 for v in series):
            add(site, "scenario", "BAD_PARAMETER", f"{label} has negative entries")
    seen: set[str] = set()
    for name in [d.name for d in s.storages] + [d.name for d in s.loads]:
        if name in seen:
            add(site, "scenario", "DUPLICATE_NAME", f"device name {name!r} used more than once")
        seen.add(name)
    groups.append(site)

    for st in s.storages:
        out: list[Violation] = []
        if not (0 < st.eta_ch <= 1 and 0 < st.eta_disch <= 1):
            add(out, st.name, "BAD_PARAMETER", "efficiencies must lie in (0, 1]")
        if not st.e_rated_kwh > 0:
            add(out, st.name, "BAD_PARAMETER", "rated capacity must be positive")
        if st.p_ch_max_kw < 0 or st.p_disch_max_kw < 0:
            add(out, st.name, "BAD_PARAMETER", "power limits must be non-negative")
        if not all(0 <= p <= 100 for p in (st.soc_min_pct, st.soc_max_pct, st.soc_init_pct)):
            add(out, st.name, "BAD_PARAMETER", "SoC percentages must lie in [0, 100]")
        if st.availability.unit is not Unit.BINARY:
            add(out, st.name, "AVAILABILITY_NOT_BINARY", "availability series must have unit 'binary'")
        if st.soc_min_pct > st.soc_max_pct:
            add(out, st.name, "SOC_BOUNDS_INVERTED", f"soc_min {st.soc_min_pct} > soc_max {st.soc_max_pct}")
        elif not st.soc_min_pct <= st.soc_init_pct <= st.soc_max_pct:
            add(out, st.name, "SOC_INIT_OUT_OF_RANGE",
                f"initial SoC {st.soc_init_pct} outside [{st.soc_min_pct}, {st.soc_max_pct}]")
        if not 0 <= st.t_req <= T:
            add(out, st.name, "TARGET_TIME_OUT_OF_HORIZON", f"t_req {st.t_req} outside [0, {T}]")
        if st.soc_req_pct > st.soc_max_pct:
            add(out, st.name, "TARGET_EXCEEDS_MAX",
                f"target SoC {st.soc_req_pct}% exceeds max SoC {st.soc_max_pct}%")
        elif 0 <= st.t_req <= T and st.e_rated_kwh > 0 and len(st.availability) == T:
            best = _max_reachable_soc(st, dt)
            if best < st.soc_req_pct - 1e-9:
                add(out, st.name, "TARGET_UNREACHABLE",
                    f"at most {best:.4f}% reachable by boundary {st.t_req}, target {st.soc_req_pct}%")
        groups.append(out)

    for ld in s.loads:
        out = []
        kind2 = isinstance(ld, Type2LoadSpec)
        if not ld.power_kw > 0:
            add(out, ld.name, "BAD_PARAMETER", "power_kw must be positive")
        if int(ld.duration_steps) != ld.duration_steps or ld.duration_steps < 1:
            add(out, ld.name, "BAD_PARAMETER", "duration_steps must be a positive integer")
        a, b = ld.window
        if not (0 <= a <= b <= T - 1):
            add(out, ld.name, "WINDOW_OUT_OF_HORIZON", f"window {ld.window} outside [0, {T - 1}]")
        elif ld.duration_steps > ld.window_length():
            code = "RUN_DOES_NOT_FIT" if kind2 else "DURATION_EXCEEDS_WINDOW"
            add(out, ld.name, code,
                f"needs {ld.duration_steps} steps, window {ld.window} has {ld.window_length()}")
        groups.append(out)

    return [v for group in groups for v in sorted(group)]


def _max_reachable_soc(st: StorageSpec, delta_t_hours: float) -> float:
    soc = st.soc_init_pct
    step_gain = st.eta_ch * st.p_ch_max_kw * st.soc_gain_per_kw(delta_t_hours)
    for t in range(st.t_req):
        if st.availability[t]:
            soc = min(st.soc_max_pct, soc + step_gain)
    return soc


def structural_violations(violations: list[Violation]) -> list[Violation]:
    return [v for v in violations if v.structural]


# --------------------------------------------------------------------------
# file format

_STORAGE_KEYS = {"name", "eta_ch", "eta_disch", "e_rated_kwh", "soc_min_pct", "soc_max_pct",
                 "soc_init_pct", "soc_req_pct", "t_req", "p_ch_max_kw", "p_disch_max_kw",
                 "availability", "discharge_enabled"}
_LOAD_KEYS = {"name", "power_kw", "duration_steps", "duration_hours", "window", "window_clock"}


def parse_scenario(config: str, base_dir: str | os.PathLike | None = None) -> Scenario:
    """Parse scenario text; relative series paths resolve against ``base_dir``."""
    try:
        doc = tomllib.loads(config)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc), line=getattr(exc, "lineno", None)) from None
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    return _Builder(doc, base).build()


def load_scenario(path: str | os.PathLike) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent)


class _Builder:
    def __init__(self, doc: Mapping[str, Any], base: Path):
        self.doc = doc
        self.base = base

    def build(self) -> Scenario:
        doc = self.doc
        unknown = set(doc) - {"scenario", "time", "prices", "site", "grid", "storage",
                              "type1_load", "type2_load"}
        if unknown:
            raise ParseError(f"unknown table(s) {sorted(unknown)}")
        time_tbl = self._table("time")
        try:
            grid = TimeGrid(
                delta_t_hours=float(self._req(time_tbl, "delta_t_hours", "time")),
                num_steps=self._int(time_tbl.get("num_steps", 48), "time.num_steps"),
                start_label=str(time_tbl.get("start_label", "00:00")),
            )
        except (ValueError, TimeSeriesError) as exc:
            raise ParseError(str(exc), field="time") from None
        self.grid = grid

        prices = self._table("prices")
        site = self._table("site", required=False)
        gtbl = self._table("grid", required=False)
        grid_spec = GridSpec(
            p_import_max=self._series(gtbl.get("import_max_kw", 1000.0), "p_import_max", Unit.KW),
            p_export_max=self._series(gtbl.get("export_max_kw", 1000.0), "p_export_max", Unit.KW),
            export_enabled=self._bool(gtbl.get("export_enabled", True), "grid.export_enabled"),
            exclusive_exchange=self._bool(gtbl.get("exclusive_exchange", False), "grid.exclusive_exchange"),
        )
        storages = tuple(self._storage(i, t) for i, t in enumerate(self._array("storage")))
        type1 = tuple(self._load(Type1LoadSpec, i, t) for i, t in enumerate(self._array("type1_load")))
        type2 = tuple(self._load(Type2LoadSpec, i, t) for i, t in enumerate(self._array("type2_load")))

        names = [d.name for d in storages + type1 + type2]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ParseError(f"duplicate device name(s) {dupes}", field="name")

        return Scenario(
            time=grid,
            grid_spec=grid_spec,
            import_price=self._series(self._req(prices, "import", "prices"), "import_price", Unit.PRICE),
            export_price=self._series(self._req(prices, "export", "prices"), "export_price", Unit.PRICE),
            pv=self._series(site.get("pv", 0.0), "pv", Unit.KW),
            base_load=self._series(site.get("base_load", 0.0), "base_load", Unit.KW),
            storages=storages,
            type1_loads=type1,
            type2_loads=type2,
            name=str(self._table("scenario", required=False).get("name", "scenario")),
        )

    def _table(self, key: str, required: bool = True) -> Mapping[str, Any]:
        tbl = self.doc.get(key)
        if tbl is None:
            if required:
                raise ParseError("missing table", field=key)
            return {}
        if not isinstance(tbl, dict):
            raise ParseError("expected a table", field=key)
        return tbl

    def _array(self, key: str) -> list[Mapping[str, Any]]:
        arr = self.doc.get(key, [])
        if not isinstance(arr, list) or not all(isinstance(x, dict) for x in arr):
            raise ParseError("expected an array of tables", field=key)
        return arr

    @staticmethod
    def _req(tbl: Mapping[str, Any], key: str, where: str) -> Any:
        if key not in tbl:
            raise ParseError("missing required key", field=f"{where}.{key}")
        return tbl[key]

    @staticmethod
    def _num(value: Any, where: str) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ParseError(f"expected a finite number, got {value!r}", field=where)
        return float(value)

    @staticmethod
    def _int(value: Any, where: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"expected an integer, got {value!r}", field=where)
        return value

    @staticmethod
    def _bool(value: Any, where: str) -> bool:
        if not isinstance(value, bool):
            raise ParseError(f"expected true/false, got {value!r}", field=where)
        return value

    def _series(self, ref: Any, name: str, unit: Unit) -> Series:
        try:
            if isinstance(ref, str):
                path = self.base / ref
                if not path.is_file():
                    raise UnknownSeriesRef(f"series file {ref!r} not found", field=name)
                return load_series(path.read_text(encoding="utf-8"), self.grid, name=name, unit=unit)
            if isinstance(ref, list):
                return series_from_values([self._num(v, name) for v in ref], unit, self.grid, name=name)
            return constant_series(self._num(ref, name), unit, self.grid, name=name)
        except TimeSeriesError as exc:
            raise ParseError(str(exc), field=name) from None

    def _clock_or_step(self, value: Any, where: str) -> int:
        if isinstance(value, str):
            try:
                return step_of_clock(value, self.grid)
            except TimeSeriesError as exc:
                raise ParseError(str(exc), field=where) from None
        return self._int(value, where)

    def _storage(self, i: int, tbl: Mapping[str, Any]) -> StorageSpec:
        where = f"storage[{i}]"
        extra = set(tbl) - _STORAGE_KEYS
        if extra:
            raise ParseError(f"unknown key(s) {sorted(extra)}", field=where)
        name = str(self._req(tbl, "name", where))
        num = {k: self._num(self._req(tbl, k, where), f"{where}.{k}")
               for k in ("eta_ch", "eta_disch", "e_rated_kwh", "soc_min_pct", "soc_max_pct",
                         "soc_init_pct", "soc_req_pct", "p_ch_max_kw", "p_disch_max_kw")}
        for k in ("eta_ch", "eta_disch"):
            if not 0 < num[k] <= 1:
                raise ParseError("efficiency must lie in (0, 1]", field=f"{where}.{k}")
        if num["e_rated_kwh"] <= 0:
            raise ParseError("rated capacity must be positive", field=f"{where}.e_rated_kwh")
        for k in ("p_ch_max_kw", "p_disch_max_kw"):
            if num[k] < 0:
                raise ParseError("power limit must be non-negative", field=f"{where}.{k}")
        return StorageSpec(
            name=name,
            t_req=self._clock_or_step(self._req(tbl, "t_req", where), f"{where}.t_req"),
            availability=self._series(tbl.get("availability", 1), f"{name}.availability", Unit.BINARY),
            discharge_enabled=self._bool(tbl.get("discharge_enabled", True), f"{where}.discharge_enabled"),
            **num,
        )

    def _load(self, cls: type, i: int, tbl: Mapping[str, Any]) -> Type1LoadSpec:
        kind = "type1_load" if cls is Type1LoadSpec else "type2_load"
        where = f"{kind}[{i}]"
        if "energy_kwh" in tbl:
            raise ParseError("energy is derived from power and duration; remove 'energy_kwh'",
                             field=f"{where}.energy_kwh")
        extra = set(tbl) - _LOAD_KEYS
        if extra:
            raise ParseError(f"unknown key(s) {sorted(extra)}", field=where)
        power = self._num(self._req(tbl, "power_kw", where), f"{where}.power_kw")
        if power <= 0:
            raise ParseError("power must be positive", field=f"{where}.power_kw")

        if ("duration_steps" in tbl) == ("duration_hours" in tbl):
            raise ParseError("give exactly one of duration_steps / duration_hours", field=where)
        if "duration_steps" in tbl:
            steps = self._int(tbl["duration_steps"], f"{where}.duration_steps")
        else:
            hours = self._num(tbl["duration_hours"], f"{where}.duration_hours")
            ratio = hours / self.grid.delta_t_hours
            if abs(ratio - round(ratio)) > 1e-9:
                raise ParseError(f"{hours} h is not a whole number of steps",
                                 field=f"{where}.duration_hours")
            steps = int(round(ratio))
        if steps < 1:
            raise ParseError("duration must be at least one step", field=where)

        if "window" in tbl and "window_clock" in tbl:
            raise ParseError("give at most one of window / window_clock", field=where)
        if "window" in tbl:
            w = tbl["window"]
            if not (isinstance(w, list) and len(w) == 2):
                raise ParseError("window must be [first_step, last_step]", field=f"{where}.window")
            window = (self._int(w[0], f"{where}.window"), self._int(w[1], f"{where}.window"))
        elif "window_clock" in tbl:
            w = tbl["window_clock"]
            if not (isinstance(w, list) and len(w) == 2 and all(isinstance(x, str) for x in w)):
                raise ParseError('window_clock must be ["HH:MM", "HH:MM"]', field=f"{where}.window_clock")
            first = self._clock_or_step(w[0], f"{where}.window_clock")
            end = self._clock_or_step(w[1], f"{where}.window_clock")
            window = (first, end - 1)
        else:
            window = (0, self.grid.num_steps - 1)
        return cls(name=str(self._req(tbl, "name", where)), power_kw=power,
                   duration_steps=steps, window=window)


def _series_out(series: Series) -> Any:
    vals = list(series.values)
    if vals and all(v == vals[0] for v in vals):
        return vals[0]
    return vals


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    """Fully resolved document form: inline series, step indices instead of clock labels."""
    doc: dict[str, Any] = {
        "scenario": {"name": s.name},
        "time": {"delta_t_hours": s.time.delta_t_hours, "num_steps": s.time.num_steps,
                 "start_label": s.time.start_label},
        "prices": {"import": _series_out(s.import_price), "export": _series_out(s.export_price)},
        "site": {"pv": _series_out(s.pv), "base_load": _series_out(s.base_load)},
        "grid": {"import_max_kw": _series_out(s.grid_spec.p_import_max),
                 "export_max_kw": _series_out(s.grid_spec.p_export_max),
                 "export_enabled": s.grid_spec.export_enabled,
                 "exclusive_exchange": s.grid_spec.exclusive_exchange},
    }
    if s.storages:
        doc["storage"] = [{
            "name": st.name, "eta_ch": st.eta_ch, "eta_disch": st.eta_disch,
            "e_rated_kwh": st.e_rated_kwh, "soc_min_pct": st.soc_min_pct,
            "soc_max_pct": st.soc_max_pct, "soc_init_pct": st.soc_init_pct,
            "soc_req_pct": st.soc_req_pct, "t_req": st.t_req, "p_ch_max_kw": st.p_ch_max_kw,
            "p_disch_max_kw": st.p_disch_max_kw, "availability": _series_out(st.availability),
            "discharge_enabled": st.discharge_enabled,
        } for st in s.storages]
    for key, loads in (("type1_load", s.type1_loads), ("type2_load", s.type2_loads)):
        if loads:
            doc[key] = [{"name": ld.name, "power_kw": ld.power_kw,
                         "duration_steps": ld.duration_steps, "window": list(ld.window)}
                        for ld in loads]
    return doc


def serialize_scenario(s: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(s))
