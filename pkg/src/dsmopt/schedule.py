"""Domain-level schedules: extraction from a solve, independent checks, cost and comparison.

:func:`verify_schedule` works only from the scenario's raw parameters and
series. It never looks at the MILP rows, so it is a separate check on the
model builder as well as on the solver.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

from .model import MilpModel, VarId, VarKind, always_on_demand
from .scenario import Scenario, Type2LoadSpec
from .solver import MilpSolution, Status
from .timeseries import TimeGrid


class StatusNotOptimal(ValueError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StorageTrace:
    charge_kw: tuple[float, ...]
    discharge_kw: tuple[float, ...]
    soc_pct: tuple[float, ...]  # T + 1 boundary values


@dataclass(frozen=True)
class Schedule:
    time: TimeGrid
    storages: dict[str, StorageTrace]
    on_off: dict[str, tuple[int, ...]]
    import_kw: tuple[float, ...]
    export_kw: tuple[float, ...]
    demand_kw: tuple[float, ...]
    scenario_hash: str = ""
    variant: str = "correct"

    def __post_init__(self):
        T = self.time.num_steps
        for name, tr in self.storages.items():
            if len(tr.charge_kw) != T or len(tr.discharge_kw) != T or len(tr.soc_pct) != T + 1:
                raise ValueError(f"storage {name!r}: trace lengths do not match T={T}")
        for name, row in self.on_off.items():
            if len(row) != T or any(v not in (0, 1) for v in row):
                raise ValueError(f"load {name!r}: on/off must be {T} entries of 0 or 1")
        for label in ("import_kw", "export_kw", "demand_kw"):
            if len(getattr(self, label)) != T:
                raise ValueError(f"{label} must have {T} entries")


def extract_schedule(m: MilpModel, sol: MilpSolution, s: Scenario) -> Schedule:
    """Map an Optimal solution back onto devices; load binaries are rounded to 0/1."""
    if sol.status is not Status.OPTIMAL:
        raise StatusNotOptimal(f"solution status is {sol.status.value}")
    T = s.num_steps
    vals = sol.values

    def get(kind: VarKind, device: int | None, t: int) -> float:
        return vals.get(VarId(kind, device, t), 0.0)

    storages = {}
    for j, st in enumerate(s.storages):
        storages[st.name] = StorageTrace(
            charge_kw=tuple(get(VarKind.P_CH, j, t) for t in range(T)),
            discharge_kw=tuple(get(VarKind.P_DISCH, j, t) for t in range(T)),
            soc_pct=tuple(get(VarKind.SOC, j, t) for t in range(T + 1)),
        )

    on_off: dict[str, tuple[int, ...]] = {}
    controlled = m.variant != "misformulated"
    for k, ld in enumerate(s.loads):
        if controlled:
            on_off[ld.name] = tuple(int(round(get(VarKind.LAMBDA, k, t))) for t in range(T))
        else:
            on_off[ld.name] = tuple(int(ld.window[0] <= t <= ld.window[1]) for t in range(T))

    demand = [s.base_load[t] + sum(ld.power_kw * on_off[ld.name][t] for ld in s.loads) for t in range(T)]
    return Schedule(
        time=s.time,
        storages=storages,
        on_off=on_off,
        import_kw=tuple(get(VarKind.P_IMP, None, t) for t in range(T)),
        export_kw=tuple(get(VarKind.P_EXP, None, t) for t in range(T)),
        demand_kw=tuple(demand),
        scenario_hash=s.digest(),
        variant=m.variant,
    )


# --------------------------------------------------------------------------
# verification

@dataclass(frozen=True)
class FamilyCheck:
    max_residual: float
    violations: int
    checked: int


@dataclass(frozen=True)
class VerificationReport:
    tol: float
    families: dict[str, FamilyCheck]

    @property
    def passed(self) -> bool:
        return all(f.violations == 0 for f in self.families.values())

    def failing(self) -> list[str]:
        return [name for name, f in self.families.items() if f.violations]

    def as_dict(self) -> dict:
        return {
            "pass": self.passed,
            "tol": self.tol,
            "families": {name: {"max_residual": f.max_residual, "violations": f.violations,
                                "checked": f.checked}
                         for name, f in self.families.items()},
        }


class _Collector:
    def __init__(self, tol: float):
        self.tol = tol
        self.data: dict[str, list[float]] = {}

    def add(self, family: str, residual: float) -> None:
        self.data.setdefault(family, []).append(abs(residual))

    def report(self) -> VerificationReport:
        fams = {}
        for name, res in self.data.items():
            fams[name] = FamilyCheck(max(res), sum(r > self.tol for r in res), len(res))
        return VerificationReport(self.tol, fams)


def _runs(row: Sequence[int]) -> list[tuple[int, int]]:
    """Maximal runs of ones as (start, length)."""
    out = []
    start = None
    for t, v in enumerate(list(row) + [0]):
        if v and start is None:
            start = t
        elif not v and start is not None:
            out.append((start, t - start))
            start = None
    return out


def verify_schedule(sch: Schedule, s: Scenario, tol: float = 1e-6) -> VerificationReport:
    """Re-check every constraint family from the scenario's raw data."""
    if sch.time != s.time:
        raise GridMismatch("schedule and scenario use different time grids")
    T = s.num_steps
    dt = s.time.delta_t_hours
    g = s.grid_spec
    c = _Collector(tol)

    for st in s.storages:
        tr = sch.storages[st.name]
        gain = st.soc_gain_per_kw(dt)
        soc = st.soc_init_pct
        c.add("soc_initial", tr.soc_pct[0] - st.soc_init_pct)
        for t in range(T):
            ch, dis = tr.charge_kw[t], tr.discharge_kw[t]
            avail = st.availability[t]
            soc = soc - (dis / st.eta_disch - st.eta_ch * ch) * gain
            c.add("soc_recursion", soc - tr.soc_pct[t + 1])
            c.add("charge_bound", max(0.0, -ch, ch - st.p_ch_max_kw * avail))
            dis_cap = st.p_disch_max_kw * avail if st.discharge_enabled else 0.0
            c.add("discharge_bound", max(0.0, -dis, dis - dis_cap))
            c.add("mutual_exclusion", max(0.0, min(ch, dis)))
        for t in range(T + 1):
            c.add("soc_bounds", max(0.0, st.soc_min_pct - tr.soc_pct[t], tr.soc_pct[t] - st.soc_max_pct))
        c.add("soc_target", max(0.0, st.soc_req_pct - tr.soc_pct[st.t_req]))

    for ld in s.loads:
        row = sch.on_off[ld.name]
        c.add("load_energy", sum(ld.power_kw * v * dt for v in row) - ld.energy_kwh(dt))
        c.add("load_duration", sum(row) - ld.duration_steps)
        c.add("load_window", sum(v for t, v in enumerate(row) if not ld.window[0] <= t <= ld.window[1]))
        if isinstance(ld, Type2LoadSpec):
            runs = _runs(row)
            ok = len(runs) == 1 and runs[0][1] == ld.duration_steps
            c.add("type2_contiguity", 0.0 if ok else 1.0 + abs(len(runs) - 1))

    for t in range(T):
        supply = s.pv[t] + sch.import_kw[t] - sch.export_kw[t]
        supply += sum(sch.storages[st.name].discharge_kw[t] - sch.storages[st.name].charge_kw[t]
                      for st in s.storages)
        demand = s.base_load[t] + sum(ld.power_kw * sch.on_off[ld.name][t] for ld in s.loads)
        c.add("power_balance", supply - demand)
        imp, exp = sch.import_kw[t], sch.export_kw[t]
        c.add("grid_import", max(0.0, -imp, imp - g.p_import_max[t]))
        exp_cap = g.p_export_max[t] if g.export_enabled else 0.0
        c.add("grid_export", max(0.0, -exp, exp - exp_cap))
        if g.exclusive_exchange:
            c.add("grid_exclusive", max(0.0, min(imp, exp)))
    return c.report()


# --------------------------------------------------------------------------
# cost and comparison

@dataclass(frozen=True)
class CostReport:
    import_cost: tuple[float, ...]
    export_revenue: tuple[float, ...]
    import_total: float
    export_total: float
    total_cost: float

    def as_dict(self) -> dict:
        return {"total_cost": self.total_cost, "import_total": self.import_total,
                "export_total": self.export_total, "import_cost": list(self.import_cost),
                "export_revenue": list(self.export_revenue)}


def cost_of(sch: Schedule, prices: tuple[Sequence[float], Sequence[float]]) -> CostReport:
    """Operating cost: sum over steps of (import * buy price - export * sell price) * dt."""
    import_price, export_price = prices
    T = sch.time.num_steps
    if len(import_price) != T or len(export_price) != T:
        raise GridMismatch("price series length differs from the schedule horizon")
    dt = sch.time.delta_t_hours
    imp = tuple(sch.import_kw[t] * import_price[t] * dt for t in range(T))
    exp = tuple(sch.export_kw[t] * export_price[t] * dt for t in range(T))
    total = math.fsum(i - e for i, e in zip(imp, exp))
    return CostReport(imp, exp, math.fsum(imp), math.fsum(exp), total)


def scenario_prices(s: Scenario) -> tuple[Sequence[float], Sequence[float]]:
    return s.import_price.values, s.export_price.values


def load_energy_kwh(sch: Schedule, s: Scenario, load_name: str) -> float:
    ld = next(ld for ld in s.loads if ld.name == load_name)
    return math.fsum(ld.power_kw * v * s.time.delta_t_hours for v in sch.on_off[load_name])


def percent_reduction(cost_a: float, cost_b: float) -> float | None:
    """Relative saving of ``b`` against ``a``, in percent; None when ``a`` is zero."""
    if cost_a == 0:
        return None
    return 100.0 * (cost_a - cost_b) / cost_a


@dataclass(frozen=True)
class ComparisonReport:
    cost_a: float
    cost_b: float
    cost_delta: float
    percent_reduction: float | None
    import_delta: tuple[float, ...] = field(repr=False)
    export_delta: tuple[float, ...] = field(repr=False)
    net_grid_delta: tuple[float, ...] = field(repr=False)
    demand_delta: tuple[float, ...] = field(repr=False)

    def as_dict(self) -> dict:
        return {"cost_a": self.cost_a, "cost_b": self.cost_b, "cost_delta": self.cost_delta,
                "percent_reduction": self.percent_reduction}


def compare(a: tuple[Schedule, CostReport], b: tuple[Schedule, CostReport]) -> ComparisonReport:
    """Deltas are ``a - b`` per step; ``percent_reduction`` is ``(cost_a - cost_b) / cost_a``."""
    (sa, ca), (sb, cb) = a, b
    if sa.time != sb.time:
        raise GridMismatch("schedules use different time grids")
    T = sa.time.num_steps
    imp = tuple(sa.import_kw[t] - sb.import_kw[t] for t in range(T))
    exp = tuple(sa.export_kw[t] - sb.export_kw[t] for t in range(T))
    return ComparisonReport(
        cost_a=ca.total_cost,
        cost_b=cb.total_cost,
        cost_delta=ca.total_cost - cb.total_cost,
        percent_reduction=percent_reduction(ca.total_cost, cb.total_cost),
        import_delta=imp,
        export_delta=exp,
        net_grid_delta=tuple(i - e for i, e in zip(imp, exp)),
        demand_delta=tuple(sa.demand_kw[t] - sb.demand_kw[t] for t in range(T)),
    )


# --------------------------------------------------------------------------
# output

def _num(value: float, places: int) -> str:
    text = f"{value:.{places}f}"
    if float(text) == 0.0:
        text = f"{0.0:.{places}f}"
    return text


def schedule_csv(sch: Schedule) -> str:
    """Plot-ready CSV: one row per boundary 0..T; powers are blank on the final row."""
    T = sch.time.num_steps
    names = list(sch.storages)
    loads = list(sch.on_off)
    header = (["step"] + [f"soc_{n}" for n in names] + [f"p_ch_{n}" for n in names]
              + [f"p_disch_{n}" for n in names] + [f"lambda_{n}" for n in loads] + ["p_imp", "p_exp"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for t in range(T + 1):
        row = [str(t)] + [_num(sch.storages[n].soc_pct[t], 2) for n in names]
        if t < T:
            row += [_num(sch.storages[n].charge_kw[t], 3) for n in names]
            row += [_num(sch.storages[n].discharge_kw[t], 3) for n in names]
            row += [str(sch.on_off[n][t]) for n in loads]
            row += [_num(sch.import_kw[t], 3), _num(sch.export_kw[t], 3)]
        else:
            row += [""] * (2 * len(names) + len(loads) + 2)
        w.writerow(row)
    return buf.getvalue()


def comparison_csv(rep: ComparisonReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "import_delta", "export_delta", "net_grid_delta", "demand_delta"])
    for t in range(len(rep.import_delta)):
        w.writerow([t, _num(rep.import_delta[t], 3), _num(rep.export_delta[t], 3),
                    _num(rep.net_grid_delta[t], 3), _num(rep.demand_delta[t], 3)])
    return buf.getvalue()


def misformulated_demand(s: Scenario) -> list[float]:
    """Per-step demand assumed by the baseline model (loads always on in their windows)."""
    fixed = always_on_demand(s)
    return [s.base_load[t] + fixed[t] for t in range(s.num_steps)]
