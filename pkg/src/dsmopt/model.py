"""Scenario -> MILP translation.

Variables are addressed by :class:`VarId` ``(kind, device, t)``. The dense
column index of a model is the position of the VarId in the sorted order
(kind-major, then device ordinal, then step), so the layout is a pure
function of which variables exist.

Units: SoC variables are percent of rated capacity, powers kW, energy kWh,
step length hours.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np

from .scenario import Scenario, Type2LoadSpec


class VarKind(enum.IntEnum):
    P_CH = 0
    P_DISCH = 1
    MU_CH = 2
    MU_DISCH = 3
    SOC = 4
    LAMBDA = 5
    NU_START = 6
    NU_END = 7
    P_IMP = 8
    P_EXP = 9
    MU_IMP = 10
    MU_EXP = 11


BINARY_KINDS = frozenset({VarKind.MU_CH, VarKind.MU_DISCH, VarKind.LAMBDA, VarKind.NU_START,
                          VarKind.NU_END, VarKind.MU_IMP, VarKind.MU_EXP})


class VarId(NamedTuple):
    kind: VarKind
    device: int | None
    t: int

    def sort_key(self) -> tuple[int, int, int]:
        return (int(self.kind), -1 if self.device is None else self.device, self.t)

    @property
    def name(self) -> str:
        if self.device is None:
            return f"{self.kind.name}[{self.t}]"
        return f"{self.kind.name}[{self.device}][{self.t}]"


class Relation(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple[tuple[VarId, float], ...]
    relation: Relation
    rhs: float
    tag: str

    @property
    def family(self) -> str:
        return self.tag.split("[", 1)[0]


@dataclass(frozen=True)
class MilpModel:
    """Minimize ``objective`` subject to ``constraints`` and per-variable bounds."""

    var_ids: tuple[VarId, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    binaries: frozenset[VarId]
    constraints: tuple[LinearConstraint, ...]
    objective: tuple[tuple[VarId, float], ...]
    variant: str = "correct"

    @property
    def num_vars(self) -> int:
        return len(self.var_ids)

    @cached_property
    def index(self) -> dict[VarId, int]:
        return {v: i for i, v in enumerate(self.var_ids)}

    @cached_property
    def binary_mask(self) -> np.ndarray:
        return np.array([v in self.binaries for v in self.var_ids], dtype=bool)

    def arrays(self) -> "ModelArrays":
        """Dense numeric form used by the solvers (cached per model)."""
        return self._arrays

    @cached_property
    def _arrays(self) -> "ModelArrays":
        n, m = self.num_vars, len(self.constraints)
        idx = self.index
        c = np.zeros(n)
        for v, coef in self.objective:
            c[idx[v]] += coef
        A = np.zeros((m, n))
        b = np.zeros(m)
        sense = np.zeros(m, dtype=np.int8)  # -1: <=, 0: =, 1: >=
        code = {Relation.LE: -1, Relation.EQ: 0, Relation.GE: 1}
        for i, con in enumerate(self.constraints):
            for v, coef in con.terms:
                A[i, idx[v]] += coef
            b[i] = con.rhs
            sense[i] = code[con.relation]
        return ModelArrays(c, A, sense, b, np.array(self.lower, dtype=float),
                           np.array(self.upper, dtype=float), self.binary_mask)


@dataclass(frozen=True)
class ModelArrays:
    c: np.ndarray
    A: np.ndarray
    sense: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray


class _Draft:
    """Mutable accumulator used while building; frozen into a MilpModel at the end."""

    def __init__(self) -> None:
        self.bounds: dict[VarId, list[float]] = {}
        self.binaries: set[VarId] = set()
        self.constraints: list[LinearConstraint] = []
        self.objective: dict[VarId, float] = {}

    def var(self, kind: VarKind, device: int | None, t: int, lo: float, hi: float) -> VarId:
        v = VarId(kind, device, t)
        self.bounds[v] = [float(lo), float(hi)]
        if kind in BINARY_KINDS:
            self.binaries.add(v)
        return v

    def fix(self, v: VarId, value: float = 0.0) -> None:
        self.bounds[v] = [float(value), float(value)]

    def add(self, tag: str, terms: Iterable[tuple[VarId, float]], rel: Relation, rhs: float) -> None:
        merged: dict[VarId, float] = {}
        for v, coef in terms:
            merged[v] = merged.get(v, 0.0) + float(coef)
        self.constraints.append(LinearConstraint(tuple(merged.items()), rel, float(rhs), tag))

    def freeze(self, variant: str) -> MilpModel:
        order = sorted(self.bounds, key=VarId.sort_key)
        return MilpModel(
            var_ids=tuple(order),
            lower=tuple(self.bounds[v][0] for v in order),
            upper=tuple(self.bounds[v][1] for v in order),
            binaries=frozenset(self.binaries),
            constraints=tuple(self.constraints),
            objective=tuple((v, self.objective[v]) for v in order if v in self.objective),
            variant=variant,
        )


def _add_storage(d: _Draft, s: Scenario) -> list[list[tuple[VarId, float]]]:
    """Storage variables and the SoC/charge/discharge families. Returns per-step net supply terms."""
    T = s.num_steps
    dt = s.time.delta_t_hours
    charge_terms: list[list[tuple[VarId, float]]] = [[] for _ in range(T)]
    for j, st in enumerate(s.storages):
        gain = st.soc_gain_per_kw(dt)
        soc = [d.var(VarKind.SOC, j, t, st.soc_min_pct, st.soc_max_pct) for t in range(T + 1)]
        d.fix(soc[0], st.soc_init_pct)
        for t in range(T):
            avail = st.availability[t] > 0
            p_ch = d.var(VarKind.P_CH, j, t, 0.0, st.p_ch_max_kw)
            p_dis = d.var(VarKind.P_DISCH, j, t, 0.0, st.p_disch_max_kw)
            mu_ch = d.var(VarKind.MU_CH, j, t, 0.0, 1.0)
            mu_dis = d.var(VarKind.MU_DISCH, j, t, 0.0, 1.0)
            if not avail:
                d.fix(p_ch)
                d.fix(mu_ch)
                d.fix(p_dis)
                d.fix(mu_dis)
            if not st.discharge_enabled:
                d.fix(p_dis)
                d.fix(mu_dis)
            d.add(f"soc_recursion[{st.name}][{t}]",
                  [(soc[t + 1], 1.0), (soc[t], -1.0), (p_ch, -st.eta_ch * gain), (p_dis, gain / st.eta_disch)],
                  Relation.EQ, 0.0)
            d.add(f"charge_bound[{st.name}][{t}]", [(p_ch, 1.0), (mu_ch, -st.p_ch_max_kw)], Relation.LE, 0.0)
            d.add(f"discharge_bound[{st.name}][{t}]", [(p_dis, 1.0), (mu_dis, -st.p_disch_max_kw)],
                  Relation.LE, 0.0)
            d.add(f"mutual_exclusion[{st.name}][{t}]", [(mu_ch, 1.0), (mu_dis, 1.0)], Relation.LE, 1.0)
            charge_terms[t] += [(p_dis, 1.0), (p_ch, -1.0)]
        d.add(f"soc_target[{st.name}][{st.t_req}]", [(soc[st.t_req], 1.0)], Relation.GE, st.soc_req_pct)
    return charge_terms


def _add_loads(d: _Draft, s: Scenario) -> list[list[tuple[VarId, float]]]:
    """Load-control families. Returns per-step demand terms (coefficient = +power)."""
    T = s.num_steps
    dt = s.time.delta_t_hours
    demand: list[list[tuple[VarId, float]]] = [[] for _ in range(T)]
    for k, ld in enumerate(s.loads):
        lo_w, hi_w = ld.window
        H = ld.duration_steps
        lam = []
        for t in range(T):
            v = d.var(VarKind.LAMBDA, k, t, 0.0, 1.0)
            if not lo_w <= t <= hi_w:
                d.fix(v)
            lam.append(v)
            demand[t].append((v, ld.power_kw))
        d.add(f"load_energy[{ld.name}]", [(v, ld.power_kw * dt) for v in lam], Relation.EQ,
              ld.energy_kwh(dt))
        d.add(f"load_duration[{ld.name}]", [(v, 1.0) for v in lam], Relation.EQ, H)
        if not isinstance(ld, Type2LoadSpec):
            continue

        start = [d.var(VarKind.NU_START, k, t, 0.0, 1.0) for t in range(T)]
        end = [d.var(VarKind.NU_END, k, t, 0.0, 1.0) for t in range(T)]
        for t in range(T):
            if not (lo_w <= t and t + H - 1 <= hi_w):
                d.fix(start[t])
            if t < H - 1 or not (lo_w + H - 1 <= t <= hi_w):
                d.fix(end[t])
        for t in range(0, T - H + 1):
            d.add(f"type2_run[{ld.name}][{t}]",
                  [(lam[t + i], 1.0) for i in range(H)] + [(start[t], -float(H))], Relation.GE, 0.0)
            d.add(f"type2_link[{ld.name}][{t}]", [(end[t + H - 1], 1.0), (start[t], -1.0)], Relation.EQ, 0.0)
        d.add(f"type2_start_once[{ld.name}]", [(start[t], 1.0) for t in range(0, T - H + 1)],
              Relation.EQ, 1.0)
        for t in range(T):
            d.add(f"type2_consistency[{ld.name}][{t}]",
                  [(lam[t], 1.0)] + [(start[j], -1.0) for j in range(max(0, t - H + 1), t + 1)],
                  Relation.LE, 0.0)
    return demand


def build_model(s: Scenario) -> MilpModel:
    """Full formulation: cost objective, storage, load control, balance and grid limits."""
    d = _Draft()
    T = s.num_steps
    dt = s.time.delta_t_hours
    g = s.grid_spec
    storage_terms = _add_storage(d, s)
    demand = _add_loads(d, s)
    for t in range(T):
        p_imp = d.var(VarKind.P_IMP, None, t, 0.0, g.p_import_max[t])
        p_exp = d.var(VarKind.P_EXP, None, t, 0.0, g.p_export_max[t] if g.export_enabled else 0.0)
        d.objective[p_imp] = s.import_price[t] * dt
        d.objective[p_exp] = -s.export_price[t] * dt
        d.add(f"power_balance[{t}]",
              storage_terms[t] + [(p_imp, 1.0), (p_exp, -1.0)] + [(v, -p) for v, p in demand[t]],
              Relation.EQ, s.base_load[t] - s.pv[t])
        if g.exclusive_exchange:
            mu_imp = d.var(VarKind.MU_IMP, None, t, 0.0, 1.0)
            mu_exp = d.var(VarKind.MU_EXP, None, t, 0.0, 1.0)
            d.add(f"grid_import_exclusive[{t}]", [(p_imp, 1.0), (mu_imp, -g.p_import_max[t])], Relation.LE, 0.0)
            d.add(f"grid_export_exclusive[{t}]", [(p_exp, 1.0), (mu_exp, -g.p_export_max[t])],
                  Relation.LE, 0.0)
            d.add(f"grid_exclusive[{t}]", [(mu_imp, 1.0), (mu_exp, 1.0)], Relation.LE, 1.0)
    return d.freeze("correct")


def always_on_demand(s: Scenario) -> list[float]:
    """Dispatchable demand per step if every load ran at rated power across its whole window."""
    out = [0.0] * s.num_steps
    for ld in s.loads:
        for t in range(ld.window[0], ld.window[1] + 1):
            out[t] += ld.power_kw
    return out


def build_misformulated_model(s: Scenario) -> MilpModel:
    """Baseline with no export variable and no load controls.

    The objective only prices imports, and every dispatchable load is added
    to the balance at rated power over its entire window.
    """
    d = _Draft()
    T = s.num_steps
    dt = s.time.delta_t_hours
    storage_terms = _add_storage(d, s)
    fixed_loads = always_on_demand(s)
    for t in range(T):
        p_imp = d.var(VarKind.P_IMP, None, t, 0.0, s.grid_spec.p_import_max[t])
        d.objective[p_imp] = s.import_price[t] * dt
        d.add(f"power_balance[{t}]", storage_terms[t] + [(p_imp, 1.0)], Relation.EQ,
              s.base_load[t] + fixed_loads[t] - s.pv[t])
    return d.freeze("misformulated")


@dataclass(frozen=True)
class ModelStats:
    num_vars: int = 0
    num_binaries: int = 0
    num_constraints: int = 0
    vars_by_kind: dict[str, int] = field(default_factory=dict)
    binaries_by_kind: dict[str, int] = field(default_factory=dict)
    constraints_by_family: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"num_vars": self.num_vars, "num_binaries": self.num_binaries,
                "num_constraints": self.num_constraints, "vars_by_kind": dict(self.vars_by_kind),
                "binaries_by_kind": dict(self.binaries_by_kind),
                "constraints_by_family": dict(self.constraints_by_family)}


def model_stats(m: MilpModel) -> ModelStats:
    kinds = Counter(v.kind.name for v in m.var_ids)
    bins = Counter(v.kind.name for v in m.var_ids if v in m.binaries)
    fams = Counter(c.family for c in m.constraints)
    return ModelStats(
        num_vars=m.num_vars,
        num_binaries=len(m.binaries),
        num_constraints=len(m.constraints),
        vars_by_kind=dict(sorted(kinds.items())),
        binaries_by_kind=dict(sorted(bins.items())),
        constraints_by_family=dict(sorted(fams.items())),
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_model(m: MilpModel) -> str:
    """LP-style text listing: objective, constraints sorted by tag, bounds, binaries."""
    def expr(terms):
        if not terms:
            return "0"
        return " ".join(f"{'+' if c >= 0 else '-'} {_fmt(abs(c))}·{v.name}" for v, c in terms)

    lines = [f"minimize: {expr(m.objective)}"]
    for con in sorted(m.constraints, key=lambda c: c.tag):
        lines.append(f"{con.tag}: {expr(con.terms)} {con.relation.value} {_fmt(con.rhs)}")
    for v, lo, hi in zip(m.var_ids, m.lower, m.upper):
        kind = "binary" if v in m.binaries else "continuous"
        lines.append(f"bound {v.name}: {_fmt(lo)} <= {kind} <= {_fmt(hi)}")
    return "\n".join(lines) + "\n"
