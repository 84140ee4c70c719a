import dataclasses
from pathlib import Path

import numpy as np
import pytest

from factories import DATA, grid, random_scenario, scenario, storage
from dsmopt.model import (
    BINARY_KINDS, VarId, VarKind, always_on_demand, build_misformulated_model, build_model, dump_model,
    model_stats,
)
from dsmopt.scenario import GridSpec, Scenario, StorageSpec, Type1LoadSpec, Type2LoadSpec, load_scenario

GOLDEN = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def default():
    return load_scenario(DATA / "default.scenario")


def residual(con, x):
    lhs = sum(c * x[v] for v, c in con.terms)
    return lhs - con.rhs


def test_default_binary_layout(default):
    m = build_model(default)
    stats = model_stats(m)
    assert stats.num_binaries == 2 * 2 * 48 + 48 + 3 * 48
    assert stats.binaries_by_kind == {"LAMBDA": 96, "MU_CH": 96, "MU_DISCH": 96, "NU_END": 48, "NU_START": 48}
    assert stats.vars_by_kind["SOC"] == 2 * 49
    assert stats.vars_by_kind["P_IMP"] == stats.vars_by_kind["P_EXP"] == 48


def test_every_binary_is_unit_boxed(default):
    m = build_model(default)
    arr = m.arrays()
    assert set(m.binaries) == {v for v in m.var_ids if v.kind in BINARY_KINDS}
    assert np.all(arr.lower[arr.integer] >= 0) and np.all(arr.upper[arr.integer] <= 1)


def test_model_invariants(default):
    for m in (build_model(default), build_misformulated_model(default)):
        ids = set(m.var_ids)
        tags = [c.tag for c in m.constraints]
        assert len(tags) == len(set(tags))
        for con in m.constraints:
            vs = [v for v, _ in con.terms]
            assert len(vs) == len(set(vs)) and set(vs) <= ids
            assert all(np.isfinite(c) for _, c in con.terms)
        assert {v for v, _ in m.objective} <= ids


def test_flattening_is_kind_then_device_then_step(default):
    m = build_model(default)
    keys = [v.sort_key() for v in m.var_ids]
    assert keys == sorted(keys)
    assert all(m.index[v] == i for i, v in enumerate(m.var_ids))


def test_constraint_families(default):
    fams = set(model_stats(build_model(default)).constraints_by_family)
    assert fams == {"soc_recursion", "charge_bound", "discharge_bound", "mutual_exclusion", "soc_target",
                    "load_energy", "load_duration", "type2_run", "type2_link", "type2_start_once",
                    "type2_consistency", "power_balance"}


def test_no_devices_only_power_balance():
    tg = grid(3)
    m = build_model(scenario(tg, import_max=5.0, export_max=2.0))
    assert {c.family for c in m.constraints} == {"power_balance"}
    idx = m.index
    assert m.upper[idx[VarId(VarKind.P_IMP, None, 1)]] == 5.0
    assert m.upper[idx[VarId(VarKind.P_EXP, None, 1)]] == 2.0


def test_export_disabled_fixes_export():
    tg = grid(4)
    m = build_model(scenario(tg, export_enabled=False))
    for t in range(4):
        i = m.index[VarId(VarKind.P_EXP, None, t)]
        assert (m.lower[i], m.upper[i]) == (0.0, 0.0)


def test_exclusive_exchange_adds_binaries(default):
    base = model_stats(build_model(default)).num_binaries
    ex = dataclasses.replace(default, grid_spec=dataclasses.replace(default.grid_spec, exclusive_exchange=True))
    assert model_stats(build_model(ex)).num_binaries == base + 2 * 48


def test_empty_model_stats():
    tg = grid(1)
    m = build_misformulated_model(scenario(tg))
    stats = model_stats(dataclasses.replace(m, var_ids=(), lower=np.zeros(0), upper=np.zeros(0),
                                            binaries=frozenset(), constraints=(), objective=()))
    assert (stats.num_vars, stats.num_binaries, stats.num_constraints) == (0, 0, 0)
    assert stats.vars_by_kind == {} and stats.constraints_by_family == {}


def test_misformulated_has_no_export_or_load_control(default):
    m = build_misformulated_model(default)
    kinds = {v.kind for v in m.var_ids}
    assert not kinds & {VarKind.P_EXP, VarKind.LAMBDA, VarKind.NU_START, VarKind.NU_END}
    assert all(v.kind is VarKind.P_IMP for v, _ in m.objective)


def test_misformulated_matches_correct_without_loads():
    tg = grid(3)
    s = scenario(tg, pv=[0.0, 1.0, 2.0], base_load=[1.0, 1.0, 0.5], storages=[storage(tg)])
    good = {c.tag: c for c in build_model(s).constraints}
    bad = {c.tag: c for c in build_misformulated_model(s).constraints}
    assert set(good) == set(bad)
    for tag, con in good.items():
        expected = [(v, c) for v, c in con.terms if v.kind is not VarKind.P_EXP]
        assert list(bad[tag].terms) == expected
        assert bad[tag].rhs == con.rhs


def test_always_on_cleaner_demand():
    tg = grid(48)
    s = scenario(tg, type1=[Type1LoadSpec("cleaner", 0.6, 8, (0, 47))])
    assert always_on_demand(s) == [0.6] * 48
    m = build_misformulated_model(s)
    rhs = [c.rhs for c in m.constraints if c.family == "power_balance"]
    assert rhs == pytest.approx([0.6] * 48, abs=0)


def test_soc_recursion_residual_is_zero_on_trajectories():
    rng = np.random.default_rng(3)
    tg = grid(6)
    st = storage(tg, e_rated=12.0, soc_min=0.0, soc_max=100.0, soc_init=50.0)
    m = build_model(scenario(tg, storages=[st]))
    gain = st.soc_gain_per_kw(tg.delta_t_hours)
    for _ in range(20):
        ch = rng.uniform(0, 4, 6) * (rng.random(6) < 0.5)
        dis = rng.uniform(0, 4, 6) * (ch == 0)
        x = {}
        soc = st.soc_init_pct
        x[VarId(VarKind.SOC, 0, 0)] = soc
        for t in range(6):
            soc = soc - (dis[t] / st.eta_disch - st.eta_ch * ch[t]) * gain
            x[VarId(VarKind.P_CH, 0, t)] = ch[t]
            x[VarId(VarKind.P_DISCH, 0, t)] = dis[t]
            x[VarId(VarKind.SOC, 0, t + 1)] = soc
        for con in m.constraints:
            if con.family == "soc_recursion":
                assert abs(residual(con, x)) <= 1e-12


def test_duration_implies_energy():
    rng = np.random.default_rng(4)
    for _ in range(30):
        s = random_scenario(rng, 30)
        m = build_model(s)
        for k, ld in enumerate(s.loads):
            energy = next(c for c in m.constraints if c.tag == f"load_energy[{ld.name}]")
            on = rng.choice(s.num_steps, size=min(ld.duration_steps, s.num_steps), replace=False)
            x = {VarId(VarKind.LAMBDA, k, t): float(t in on) for t in range(s.num_steps)}
            assert abs(residual(energy, x)) <= 1e-12


def test_type2_window_masking():
    tg = grid(10)
    s = scenario(tg, type2=[Type2LoadSpec("dw", 1.0, 3, (2, 6))])
    m = build_model(s)
    fixed = {v for v, lo, hi in zip(m.var_ids, m.lower, m.upper) if lo == hi}
    lam_free = [t for t in range(10) if VarId(VarKind.LAMBDA, 0, t) not in fixed]
    start_free = [t for t in range(10) if VarId(VarKind.NU_START, 0, t) not in fixed]
    end_free = [t for t in range(10) if VarId(VarKind.NU_END, 0, t) not in fixed]
    assert lam_free == [2, 3, 4, 5, 6]
    assert start_free == [2, 3, 4]
    assert end_free == [4, 5, 6]


def test_unavailable_and_no_discharge_fix_variables():
    tg = grid(4)
    st = storage(tg, availability=[1, 0, 1, 1], discharge=False)
    m = build_model(scenario(tg, storages=[st]))
    fixed = {v for v, lo, hi in zip(m.var_ids, m.lower, m.upper) if lo == hi == 0.0}
    assert VarId(VarKind.P_CH, 0, 1) in fixed and VarId(VarKind.MU_CH, 0, 1) in fixed
    assert VarId(VarKind.P_CH, 0, 0) not in fixed
    assert all(VarId(VarKind.MU_DISCH, 0, t) in fixed for t in range(4))


def test_dump_matches_golden_file():
    tg = grid(2)
    s = scenario(tg, storages=[storage(tg)], type2=[Type2LoadSpec("d", 1.0, 1, (0, 1))])
    assert dump_model(build_model(s)) == (GOLDEN / "toy_model.dump").read_text()


def test_dump_is_sorted_by_tag(default):
    lines = [ln for ln in dump_model(build_model(default)).splitlines()[1:] if not ln.startswith("bound ")]
    tags = [ln.split(": ", 1)[0] for ln in lines]
    assert tags == sorted(tags)


# Decision-variable and parameter inventory of the formulation.
DECISION_SYMBOLS = {
    "lambda_k": VarKind.LAMBDA,
    "mu_ch_sto": VarKind.MU_CH,
    "mu_disch_sto": VarKind.MU_DISCH,
    "nu_s_k": VarKind.NU_START,
    "nu_e_k": VarKind.NU_END,
    "P_ch_sto": VarKind.P_CH,
    "P_disch_sto": VarKind.P_DISCH,
    "P_imp_grid": VarKind.P_IMP,
    "P_exp_grid": VarKind.P_EXP,
    "E_sto": VarKind.SOC,
}

PARAMETER_SYMBOLS = {
    "C_imp_grid": (Scenario, "import_price"),
    "R_exp_grid": (Scenario, "export_price"),
    "P_PV": (Scenario, "pv"),
    "P_load": (Scenario, "base_load"),
    "P_imax_grid": (GridSpec, "p_import_max"),
    "P_emax_grid": (GridSpec, "p_export_max"),
    "mu_sto": (StorageSpec, "availability"),
    "eta_ch_sto": (StorageSpec, "eta_ch"),
    "eta_disch_sto": (StorageSpec, "eta_disch"),
    "E_rated_sto": (StorageSpec, "e_rated_kwh"),
    "E_min_sto": (StorageSpec, "soc_min_pct"),
    "E_max_sto": (StorageSpec, "soc_max_pct"),
    "E_req_sto": (StorageSpec, "soc_req_pct"),
    "t_req_sto": (StorageSpec, "t_req"),
    "P_ch_max_sto": (StorageSpec, "p_ch_max_kw"),
    "P_disch_max_sto": (StorageSpec, "p_disch_max_kw"),
    "P_k": (Type1LoadSpec, "power_kw"),
    "H_k": (Type1LoadSpec, "duration_steps"),
}


def test_symbol_inventory():
    kinds = list(DECISION_SYMBOLS.values())
    assert len(kinds) == len(set(kinds))
    assert set(VarKind) - set(kinds) == {VarKind.MU_IMP, VarKind.MU_EXP}
    targets = list(PARAMETER_SYMBOLS.values())
    assert len(targets) == len(set(targets))
    for cls, name in targets:
        assert name in {f.name for f in dataclasses.fields(cls)}
