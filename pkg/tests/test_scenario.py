import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ris_see.scenario import (
    ScenarioConfig,
    ScenarioError,
    bs_sweep_geometry,
    build_scenario,
    circuit_power,
    dbm_to_mw,
    eve_sweep_geometry,
    fairness_geometry,
    mw_to_dbm,
    scenario_to_doc,
    without_ris,
)


def test_defaults_match_simulation_table(cfg):
    assert (cfg.B, cfg.R, cfg.K, cfg.J, cfg.M, cfg.N) == (2, 2, 2, 2, 2, 4)
    assert cfg.MB == 4 and cfg.RN == 8
    assert cfg.p_max_mw == pytest.approx(dbm_to_mw(15))
    assert cfg.noise_user_mw == pytest.approx(1e-8)
    assert cfg.l0 == pytest.approx(1e-3)
    assert cfg.phi_outage == 0.1 and cfg.rate_redundancy == 0.5 and cfg.sigma_bar == 0.01
    assert math.isinf(cfg.k_br)


def test_default_positions():
    cfg = ScenarioConfig(num_bs=3, num_users=4)
    assert [p[1] for p in cfg.bs_pos] == [30.0, 70.0, 110.0]
    assert [p[:2] for p in cfg.user_pos] == [(60.0, 30.0), (60.0, 35.0), (60.0, 40.0), (60.0, 45.0)]
    assert cfg.eve_pos[1][:2] == (55.0, 37.0)
    assert cfg.ris_pos[0][:2] == (65.0, 30.0)


@given(st.floats(-40, 60))
def test_dbm_roundtrip(x):
    assert mw_to_dbm(dbm_to_mw(x)) == pytest.approx(x)


@pytest.mark.parametrize("field,value", [
    ("num_users", 0), ("zeta", 1.5), ("zeta", 0.0), ("phi_outage", 1.0), ("sigma_bar", -0.1),
    ("p_max_mw", 0.0), ("num_ris", -1),
])
def test_range_errors_name_the_field(field, value):
    with pytest.raises(ScenarioError, match=field):
        ScenarioConfig(**{field: value})


def test_position_count_mismatch():
    with pytest.raises(ScenarioError, match="user_pos"):
        ScenarioConfig(user_pos=((1.0, 2.0, 0.0),))


def test_duplicate_positions_warn():
    with pytest.warns(UserWarning):
        ScenarioConfig(user_pos=((1.0, 2.0, 1.5), (1.0, 2.0, 1.5)))


def test_doc_roundtrip(cfg):
    doc = scenario_to_doc(cfg)
    again = build_scenario(json.dumps(doc))
    assert again == cfg


def test_overrides_and_dbm_fields():
    cfg = build_scenario(overrides={"pb_dbm": 20, "num_users": 3, "noise_dbm": -90})
    assert cfg.p_max_mw == pytest.approx(100.0)
    assert cfg.K == 3 and len(cfg.user_pos) == 3
    assert cfg.noise_eve_mw == pytest.approx(1e-9)


def test_schema_rejects_unknown_field():
    with pytest.raises(ScenarioError):
        build_scenario(overrides={"bogus": 1})


def test_two_d_positions_take_default_height():
    cfg = build_scenario(overrides={"user_positions": [[10, 20], [30, 40]]})
    assert cfg.user_pos[0] == (10.0, 20.0, 1.5)


def test_infinite_rician_string():
    cfg = build_scenario(overrides={"rician_factors": {"bu": "inf"}})
    assert math.isinf(cfg.k_bu)


def test_replace_resets_positions_on_count_change(cfg):
    c2 = cfg.replace(num_eves=3)
    assert len(c2.eve_pos) == 3


def test_presets(cfg):
    e = eve_sweep_geometry(cfg.replace(num_eves=3))
    assert [p[:2] for p in e.eve_pos] == [(55.0, 31.0), (55.0, 35.0), (55.0, 39.0)]
    assert [p[:2] for p in e.user_pos] == [(60.0, 30.0), (60.0, 38.0)]
    b = bs_sweep_geometry(cfg.replace(num_bs=4))
    assert [p[1] for p in b.bs_pos] == [20.0, 35.0, 50.0, 65.0]
    f = fairness_geometry(cfg)
    assert f.K == 3 and [p[1] for p in f.user_pos] == [70.0, 90.0, 120.0]


def test_no_ris_removes_ris_power(cfg):
    nr = without_ris(cfg)
    assert nr.RN == 0 and nr.ris_pos == ()
    assert circuit_power(cfg) - circuit_power(nr) == pytest.approx(cfg.RN * cfg.p_ris_mw)
