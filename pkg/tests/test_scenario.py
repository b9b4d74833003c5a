import math

import pytest
from hypothesis import given, strategies as st

from laenet.scenario import (ConfigError, PhysConfig, RngStream, Scenario, UserTask, db_to_linear,
                             dbm_to_watts, default_scenario, dump_scenario, linear_to_db, load_scenario,
                             resolve_seed, scenario_hash, watts_to_dbm)


def test_default_constants():
    sc = default_scenario()
    assert sc.n_users == 4
    assert sc.chan.noise_w == pytest.approx(1e-13, rel=1e-12)
    assert sc.chan.beta0_lin == pytest.approx(1e-5, rel=1e-12)
    assert sc.users[0].p_max_w == 0.1
    assert sc.uav_start == (-500.0, -500.0, 150.0)
    p = sc.phys
    assert (p.slot_len_s, p.horizon_slots, p.h_min_m, p.h_max_m) == (1.0, 50, 50.0, 300.0)
    assert (p.v_xy_max_mps, p.v_z_max_mps, p.area_half_m) == (100.0, 20.0, 500.0)
    assert (sc.chan.a_los, sc.chan.b_los, sc.chan.gamma_los, sc.chan.gamma_nlos) == (4.88, 0.43, 2.0, 2.0)
    assert all(u.bandwidth_hz == 1e6 for u in sc.users)
    assert sc.t_down_s == 0.1


def test_unit_conversions():
    assert db_to_linear(0.0) == 1.0
    assert db_to_linear(-50.0) == pytest.approx(1e-5, rel=1e-12)
    assert dbm_to_watts(-100.0) == pytest.approx(1e-13, rel=1e-12)


@given(st.floats(1e-12, 1e12))
def test_db_roundtrip(x):
    assert db_to_linear(linear_to_db(x)) == pytest.approx(x, rel=1e-12)
    assert dbm_to_watts(watts_to_dbm(x)) == pytest.approx(x, rel=1e-12)


def test_config_roundtrip_byte_identical():
    sc = default_scenario()
    text = dump_scenario(sc)
    back = load_scenario(text)
    assert back == sc
    assert dump_scenario(back) == text
    assert scenario_hash(back) == scenario_hash(sc)


def _doc_with(**patch):
    text = dump_scenario(default_scenario())
    import yaml
    doc = yaml.safe_load(text)
    for path, v in patch.items():
        sect, key = path.split("__") if "__" in path else (None, path)
        (doc[sect] if sect else doc)[key] = v
    return yaml.safe_dump(doc)


def test_altitude_order_rejected():
    with pytest.raises(ConfigError, match="h_min < h_max violated"):
        load_scenario(_doc_with(phys__h_min_m=300.0, phys__h_max_m=50.0))


def test_negative_zeta_rejected():
    with pytest.raises(ConfigError, match="zeta"):
        load_scenario(_doc_with(zeta=-1.0))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        load_scenario(_doc_with(phys__warp_factor=9.0))


def test_parse_error_has_line():
    with pytest.raises(ConfigError, match=r"line 2, column 7"):
        load_scenario("phys:\n  a: b: c\n")


def test_user_invariants():
    with pytest.raises(ConfigError):
        UserTask(id=0, pos_m=(0, 0, 0), n_queries=0)
    with pytest.raises(ConfigError):
        UserTask(id=0, pos_m=(0, 0, 0), acc_min=1.5)
    with pytest.raises(ConfigError):
        UserTask(id=0, pos_m=(0, 0, 0), p_max_w=0.0)


def test_start_altitude_and_area_checked():
    sc = default_scenario()
    with pytest.raises(ConfigError):
        sc.replace(uav_start=(0.0, 0.0, 10.0))
    with pytest.raises(ConfigError):
        sc.replace(users=(UserTask(id=0, pos_m=(900.0, 0.0, 0.0)),))


def test_phys_invariants():
    with pytest.raises(ConfigError):
        PhysConfig(slot_len_s=0.0)
    with pytest.raises(ConfigError):
        PhysConfig(horizon_slots=0)


def test_rng_reproducible_and_streams_independent():
    a = RngStream(7, "fading").uniform(size=5)
    b = RngStream(7, "fading").uniform(size=5)
    c = RngStream(7, "policy").uniform(size=5)
    assert (a == b).all()
    assert not (a == c).all()


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv("LAENET_SEED", "42")
    assert resolve_seed(None) == 42
    assert resolve_seed(3) == 3
    monkeypatch.delenv("LAENET_SEED")
    assert resolve_seed(None) == 0
