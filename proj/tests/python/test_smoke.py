import math
import os
import pathlib

import numpy as np
import pytest

import tdcosim

DATA = pathlib.Path(os.environ.get("TDCOSIM_DATA_DIR", pathlib.Path(__file__).resolve().parents[2] / "data"))


def test_load_scenario():
    s = tdcosim.load_scenario(DATA / "scenarios" / "quiescent.yaml")
    assert s.name == "quiescent"
    assert [b for _, b in s.feeders] == [4, 9]
    assert len(s.der_ids) == 20
    assert math.isclose(s.internal_dt, 1.0 / 30.0)


def test_missing_file_raises_config_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: bad\ngrid: nowhere.yaml\nfeeders: []\n")
    with pytest.raises(tdcosim.ConfigError) as err:
        tdcosim.load_scenario(bad)
    assert "bad.yaml:2" in str(err.value)


def test_quiescent_run_holds_nominal(tmp_path):
    r = tdcosim.run_file(DATA / "scenarios" / "quiescent.yaml", out=tmp_path, stop_time=10.0, plots=False)
    assert r.t[-1] == pytest.approx(10.0)
    assert np.max(np.abs(r.freq_hz - 60.0)) < 1e-6
    assert r.limit_violations == 0
    assert (tmp_path / "frequency.csv").exists()
    assert "frequency" in r.summary().lower()


def test_trip_restores_frequency():
    s = tdcosim.load_scenario(DATA / "scenarios" / "trip_agc.yaml")
    r = tdcosim.run(s)
    assert r.freq_hz.min() < 59.9
    assert abs(r.freq_hz[-1] - 60.0) < 0.017
    s.apply_overrides(no_agc=True)
    r2 = tdcosim.run(s)
    assert abs(r2.freq_hz[-1] - 60.0) > abs(r.freq_hz[-1] - 60.0)


def test_seed_changes_noise_only_when_asked():
    a = tdcosim.generate_load_series(7, 0.02, 200)
    b = tdcosim.generate_load_series(7, 0.02, 200)
    c = tdcosim.generate_load_series(8, 0.02, 200)
    assert a == b
    assert a != c
    assert np.mean(a) == pytest.approx(1.0, abs=0.01)


def test_feeder_solve_and_headroom():
    sol = tdcosim.solve_feeder(DATA / "feeders" / "f34.yaml")
    v = [x for ph in sol["v_pu"].values() for x in ph if x is not None]
    assert 0.9 < min(v) <= max(v) < 1.1
    assert sol["p_mw"] > 0.0
    assert tdcosim.feeder_headroom(DATA / "feeders" / "f34.yaml")["status"] == "infeasible"
    h = tdcosim.feeder_headroom(DATA / "feeders" / "f34.yaml", v_sub_pu=1.02)
    assert h["status"] == "optimal"
    assert 0.0 <= h["headroom_mw"] <= 10 * 0.4 + 1e-9
