import math

import numpy as np
import pytest
import yaml

from conftest import TWO_PI
from uscsim.errors import NumericalError, ScenarioError
from uscsim.scenarios import (
    Scenario,
    SweepSpec,
    apply_overrides,
    dump_scenario,
    list_presets,
    load_preset,
    load_scenario_file,
    run_family,
    run_scenario,
    run_sweep,
    scenario_from_dict,
    scenario_to_dict,
)

SMALL = {
    "name": "small",
    "rabi": {"omega_q_ghz": 0.299, "g_ghz": 4.92, "omega_r_ghz": 6.336},
    "resonator": {"delta_mhz": 5.698, "chi_khz": 80.735, "f_mhz": 22.792, "kappa_mhz": 2.375, "J_khz": 949.8},
    "cuts": {"n_cavity": 20, "n_resonator": 20, "levels": 2},
    "time": {"t_end": 20.0, "dt": 5.0},
    "outputs": {"metrics": ["negativity"], "metric_dt": 10.0},
}


def small(**changes):
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    d.update(changes)
    return scenario_from_dict(d)


# ---------------------------------------------------------------- schema


def test_unit_suffixes_convert_to_rad_per_ns():
    s = small()
    assert s.rabi.omega_q == pytest.approx(TWO_PI * 0.299)
    assert s.resonator.delta == pytest.approx(TWO_PI * 5.698e-3)
    assert s.resonator.chi == pytest.approx(TWO_PI * 80.735e-6)
    assert s.declared["resonator.chi"] == {"value": 80.735, "unit": "kHz"}


def test_bare_keys_are_rad_per_ns():
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    d["rabi"] = {"omega_q": 1.0, "g": 2.0, "omega_r": 3.0}
    s = scenario_from_dict(d)
    assert (s.rabi.omega_q, s.rabi.g, s.rabi.omega_r) == (1.0, 2.0, 3.0)


def test_round_trip_is_field_identical(tmp_path):
    s = small(label="x", description="round trip")
    text = dump_scenario(s, tmp_path / "s.yaml")
    again = load_scenario_file(tmp_path / "s.yaml").scenarios[0]
    assert again == s
    assert scenario_from_dict(yaml.safe_load(text)) == s
    assert scenario_to_dict(again) == scenario_to_dict(s)


@pytest.mark.parametrize("name", list_presets())
def test_every_preset_round_trips(name, tmp_path):
    for desk in (False, True):
        for s in load_preset(name, desk=desk):
            assert scenario_from_dict(yaml.safe_load(dump_scenario(s))) == s


def test_infinite_sigma_round_trips():
    s = apply_overrides(small(), {"measurement.sigma": "infinity"})
    assert math.isinf(s.sigma)
    assert scenario_from_dict(yaml.safe_load(dump_scenario(s))).sigma == math.inf


def test_overrides_replace_unit_variants():
    s = apply_overrides(small(), {"rabi.omega_q_mhz": 2.99})
    assert s.rabi.omega_q == pytest.approx(TWO_PI * 2.99e-3)
    assert s.declared["rabi.omega_q"]["unit"] == "MHz"
    s2 = apply_overrides(s, {"rabi.omega_q": 0.5})
    assert s2.rabi.omega_q == 0.5
    assert "rabi.omega_q" not in s2.declared


@pytest.mark.parametrize(
    "patch, message",
    [
        ({"resonator": {"delta": 0.1, "chi": 0.1, "f": 0.1, "kappa": -1.0, "J": 0.0}}, "kappa"),
        ({"kind": "nonsense"}, "kind"),
        ({"model": "rwa"}, "model"),
        ({"initial": "somewhere"}, "initial"),
        ({"cuts": {"n_cavity": 1}}, "n_cavity"),
        ({"time": {"t_end": -1.0}}, "positive"),
        ({"outputs": {"metrics": ["wigner"]}}, "metrics"),
        ({"bogus": 1}, "top-level"),
        ({"rabi": {"omega_q_thz": 1.0, "g": 1.0, "omega_r": 1.0}}, "unknown key"),
        ({"measurement": {"sigma": -0.5}}, "sigma"),
    ],
)
def test_invalid_configuration_raises(patch, message):
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    d.update(patch)
    with pytest.raises(ScenarioError, match=message):
        scenario_from_dict(d)


def test_unreadable_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario_file(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ScenarioError):
        load_scenario_file(tmp_path / "list.yaml")


def test_unknown_preset():
    with pytest.raises(ScenarioError, match="unknown preset"):
        load_preset("fig99")


# ---------------------------------------------------------------- presets


def test_all_figure_presets_ship():
    names = set(list_presets())
    assert {f"fig{i}" for i in range(1, 14)} <= names


def test_desk_block_reduces_cuts():
    full, desk = load_preset("fig5"), load_preset("fig5", desk=True)
    for a, b in zip(full, desk):
        assert b.n_resonator < a.n_resonator
        assert b.levels <= a.levels
        assert a.label == b.label


def test_variants_apply_their_settings():
    fam = load_preset("fig12")
    assert len(fam) == 4
    assert fam.get("ratio0.9425_g").initial == "left_minus_alpha"
    assert fam.get("ratio0.9425_g").rabi.omega_q == pytest.approx(TWO_PI * 0.00299)
    with pytest.raises(KeyError):
        fam.get("nope")


def test_fig10_covers_zero_effective_splitting():
    fam = load_preset("fig10")
    weffs = sorted(s.effective_rabi().omega_eff() for s in fam)
    assert weffs[0] == 0.0
    assert all("discord" in s.metrics for s in fam)


def test_model_selectors():
    s = small()
    assert apply_overrides(s, {"model": "qnd_limit"}).effective_rabi().omega_q == 0.0
    assert apply_overrides(s, {"model": "null_J"}).effective_J() == 0.0
    assert apply_overrides(s, {"model": "two_level", "cuts.levels": 4}).levels == 2


# ---------------------------------------------------------------- pipeline


@pytest.fixture(scope="module")
def small_bundle():
    return run_scenario(small())


def test_dynamics_bundle_contents(small_bundle):
    b = small_bundle
    assert np.allclose(b.times, [0, 5, 10, 15, 20])
    for key in ("sigma_z", "sigma_x_prime", "photon_number", "b", "p_ge", "p_lt", "p_high", "sigma_x_prime_high"):
        assert key in b.series and len(b.series[key]) == 5
    assert np.iscomplexobj(b.series["b"])
    ts, neg = b.metric_series["negativity"]
    assert np.allclose(ts, [0, 10, 20])
    assert np.all(neg >= -1e-12)
    assert b.summary["diagnostics"]["max_trace_drift"] < 1e-7
    assert np.allclose(b.series["p_ge"] + b.series["p_lt"], 1.0, atol=1e-10)
    assert b.metadata["run_id"] == "small"
    assert b.metadata["declared_parameters"]["rabi.omega_q"]["unit"] == "GHz"


def test_runs_are_deterministic(small_bundle):
    again = run_scenario(small())
    for k, v in small_bundle.series.items():
        assert np.array_equal(np.asarray(v), np.asarray(again.series[k]), equal_nan=True), k


def test_two_level_model_drops_full_sigma_z():
    b = run_scenario(small(model="two_level"))
    assert "sigma_z" not in b.series and "sigma_x_prime" in b.series


def test_discord_needs_two_usc_levels():
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    d["cuts"]["levels"] = 4
    d["outputs"] = {"metrics": ["discord"]}
    with pytest.raises(ScenarioError, match="discord"):
        run_scenario(scenario_from_dict(d))


def test_static_preset_summary():
    b = run_scenario(load_preset("fig1", desk=True).scenarios[0])
    assert "ground_cavity" in b.qgrids
    (xl, yl), (xr, yr) = b.summary["lobe_left"], b.summary["lobe_right"]
    assert xl == pytest.approx(-xr) and yl == pytest.approx(yr)
    assert b.summary["lobe_heights"][0] == pytest.approx(b.summary["lobe_heights"][1], rel=1e-9)


def test_leakage_failure_is_numerical_error():
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    d["cuts"]["n_resonator"] = 4
    d["time"]["t_end"] = 100.0
    with pytest.raises(NumericalError):
        run_scenario(scenario_from_dict(d))


def test_run_family_keep_going_records_failures():
    d = yaml.safe_load(yaml.safe_dump(SMALL))
    d["cuts"]["n_resonator"] = 4
    d["time"]["t_end"] = 100.0
    bad = scenario_from_dict(d)
    results = run_family([small(), bad], keep_going=True)
    assert not isinstance(results[0][1], Exception)
    assert isinstance(results[1][1], NumericalError)


def test_sweep_over_sigma():
    sigmas = (0.1, 0.5, 1.0, 5.0, 50.0)
    pts = run_sweep(small(), SweepSpec("measurement.sigma", sigmas))
    assert [p.value for p in pts] == list(sigmas)
    assert all(p.status == "ok" for p in pts)
    assert [p.scenario.sigma for p in pts] == list(sigmas)
    assert pts[2].bundle.metadata["sweep"] == {"path": "measurement.sigma", "value": 1.0}


def test_sweep_records_bad_points():
    pts = run_sweep(small(), SweepSpec("measurement.sigma", (0.5, -1.0)))
    assert [p.status for p in pts] == ["ok", "config_error"]
    assert pts[1].error


def test_sweep_spec_validation():
    with pytest.raises(ScenarioError):
        SweepSpec("measurement.sigma", ())
    with pytest.raises(ScenarioError):
        SweepSpec("rabi.omega_q", (math.nan,))


def test_infidelity_preset_table():
    s = load_preset("fig11", desk=True).scenarios[0]
    b = run_scenario(s)
    tab = b.tables["infidelity"]
    assert set(tab) >= {"omega_q", "coupling_ratio", "f", "f_full_prefactor"}
    assert np.all(tab["f"] < 0.05)


def test_scenario_dataclass_defaults():
    s = Scenario(name="x", rabi=small().rabi, resonator=small().resonator)
    assert s.measure_times == (s.t_end,)
    assert s.run_id == "x"
