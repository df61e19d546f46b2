import pytest
import yaml

from slosh.config import ConfigError, ProjectConfig, controller_from_dict, controller_to_dict, load_config
from slosh.synthesis import ControllerParams


def test_defaults_load(cfg):
    assert cfg.plant.omega_o == pytest.approx(4.4)
    assert cfg.weights.omega_d == pytest.approx(2.2)
    assert "pulse-600L" in cfg.scenario_names


def test_yaml_round_trip(cfg, tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(cfg.dump())
    assert load_config(path).to_dict() == cfg.to_dict()


def test_partial_override_merges():
    cfg = ProjectConfig.from_dict({"plant": {"k": 5000.0}})
    assert cfg.plant.k == 5000.0 and cfg.plant.m_s == 250.0


@pytest.mark.parametrize("override", [
    {"plant": {"m_s": -1.0}},
    {"uncertainty": {"k_rel": 1.5}},
    {"tune": {"init": {"zeta1": 0.0}}},
    {"architecture": {"outer_gain": 0.8, "outer_bandwidth": 2.0}},
    {"scenarios": {"bad": {"total_time": 12.0, "colour": "red"}}},
    {"scenarios": {"bad": {"fill": "9000L", "total_time": 12.0}}},
    [1, 2, 3],
])
def test_bad_configs_rejected(override):
    with pytest.raises(ConfigError):
        ProjectConfig.from_dict(override)


def test_unreadable_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("plant: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_unknown_scenario(cfg):
    with pytest.raises(ConfigError):
        cfg.scenario("nope")


def test_controller_dict_round_trip():
    p = ControllerParams(V=-2e-3, zeta1=0.9, zeta2=0.5, omega_n=3.0, omega_1=7.0, omega_2=12.0)
    d = yaml.safe_load(yaml.safe_dump(controller_to_dict(p, worst_case_cost=0.5)))
    assert controller_from_dict(d) == p
    with pytest.raises(ConfigError):
        controller_from_dict({"V": 1.0})
