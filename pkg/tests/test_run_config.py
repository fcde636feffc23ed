import json

import pytest

from errors import InvalidConfigurationError
from run_config import (
    RunConfig,
    apply_env_overrides,
    config_from_dict,
    config_hash,
    emit_config,
    parse_config,
)


def _write(tmp_path, text, name="config.json"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_defaults():
    config = RunConfig()
    assert (config.nx, config.m, config.n_s, config.m_off) == (100, 10, 9, 10)
    assert config.m_on == [1, 2, 3, 4, 5]
    assert config.delta == 1e-3 and config.max_iters == 25
    assert config.f == 0.1 and (config.f_low, config.f_high) == (0.1, 1.0)
    assert (config.penalty, config.fine_penalty) == (4.0, 10.0)
    assert config.formulation == "cg"


@pytest.mark.parametrize("text", ["{}", "", "  \n"])
def test_empty_document_gives_defaults(tmp_path, text):
    assert parse_config(_write(tmp_path, text)) == RunConfig()


def test_partial_document(tmp_path):
    config = parse_config(_write(tmp_path, json.dumps({"nx": 40, "m": 4, "formulation": "dg"})))
    assert (config.nx, config.m, config.formulation) == (40, 4, "dg")
    assert config.n_s == 9


@pytest.mark.parametrize("data,key", [
    ({"m_on": [1, 20]}, "m_on"),
    ({"nx": 100, "m": 7}, "m"),
    ({"nx": 10, "m": 10}, "nx"),
    ({"f_low": 2.0}, "f_low"),
    ({"delta": 0.0}, "delta"),
    ({"fine_penalty": -1.0}, "fine_penalty"),
    ({"field": "perlin"}, "field"),
    ({"mu_p_samples": [0.5, 1.5]}, "mu_p_samples"),
    ({"penalty_parameter": 4.0}, "penalty_parameter"),
])
def test_invalid_values_name_the_key(data, key):
    with pytest.raises(InvalidConfigurationError) as info:
        config_from_dict(data)
    assert str(info.value).startswith(key)


def test_malformed_and_missing_files(tmp_path):
    with pytest.raises(InvalidConfigurationError):
        parse_config(_write(tmp_path, "{nx: 3"))
    with pytest.raises(InvalidConfigurationError):
        parse_config(_write(tmp_path, "[1, 2]"))
    with pytest.raises(InvalidConfigurationError):
        parse_config(tmp_path / "missing.json")


def test_round_trip(tmp_path):
    config = RunConfig(nx=60, m=6, m_on=[1, 3], m_off=6, mu_p_samples=[0.0, 1.0], seed=5)
    path = tmp_path / "out" / "config.json"
    emit_config(config, path)
    assert parse_config(path) == config
    assert emit_config(parse_config(path)) == path.read_text()
    assert config_hash(config) == config_hash(parse_config(path))
    assert config_hash(config) != config_hash(RunConfig())


def test_config_is_frozen():
    config = RunConfig()
    with pytest.raises(Exception):
        config.nx = 20


def test_snapshot_rule_selection():
    assert RunConfig(formulation="cg").rule().kind == "fixed"
    assert RunConfig(formulation="dg").rule().kind == "adaptive"
    rule = RunConfig(formulation="cg", snapshot_rule="adaptive", l_cap=5, l_extra=2).rule()
    assert (rule.kind, rule.l_cap, rule.l_extra) == ("adaptive", 5, 2)
    assert RunConfig(formulation="dg", dg_mass_weight="kappa").weight_rule == "kappa"
    assert RunConfig(formulation="cg", dg_mass_weight="kappa").weight_rule == "kappa_tilde"


def test_environment_overrides(monkeypatch, tmp_path):
    config = RunConfig()
    monkeypatch.delenv("GMSFEM_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("GMSFEM_WORKERS", raising=False)
    assert apply_env_overrides(config) is config

    monkeypatch.setenv("GMSFEM_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("GMSFEM_WORKERS", "3")
    updated = apply_env_overrides(config)
    assert updated.output_dir == str(tmp_path / "env")
    assert updated.workers == 3
    assert apply_env_overrides(config, tmp_path / "cli").output_dir == str(tmp_path / "cli")

    monkeypatch.setenv("GMSFEM_WORKERS", "many")
    with pytest.raises(InvalidConfigurationError):
        apply_env_overrides(config)
