#!/usr/bin/env python3
"""
Test script for the layered experiment configuration.
"""
import json
import os
import sys

import pytest

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from agent.errors import ConfigurationError
from agent.kernels import KernelFamily
from agent.krvi import BetaMode
from envs.mdp import InitialStateMode
from harness.config_manager import CHECK_NAMES, ConfigManager, ExperimentConfig, load_config


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"experiment_config": data}))
    return path


def test_bundled_defaults_load():
    config = load_config(environ={})
    assert config.kernel.family is KernelFamily.MATERN
    assert config.agent.lam == 0.1
    assert config.agent.beta_mode is BetaMode.FIXED_CONSTANT
    assert config.env.initial_mode is InitialStateMode.CYCLE
    assert config.experiment.checks == list(CHECK_NAMES)


def test_environment_overrides_the_file(tmp_path):
    path = write_config(tmp_path, {"agent": {"lambda": 2.0}})
    config = load_config(path, environ={"PIKRVI_AGENT_LAMBDA": "0.5",
                                        "PIKRVI_EXPERIMENT_SEEDS": "1,2"})
    assert config.agent.lam == 0.5
    assert config.experiment.seeds == [1, 2]


def test_explicit_overrides_win(tmp_path):
    path = write_config(tmp_path, {"env": {"horizon": 4}})
    config = load_config(path, overrides={"env.horizon": 2, "experiment.output_dir": None},
                         environ={"PIKRVI_ENV_HORIZON": "5"})
    assert config.env.horizon == 2
    assert config.experiment.output_dir == "results"


def test_unknown_key_reports_its_path(tmp_path):
    path = write_config(tmp_path, {"agent": {"gamma": 1.0}})
    with pytest.raises(ConfigurationError) as excinfo:
        load_config(path, environ={})
    assert excinfo.value.field_path == "agent.gamma"


def test_zero_ridge_is_rejected(tmp_path):
    path = write_config(tmp_path, {"agent": {"lambda": 0.0}})
    with pytest.raises(ConfigurationError) as excinfo:
        load_config(path, environ={})
    assert excinfo.value.field_path == "agent.lambda"


def test_squared_exponential_requires_alpha(tmp_path):
    path = write_config(tmp_path, {"kernel": {"family": "squared_exponential"}})
    with pytest.raises(ConfigurationError) as excinfo:
        load_config(path, environ={})
    assert excinfo.value.field_path == "agent.alpha"
    config = load_config(path, overrides={"agent.alpha": 1.0}, environ={})
    assert config.agent.alpha == 1.0


def test_enum_and_type_coercion(tmp_path):
    path = write_config(tmp_path, {"agent": {"beta_mode": "THEORY_FIXED_POINT", "partition": "false"},
                                   "env": {"initial_mode": "fixed"}})
    config = load_config(path, environ={})
    assert config.agent.beta_mode is BetaMode.THEORY_FIXED_POINT
    assert config.agent.partition is False
    assert config.env.initial_mode is InitialStateMode.FIXED
    with pytest.raises(ConfigurationError) as excinfo:
        load_config(path, environ={"PIKRVI_ENV_HORIZON": "2.5"})
    assert excinfo.value.field_path == "env.horizon"


def test_export_round_trip(tmp_path):
    manager = ConfigManager(write_config(tmp_path, {"env": {"grid_per_dim": 9}}), environ={})
    original = manager.load()
    exported = manager.export(tmp_path / "out" / "effective.json")
    reloaded = load_config(exported, environ={})
    assert reloaded == original
    assert json.loads(exported.read_text())["experiment_config"]["agent"]["lambda"] == 0.1


def test_get_and_set_by_path():
    config = ExperimentConfig()
    config.set("agent.lambda", "3")
    assert config.get("agent.lambda") == 3.0
    with pytest.raises(ConfigurationError):
        config.get("lambda")


def test_missing_explicit_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.json", environ={})
