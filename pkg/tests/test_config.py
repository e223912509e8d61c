from __future__ import annotations

import json
from pathlib import Path

import pytest

from decentmem.config import (
    ConfigError,
    RunConfig,
    TheoryConfig,
    load_run_config,
    load_theory_config,
    run_config_from_dict,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", ["smoke.toml", "sim.toml", "ablation.toml"])
def test_bundled_run_configs_load(name):
    cfg = load_run_config(CONFIGS / name)
    assert isinstance(cfg, RunConfig)


def test_bundled_theory_config():
    cfg = load_theory_config(CONFIGS / "theory.toml")
    assert cfg == TheoryConfig()


def test_smoke_values():
    cfg = load_run_config(CONFIGS / "smoke.toml")
    assert cfg.topology.agents == 1 and cfg.environment.n_tasks == 5


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_tau_out_of_range_names_field_and_line(tmp_path):
    p = write(tmp_path, "seed = 1\n[retrieval]\nk = 3\ntau = 1.5\n")
    with pytest.raises(ConfigError) as err:
        load_run_config(p)
    assert err.value.field_name == "retrieval.tau"
    assert err.value.line == 4
    assert "retrieval.tau" in str(err.value) and ":4:" in str(err.value)


@pytest.mark.parametrize("text,field", [
    ("[environment]\np_guided = 1.2\n", "environment.p_guided"),
    ("[environment]\nfamilies = 0\n", "environment.families"),
    ("[retrieval]\nk = 0\n", "retrieval.k"),
    ("[retrieval]\nk = 2.5\n", "retrieval.k"),
    ("[router]\ndecay = 1.0\n", "router.decay"),
    ("[judge]\nmode = \"oracle\"\n", "judge.mode"),
    ("[topology]\nagnets = 3\n", "topology.agnets"),
    ("[study]\nmodes = [\"online\", 2.0]\n", "study.modes"),
    ("colour = 1\n", "colour"),
])
def test_field_errors(tmp_path, text, field):
    with pytest.raises(ConfigError) as err:
        load_run_config(write(tmp_path, text))
    assert err.value.field_name == field
    assert err.value.line is not None


def test_toml_syntax_error(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_run_config(write(tmp_path, "seed = \n"))
    assert err.value.line == 1


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "missing.toml")


def test_manifest_round_trip(tmp_path):
    cfg = run_config_from_dict({"seed": 4, "retrieval": {"tau": 0.7}, "study": {"modes": ["online", 0.5]}})
    manifest = {"schema": "decentmem-manifest", "config": cfg.to_dict()}
    p = write(tmp_path, json.dumps(manifest), "manifest.json")
    assert load_run_config(p) == cfg


def test_overrides():
    cfg = RunConfig().with_overrides(seed=9, output_dir="x")
    assert (cfg.seed, cfg.output_dir) == (9, "x")


def test_theory_validation(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_theory_config(write(tmp_path, "[regret]\nalpha_star = 0.4\n"))
    assert err.value.field_name == "regret.alpha_star" and err.value.line == 2
