from __future__ import annotations

import pytest

from src.config import (
    PRESETS,
    ExperimentConfig,
    describe_config,
    dump_config,
    load_config,
    parse_config_text,
    preset_config,
    with_overrides,
)
from src.errors import ConfigError


def test_documented_defaults():
    cfg = ExperimentConfig()
    assert (cfg.grid_size, cfg.t_obs, cfg.t_fut, cfg.horizon) == (128, 5, 15, 30)
    assert cfg.grid_resolution == pytest.approx(1 / 3)
    assert (cfg.pred_lr, cfg.vae_lr, cfg.beta_start, cfg.beta_end, cfg.ramp_steps) == (4e-4, 4e-4, 2e-6, 0.2, 50000)
    assert (cfg.n_samples, cfg.t_occ, cfg.t_free, cfg.seed) == (10, 0.65, 0.35, 0)
    assert cfg.code_shape == (8, 4, 4)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_are_valid(name, tmp_path):
    cfg = preset_config(name)
    assert cfg.preset == name
    assert load_config(dump_config(cfg, tmp_path / "cfg.txt")) == cfg


def test_round_trip_with_overrides(tmp_path):
    cfg = preset_config("smoke", archetypes=("fork",), diff_enabled=False, t_occ=0.7)
    again = load_config(dump_config(cfg, tmp_path / "cfg.txt"))
    assert again == cfg
    assert again.archetypes == ("fork",)


def test_comments_and_blank_lines():
    cfg = parse_config_text("# experiment\npreset = smoke\n\nseed = 3  # reproducible\nprogress = true\n")
    assert (cfg.preset, cfg.seed, cfg.progress) == ("smoke", 3, True)


@pytest.mark.parametrize(
    "text",
    [
        "no_such_key = 1\n",
        "seed = 1\nseed = 2\n",
        "seed: 1\n",
        "seed = one\n",
        "progress = yes\n",
        "seed = 1\npreset = smoke\n",
        "preset = huge\n",
        "t_occ = 0.3\n",
        "archetypes = highway\n",
        "grid_size = 100\n",
        "pred_patches = 3\n",
        "vae_mode = gan\n",
        "horizon = 10\n",
    ],
)
def test_rejected(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_error_quotes_the_line():
    with pytest.raises(ConfigError, match=r"bad config line <config>:2 'seed: 1' \(expected key = value\)"):
        parse_config_text("preset = desk\nseed: 1\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.txt")


def test_describe_lists_every_key():
    lines = describe_config()
    assert len(lines) == len(ExperimentConfig.__dataclass_fields__)
    assert all("  # " in line for line in lines)
    assert lines[0].startswith("preset = desk")


def test_with_overrides():
    cfg = with_overrides(preset_config("smoke"), n_samples=3)
    assert cfg.n_samples == 3
    with pytest.raises(ConfigError):
        with_overrides(cfg, unknown=1)
