from __future__ import annotations

import sys

import pytest

from src.cli import build_parser, main, report, resolve_config, run
from src.config import load_config
from src.errors import ConfigError, MissingArtifactError
from src.evaluation.evaluate import evaluate
from src.evaluation.experiment import METRIC_COLUMNS, _write, metric_rows, run_paths


def _args(*argv: str):
    return build_parser().parse_args(list(argv))


class TestResolveConfig:
    def test_preset_and_overrides(self, tmp_path):
        cfg = resolve_config(_args("eval", "--preset", "smoke", "--run-dir", str(tmp_path), "--seed", "7", "--set", "n_samples=4"))
        assert cfg.preset == "smoke"
        assert (cfg.run_dir, cfg.seed, cfg.n_samples) == (str(tmp_path), 7, 4)

    def test_config_file(self, tmp_path):
        path = tmp_path / "exp.txt"
        path.write_text("preset = smoke\nt_occ = 0.7\n", encoding="utf-8")
        cfg = resolve_config(_args("eval", "--config", str(path)))
        assert cfg.t_occ == 0.7 and cfg.grid_size == 32

    @pytest.mark.parametrize("override", ["n_samples", "no_such_key=1", "n_samples=many"])
    def test_bad_override(self, override):
        with pytest.raises(ConfigError):
            resolve_config(_args("eval", "--set", override))


class TestCommands:
    def test_describe(self, capsys):
        assert run(["config", "--describe"]) == 0
        out = capsys.readouterr().out
        assert "t_fut = 15  # predicted frames per rollout window" in out

    def test_dump_round_trips(self, tmp_path, capsys):
        target = tmp_path / "smoke.txt"
        run(["config", "--preset", "smoke", "--dump", str(target)])
        assert capsys.readouterr().out.strip() == f"wrote {target}"
        assert load_config(target).n_train == 6

    def test_report(self, tmp_path, rng):
        reports = {"fixed_frame": evaluate([rng.random((1, 4)) for _ in range(2)], "fixed_frame")}
        _write(tmp_path / "metrics.csv", metric_rows(reports), METRIC_COLUMNS)
        lines = report(tmp_path)
        assert len(lines) == 1 and lines[0].startswith("fixed_frame")
        assert len(lines[0].split()) == 5

    def test_stage_needs_upstream(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            run(["train-vae", "--preset", "smoke", "--run-dir", str(tmp_path / "run")])
        assert (tmp_path / "run" / "logs" / "train-vae.log").exists()

    def test_main_exit_code(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(sys, "argv", ["ogm-forecast", "encode", "--preset", "smoke", "--run-dir", str(tmp_path)])
        with pytest.raises(SystemExit) as info:
            main()
        assert info.value.code == 2
        assert "train-vae" in capsys.readouterr().err

    def test_gen_data_prints_artifacts(self, tmp_path, capsys):
        run(["gen-data", "--preset", "smoke", "--run-dir", str(tmp_path), "--set", "n_train=1", "--set", "n_test=1"])
        out = capsys.readouterr().out.splitlines()
        cfg_paths = run_paths(resolve_config(_args("gen-data", "--preset", "smoke", "--run-dir", str(tmp_path))))
        assert out == [f"wrote {cfg_paths.data('train')}", f"wrote {cfg_paths.data('test')}"]
