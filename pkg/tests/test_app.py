"""
Tests for the command-line entry point: config resolution and exit codes.
"""

import json

import pytest

import app
from models.data_models import CONFIG_MODELS
from tasep.errors import ConfigurationError
from utils.file_handler import ArtifactHandler
from workflow.experiments import ExperimentWorkflow


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    return write


@pytest.fixture
def zero_cost_csv(tmp_path, linear_field):
    return ArtifactHandler(tmp_path).write_csv("g.csv", linear_field(0.25, 0.5, dt=0.125, dxi=0.125).to_frame())


BLOCKED_SITE = {
    "k": 5,
    "initial": [0, 0, 1, 1, 2],
    "envelopes": [{"time": 0.0, "lower": [None] * 5, "upper": [None, 1, None, None, None]}],
    "T": 1.0,
    "random": None,
}


class TestParser:
    def test_one_subcommand_per_experiment(self):
        parser = app.build_parser()
        for name in CONFIG_MODELS:
            args = parser.parse_args([name, "--seed", "5"])
            assert args.command == name
            assert args.seed == 5

    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            app.build_parser().parse_args([])


class TestResolveConfig:
    """defaults < config file < flags."""

    def test_precedence(self, write_config, isolated_dirs):
        path = write_config({"tolerance": 1e-3, "seed": 1})
        args = app.build_parser().parse_args(["doob-check", "--config", str(path), "--seed", "7"])
        config = app.resolve_config("doob-check", args)
        assert config.seed == 7
        assert config.tolerance == 1e-3
        assert config.random.count == 20

    def test_out_flag(self, tmp_path, isolated_dirs):
        args = app.build_parser().parse_args(["hopflax", "--out", str(tmp_path / "x")])
        assert app.resolve_config("hopflax", args).out_dir == str(tmp_path / "x")

    def test_missing_file(self, tmp_path, isolated_dirs):
        args = app.build_parser().parse_args(["hopflax", "--config", str(tmp_path / "none.json")])
        with pytest.raises(ConfigurationError, match="No config file"):
            app.resolve_config("hopflax", args)


# ============================================================================
# Exit codes
# ============================================================================


class TestMain:
    def test_rate_eval(self, write_config, zero_cost_csv, tmp_path, isolated_dirs):
        out = tmp_path / "rate"
        path = write_config({"field_csv": str(zero_cost_csv)})
        assert app.main(["rate-eval", "--config", str(path), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["value"] == pytest.approx(0.0, abs=1e-12)
        assert summary["provenance"]["version"] == "0.3.0"

    def test_schema_violation(self, isolated_dirs):
        # rate-eval has no default field table
        assert app.main(["rate-eval"]) == app.EXIT_CONFIG

    def test_unknown_key(self, write_config, isolated_dirs):
        path = write_config({"field_csv": "g.csv", "colour": "red"})
        assert app.main(["rate-eval", "--config", str(path)]) == app.EXIT_CONFIG

    def test_broken_json(self, tmp_path, isolated_dirs):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        assert app.main(["hopflax", "--config", str(path)]) == app.EXIT_CONFIG

    def test_threads_must_be_positive(self, isolated_dirs):
        assert app.main(["hopflax", "--threads", "0"]) == app.EXIT_CONFIG

    def test_doob_check_is_reproducible(self, write_config, tmp_path, isolated_dirs):
        path = write_config(BLOCKED_SITE)
        summaries = []
        for name in ("a", "b"):
            assert app.main(["doob-check", "--config", str(path), "--out", str(tmp_path / name)]) == 0
            doc = json.loads((tmp_path / name / "summary.json").read_text(encoding="utf-8"))
            # out_dir is part of the hashed config
            doc.pop("provenance")
            summaries.append(doc)
        assert summaries[0] == summaries[1]
        assert summaries[0]["max_gap"] <= 1e-6
        assert (tmp_path / "a" / "doob.csv").read_text(encoding="utf-8").startswith("# config_hash=")

    def test_speed_build_defaults(self, tmp_path, isolated_dirs):
        out = tmp_path / "speed"
        assert app.main(["speed-build", "--out", str(out)]) == 0
        assert (out / "regions.csv").read_text(encoding="utf-8").startswith("# config_hash=")
        speed = ArtifactHandler.read_speed(out / "speed.json")
        assert speed.horizon == pytest.approx(1.0)

    def test_self_check_failure(self, write_config, isolated_dirs, mocker):
        mocker.patch.object(ExperimentWorkflow, "run", return_value=(3, {"checks": {"identity": False}}))
        path = write_config({"field_csv": "g.csv"})
        assert app.main(["rate-eval", "--config", str(path)]) == app.EXIT_SELF_CHECK

    def test_internal_error(self, write_config, isolated_dirs, mocker):
        mocker.patch.object(ExperimentWorkflow, "run", side_effect=RuntimeError("boom"))
        path = write_config({"field_csv": "g.csv"})
        assert app.main(["rate-eval", "--config", str(path)]) == app.EXIT_INTERNAL

    def test_configuration_error_during_run(self, write_config, isolated_dirs, mocker):
        mocker.patch.object(ExperimentWorkflow, "run", side_effect=ConfigurationError("window"))
        path = write_config({"field_csv": "g.csv"})
        assert app.main(["rate-eval", "--config", str(path)]) == app.EXIT_CONFIG
