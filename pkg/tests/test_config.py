from pathlib import Path

import pytest

from config.app import DESK_MODEL_PRESET, PAPER_MODEL_PRESET
from utils.errors import ConfigError
from utils.experiment_config import load_experiment_config, parse_config_text

ROOT = Path(__file__).resolve().parent.parent


def test_defaults_use_the_desk_preset():
    config = load_experiment_config()
    assert config.model.d_model == DESK_MODEL_PRESET["d_model"]
    assert config.loss.head == "scones" and config.loss.alpha == 1.0
    assert config.optimizer.patience == 5
    assert config.decode.beam_sizes == [1, 2, 4, 8, 16, 32, 64]
    assert config.run.record_timings is True


def test_shipped_default_file_matches_builtin_defaults():
    shipped = load_experiment_config(ROOT / "config" / "default_experiment.ini")
    assert shipped == load_experiment_config(), "config/default_experiment.ini drifted from the defaults"


def test_values_lists_and_presets_are_parsed():
    config = parse_config_text(
        """
        [model]
        preset = paper
        num_layers = 2          ; overrides the preset

        [loss]
        head = scones
        alpha = 0.5
        lambda = 0.1

        [data]
        gammas = 0.1, 0.7

        [run]
        record_timings = false
        """.replace("\n        ", "\n")
    )
    assert config.model.d_model == PAPER_MODEL_PRESET["d_model"]
    assert config.model.num_layers == 2
    assert (config.loss.alpha, config.loss.lambda_) == (0.5, 0.1)
    assert config.data.gammas == [0.1, 0.7]
    assert config.run.record_timings is False


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[training]\nsteps = 3\n", "unknown config section"),
        ("[loss]\nalpha = 0\n", "invalid experiment configuration"),
        ("[loss]\nhead = sparsemax\n", "invalid experiment configuration"),
        ("[decode]\nbeam_sizes = 4, 2\n", "invalid experiment configuration"),
        ("[optimizer]\nmomentum = 0.9\n", "invalid experiment configuration"),
        ("[model]\npreset = huge\n", "unknown model preset"),
        ("no section header\n", "malformed config file"),
    ],
)
def test_invalid_files_are_config_errors(text, fragment):
    with pytest.raises(ConfigError) as error:
        parse_config_text(text)
    assert fragment in str(error.value), f"unexpected message: {error.value}"
    assert error.value.exit_code == 2


def test_invalid_values_name_the_offending_key():
    with pytest.raises(ConfigError) as error:
        parse_config_text("[loss]\nalpha = -1\n")
    assert any(detail.startswith("loss.alpha") for detail in error.value.details), error.value.details


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_config(tmp_path / "missing.ini")


def test_overrides_are_validated(experiment):
    changed = experiment.with_overrides("loss", alpha=0.2, head=None)
    assert changed.loss.alpha == 0.2 and changed.loss.head == experiment.loss.head
    with pytest.raises(ConfigError):
        experiment.with_overrides("decode", beam_size=0)


def test_hash_is_stable_and_sensitive(experiment):
    assert experiment.config_hash() == experiment.with_overrides("run").config_hash()
    assert experiment.config_hash() != experiment.with_overrides("run", seed=4).config_hash()
    assert len(experiment.config_hash()) == 64


def test_require_paths(tmp_path, experiment):
    experiment.require_paths(str(tmp_path))
    with pytest.raises(ConfigError):
        experiment.require_paths(None)
    with pytest.raises(ConfigError):
        experiment.require_paths(str(tmp_path / "nope"))
