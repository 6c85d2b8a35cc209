"""
Experiment configuration files.

A config file is INI text parsed by `configparser`:

    [section]
    key = value        ; comments start with ; or #

Lists are comma separated (`gammas = 0.1, 0.7`). Every section is optional
and every key has a default; unknown sections or keys are rejected. See the
README for the full list of keys.
"""

import configparser
import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from typing_extensions import Annotated

from config.app import (
    ALPHA_GRID,
    BEAM_SIZES,
    DEFAULT_MAX_STATES,
    DEFAULT_THREADS,
    GAMMA_GRID,
    MODEL_PRESETS,
    RUNS_DIR,
)
from services.losses import LossSpec
from services.model import ModelConfig
from services.optim import OptimizerConfig
from utils.errors import ConfigError

SECTIONS = ("model", "loss", "optimizer", "data", "decode", "sweep", "run")


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class DataConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    data_dir: Annotated[Optional[str], Field(description="Directory holding train/dev/test .src/.tgt files.")] = None
    train_source: Optional[str] = None
    train_target: Optional[str] = None
    dev_source: Optional[str] = None
    dev_target: Optional[str] = None
    test_source: Optional[str] = None
    test_target: Optional[str] = None
    max_vocab_size: Annotated[int, Field(ge=5, description="Vocabulary size cap including reserved tokens.")] = 4000
    max_len: Annotated[int, Field(ge=1, description="Training pairs with a longer side are dropped.")] = 50
    dev_eval_sentences: Annotated[int, Field(ge=1, description="Dev sentences scored at each evaluation.")] = 200

    # synthetic corpus generation
    task: Annotated[Literal["ibm3", "copy"], Field(description="IBM-3 sampling or target = source.")] = "ibm3"
    gammas: Annotated[List[float], Field(description="Sampling temperatures, one corpus each.")] = GAMMA_GRID
    source_file: Annotated[Optional[str], Field(description="Existing source corpus; generated when absent.")] = None
    params_file: Annotated[Optional[str], Field(description="Existing IBM-3 parameter file; random when absent.")] = None
    train_sentences: Annotated[int, Field(ge=1)] = 5000
    dev_sentences: Annotated[int, Field(ge=1)] = 200
    test_sentences: Annotated[int, Field(ge=1)] = 200
    source_words: Annotated[int, Field(ge=1, description="Generated source vocabulary size.")] = 200
    target_words: Annotated[int, Field(ge=1, description="IBM-3 target vocabulary size.")] = 200
    min_length: Annotated[int, Field(ge=1)] = 3
    max_length: Annotated[int, Field(ge=1)] = 12
    zipf_exponent: Annotated[float, Field(ge=0.0)] = 1.0
    concentration: Annotated[float, Field(gt=0.0, description="Dirichlet concentration of the random tables.")] = 0.1
    p1: Annotated[float, Field(ge=0.0, le=0.5, description="Spurious word probability.")] = 0.1
    max_fertility: Annotated[int, Field(ge=1)] = 4

    @field_validator("gammas", mode="before")
    @classmethod
    def split_gammas(cls, value):
        return _split_list(value)

    @field_validator("gammas")
    @classmethod
    def positive_gammas(cls, value: List[float]) -> List[float]:
        if not value or any(gamma <= 0 for gamma in value):
            raise ValueError("gammas must be a non-empty list of positive numbers")
        return value

    @model_validator(mode="after")
    def check_lengths(self):
        if self.min_length > self.max_length:
            raise ValueError("min_length must not exceed max_length")
        return self

    def split_paths(self, split: str) -> Tuple[Optional[str], Optional[str]]:
        source, target = getattr(self, f"{split}_source"), getattr(self, f"{split}_target")
        if self.data_dir is not None:
            source = source or str(Path(self.data_dir) / f"{split}.src")
            target = target or str(Path(self.data_dir) / f"{split}.tgt")
        return source, target


class DecodeConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Annotated[Literal["greedy", "beam", "exact", "enumerate"], Field(description="Search strategy.")] = "greedy"
    beam_size: Annotated[int, Field(ge=1)] = 4
    beam_sizes: Annotated[List[int], Field(description="Ascending beam sizes for sweep-beam.")] = BEAM_SIZES
    max_len: Annotated[Optional[int], Field(ge=1, description="Output length cap; 2|x|+10 when unset.")] = None
    max_states: Annotated[int, Field(ge=1, description="Decoder steps exact search may spend per sentence.")] = DEFAULT_MAX_STATES

    @field_validator("beam_sizes", mode="before")
    @classmethod
    def split_beam_sizes(cls, value):
        return _split_list(value)

    @field_validator("beam_sizes")
    @classmethod
    def ascending(cls, value: List[int]) -> List[int]:
        if not value or any(b < 1 for b in value) or sorted(set(value)) != list(value):
            raise ValueError("beam_sizes must be strictly ascending positive integers")
        return value


class SweepConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alphas: Annotated[List[float], Field(description="SCONES alpha values, one model each.")] = ALPHA_GRID
    include_softmax: Annotated[bool, Field(description="Also train a softmax baseline on the same data.")] = True
    run_exact: Annotated[bool, Field(description="Run exact search in the beam sweep.")] = True
    max_sentences: Annotated[Optional[int], Field(ge=1, description="Only use the first N test sentences.")] = None

    @field_validator("alphas", mode="before")
    @classmethod
    def split_alphas(cls, value):
        return _split_list(value)

    @field_validator("alphas")
    @classmethod
    def positive_alphas(cls, value: List[float]) -> List[float]:
        if not value or any(alpha <= 0 for alpha in value):
            raise ValueError("alphas must be a non-empty list of positive numbers")
        return value


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: Annotated[int, Field(description="Seed for data order, dropout, sampling and bootstrap.")] = 1234
    out_dir: Annotated[str, Field(description="Directory all artifacts are written to.")] = RUNS_DIR
    threads: Annotated[int, Field(ge=1, description="Worker threads for per-sentence work.")] = DEFAULT_THREADS
    record_timings: Annotated[
        bool, Field(description="Write wall-clock columns; when false they are 0 and reruns are byte-identical.")
    ] = True


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    model: ModelConfig = ModelConfig()
    loss: LossSpec = LossSpec()
    optimizer: OptimizerConfig = OptimizerConfig()
    data: DataConfig = DataConfig()
    decode: DecodeConfig = DecodeConfig()
    sweep: SweepConfig = SweepConfig()
    run: RunConfig = RunConfig()

    def canonical_text(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def with_overrides(self, section: str, **values) -> "ExperimentConfig":
        """Copy with keys of one section replaced; the result is re-validated."""
        data = self.model_dump(by_alias=True)
        data[section].update({key: value for key, value in values.items() if value is not None})
        return build_config(data)

    def require_paths(self, *paths: Optional[str]) -> None:
        for path in paths:
            if path is None:
                raise ConfigError("a required input path is not configured")
            if not Path(path).exists():
                raise ConfigError(f"configured path does not exist: {path}")


def build_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as error:
        raise ConfigError(
            "invalid experiment configuration",
            details=[f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in error.errors()],
        )


def _model_section(values: dict) -> dict:
    preset = values.pop("preset", "desk")
    if preset not in MODEL_PRESETS:
        raise ConfigError(f"unknown model preset '{preset}'", details=sorted(MODEL_PRESETS))
    return {**MODEL_PRESETS[preset], **values}


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as error:
        raise ConfigError(f"malformed config file: {error}")
    unknown = [section for section in parser.sections() if section not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}", details=list(SECTIONS))

    data = {section: dict(parser[section]) for section in parser.sections()}
    data["model"] = _model_section(data.get("model", {}))
    return build_config(data)


def load_experiment_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Read a config file, or return the defaults (desk preset) when no path is given."""
    if path is None:
        return parse_config_text("")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))
