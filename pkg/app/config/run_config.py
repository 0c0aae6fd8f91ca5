"""
Run configuration: one validated record per CLI invocation, merged from an
optional JSON config file and explicit flags (flags win). Serialized into
the header of every file a run produces.
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config.settings import (
    BATCH_SIZE,
    DEFAULT_SEED,
    DIFFUSION_STEPS,
    EDGE_LOSS_WEIGHT,
    LEARNING_RATE,
    MOMENTUM,
    SEED_ENV_VAR,
    TRAIN_STEPS,
)


def available_jobs() -> int:
    return max(1, os.cpu_count() or 1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    command: Literal["generate-dataset", "train", "sample", "evaluate", "project", "check"]
    seed: int = DEFAULT_SEED
    jobs: int = Field(default_factory=available_jobs)
    out: Optional[str] = None

    # generate-dataset
    family: Optional[Literal["planar", "tree", "lobster", "cellgraph"]] = None
    counts: Optional[Tuple[int, int, int]] = None
    n: Optional[int] = None

    # train
    data: Optional[str] = None
    T: int = DIFFUSION_STEPS
    lam: float = EDGE_LOSS_WEIGHT
    lr: float = LEARNING_RATE
    momentum: float = MOMENTUM
    steps: int = TRAIN_STEPS
    batch_size: int = BATCH_SIZE

    # sample / project
    model: Optional[str] = None
    count: int = 1
    mode: Literal["constrained", "unconstrained", "rejection", "project_end"] = "constrained"
    prop: str = Field(default="none", alias="property")
    projector: Literal["uniform", "det", "stoch", "off"] = "uniform"
    efficient: bool = True
    max_attempts: Optional[int] = None
    input: Optional[str] = None

    # evaluate
    generated: Optional[str] = None
    train: Optional[str] = None
    test: Optional[str] = None
    validity: Optional[Literal["planar", "tree", "lobster", "tls_low", "tls_high"]] = None

    # check
    theorem: Literal[1, 2] = 1
    trials: int = 500

    @field_validator("jobs", "count", "T", "steps", "batch_size", "trials")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be >= 1, got {value}")
        return value

    @field_validator("counts")
    @classmethod
    def _split_sizes(cls, value: Optional[Tuple[int, int, int]]) -> Optional[Tuple[int, int, int]]:
        if value is not None and min(value) < 1:
            raise ValueError(f"split sizes must be positive, got {value}")
        return value

    @model_validator(mode="after")
    def _rejection_has_property(self) -> "RunConfig":
        if self.command == "sample" and self.mode == "rejection" and self.prop == "none":
            raise ValueError("--mode rejection needs --property")
        return self

    def require(self, *names: str) -> None:
        missing = [name for name in names if getattr(self, name) is None]
        if missing:
            raise ValueError(f"'{self.command}' needs: {', '.join('--' + m.replace('_', '-') for m in missing)}")

    def to_header(self) -> Dict[str, Any]:
        # outputs are independent of the worker count
        return self.model_dump(mode="json", by_alias=True, exclude_none=True, exclude={"jobs"})


def resolve_seed(explicit: Optional[int], file_values: Dict[str, Any]) -> int:
    """Flag, then config file, then the seed environment variable"""
    if explicit is not None:
        return explicit
    if "seed" in file_values:
        return int(file_values["seed"])
    return int(os.getenv(SEED_ENV_VAR, str(DEFAULT_SEED)))


def load_run_config(command: str, flags: Dict[str, Any],
                    config_path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Merge config-file values under explicit (non-None) flags"""
    file_values: Dict[str, Any] = {}
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as f:
            file_values = json.load(f)
        if not isinstance(file_values, dict):
            raise ValueError(f"Config file {config_path} must hold a JSON object")
    merged = dict(file_values)
    merged.update({key: value for key, value in flags.items() if value is not None})
    merged["command"] = command
    merged["seed"] = resolve_seed(flags.get("seed"), file_values)
    return RunConfig(**merged)
