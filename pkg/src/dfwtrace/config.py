"""JSON run configuration with strict validation."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .algorithms import RunConfig
from .datasets import PartitionSpec, SyntheticSpec
from .fw import FwConfig
from .schedules import KSchedule


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScheduleModel(_Strict):
    kind: Literal["constant", "log", "theorem-linear", "theorem-log", "exact"]
    K: int = Field(1, ge=1)
    coeff: float = Field(1.0, ge=0)
    L_est: Optional[float] = Field(None, gt=0)
    delta: float = Field(1.0, gt=0)
    CF_est: Optional[float] = Field(None, gt=0)
    beta: Optional[float] = Field(None, gt=0, lt=1)
    K_floor: int = Field(1, ge=1)
    tol: float = Field(1e-12, gt=0, lt=1)
    max_iters: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _beta_for_log(self):
        if self.kind == "theorem-log" and self.beta is None:
            raise ValueError("theorem-log needs beta")
        return self

    def build(self) -> KSchedule:
        return KSchedule(**self.model_dump())


class PartitionModel(_Strict):
    strategy: Literal["uniform-random", "contiguous", "label-sorted", "replicated"] = "uniform-random"
    seed: int = 0


class SyntheticModel(_Strict):
    n: int = Field(ge=1)
    d: int = Field(ge=1)
    m: int = Field(ge=1)
    rank: int = Field(10, ge=1)
    trace_norm: float = Field(1.0, gt=0)
    seed: int = 0
    n_test: Optional[int] = Field(None, ge=1)


class RunFile(_Strict):
    """On-disk run description. ``data`` is resolved against the file's directory."""

    data: str
    algorithm: Literal["dfw-trace", "naive-dfw", "sva", "fw"]
    task: Literal["mtls", "mlr"]
    mu: float = Field(gt=0)
    epochs: int = Field(ge=1)
    workers: int = Field(1, ge=1)
    schedule: Optional[ScheduleModel] = None
    step: Literal["default", "linesearch"] = "default"
    seed: int = Field(0, ge=0)
    partition: PartitionModel = PartitionModel()
    transport: Literal["inprocess", "tcp"] = "inprocess"
    listen: str = "127.0.0.1:0"
    warm_start: bool = False
    record_spectrum: bool = False
    lmo_tolerance: float = Field(1e-12, gt=0, lt=1)
    lmo_max_iters: Optional[int] = Field(None, ge=1)
    synthetic: Optional[SyntheticModel] = None

    @field_validator("listen")
    @classmethod
    def _host_port(cls, value):
        host, sep, port = value.rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError("expected host:port")
        return value

    @model_validator(mode="after")
    def _consistent(self):
        if self.algorithm == "dfw-trace" and self.schedule is None:
            raise ValueError("dfw-trace needs a schedule")
        if self.algorithm != "dfw-trace" and self.schedule is not None:
            raise ValueError(f"schedule is only meaningful for dfw-trace, not {self.algorithm}")
        if self.step == "linesearch" and self.task == "mlr":
            raise ValueError("mlr has no closed-form line search; use step 'default'")
        if self.partition.strategy == "label-sorted" and self.task != "mlr":
            raise ValueError("label-sorted partitions need a classification task")
        return self

    def run_config(self) -> RunConfig:
        return RunConfig(
            algorithm=self.algorithm,
            task=self.task,
            mu=self.mu,
            T=self.epochs,
            N=self.workers,
            schedule=self.schedule.build() if self.schedule else None,
            step_rule=self.step,
            base_seed=self.seed,
            warm_start=self.warm_start,
            lmo_tolerance=self.lmo_tolerance,
            lmo_max_iters=self.lmo_max_iters,
            record_spectrum=self.record_spectrum,
        )

    def fw_config(self) -> FwConfig:
        return FwConfig(
            mu=self.mu,
            T=self.epochs,
            step_rule=self.step,
            lmo_tolerance=self.lmo_tolerance,
            lmo_max_iters=self.lmo_max_iters,
            seed=self.seed,
            record_spectrum=self.record_spectrum,
        )

    def partition_spec(self) -> PartitionSpec:
        return PartitionSpec(self.partition.strategy, self.workers, self.partition.seed)

    def synthetic_spec(self) -> Optional[SyntheticSpec]:
        if self.synthetic is None:
            return None
        return SyntheticSpec(task=self.task, **self.synthetic.model_dump())


def _line_of(text, key):
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return None


def parse_run_config(text: str, source: str = "<config>") -> RunFile:
    """Parse and validate a run config; errors name the line and the field."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        return RunFile.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            path = ".".join(str(p) for p in err["loc"]) or "<root>"
            keys = [p for p in err["loc"] if isinstance(p, str)]
            lineno = _line_of(text, keys[-1]) if keys else None
            where = f"{source}:{lineno}" if lineno else source
            lines.append(f"{where}: {path}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from None


def load_run_config(path) -> RunFile:
    path = Path(path)
    cfg = parse_run_config(path.read_text(), str(path))
    data = Path(cfg.data)
    if not data.is_absolute():
        cfg = cfg.model_copy(update={"data": str((path.parent / data).resolve())})
    return cfg
