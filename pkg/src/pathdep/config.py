"""Experiment configuration: YAML file, strict schema, stable hash."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .path_core import NODE_TOL

__all__ = [
    "SCHEMA_VERSION",
    "SUITES",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "config_hash",
]

SCHEMA_VERSION = 1
SUITES = ("canonical", "mp", "generator", "maf", "tightness", "continuity")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class JumpAtom(_Strict):
    y: list[float]
    mass: float = Field(gt=0)

    @field_validator("y")
    @classmethod
    def _nonzero(cls, v):
        if not v or all(x == 0.0 for x in v):
            raise ValueError("jump atoms must be nonzero")
        return v


class ModelBlock(_Strict):
    dim: int = Field(1, ge=1)
    horizon: float = Field(gt=0)
    dt: float = Field(gt=0)
    preset: str = "constant"
    params: dict = Field(default_factory=dict)
    jumps: list[JumpAtom] = Field(default_factory=list)

    @model_validator(mode="after")
    def _grid(self):
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > NODE_TOL * max(1.0, steps):
            raise ValueError(f"dt={self.dt} does not divide horizon={self.horizon}")
        for j, atom in enumerate(self.jumps):
            if len(atom.y) != self.dim:
                raise ValueError(f"jumps.{j}.y has length {len(atom.y)}, expected dim={self.dim}")
        return self


class RunBlock(_Strict):
    s: float = Field(0.0, ge=0)
    initial_path: str | None = None
    x0: list[float] | None = None
    n_paths: int = Field(ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    batch_size: int = Field(4096, ge=1)


class CanonicalBlock(_Strict):
    t: float | None = None
    n_outer: int = Field(2000, ge=2)
    n_inner: int = Field(2000, ge=2)
    pairs: int = Field(4, ge=1)
    scale: float = Field(1.0, gt=0)


class GeneratorBlock(_Strict):
    times: list[float] = Field(default_factory=lambda: [0.5, 1.0])
    theta: list[float] | None = None
    tolerance: float = Field(1e-12, ge=0)


class MafBlock(_Strict):
    t: float = 0.0
    u: float | None = None
    max_level: int | None = Field(None, ge=0)
    delta_schedule: list[int] = Field(default_factory=lambda: [64, 32, 16])
    n_paths: int | None = Field(None, ge=2)


class TightnessBlock(_Strict):
    N: float = Field(1.0, gt=0)
    epsilon: float = Field(0.05, gt=0, lt=1)
    alphas: list[float] = Field(default_factory=lambda: [0.5])
    levels: int = Field(5, ge=1)
    n_paths: int | None = Field(None, ge=1)
    K_cap: float = Field(2.0**10, gt=0)


class ContinuityBlock(_Strict):
    levels: int = Field(6, ge=1)
    kind: Literal["value", "time"] = "value"
    scenario_file: str | None = None
    tolerance: float = Field(0.05, ge=0)
    n_paths: int | None = Field(None, ge=2)


class VerifyBlock(_Strict):
    suites: list[str] = Field(default_factory=lambda: ["mp"])
    z_crit: float = Field(3.0, gt=0)
    bonferroni: bool = True
    thetas: list[list[float]] = Field(default_factory=lambda: [[1.0], [-1.0], [2.0], [-2.0]])
    times: list[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    bank_size: int = Field(8, ge=1)
    bank_scale: float = Field(0.5, gt=0)
    replicates: int = Field(0, ge=0)
    sabotage: bool = False
    canonical: CanonicalBlock = Field(default_factory=CanonicalBlock)
    generator: GeneratorBlock = Field(default_factory=GeneratorBlock)
    maf: MafBlock = Field(default_factory=MafBlock)
    tightness: TightnessBlock = Field(default_factory=TightnessBlock)
    continuity: ContinuityBlock = Field(default_factory=ContinuityBlock)

    @field_validator("suites")
    @classmethod
    def _known(cls, v):
        bad = [s for s in v if s not in SUITES]
        if bad:
            raise ValueError(f"unknown suite(s) {bad}; choose from {list(SUITES)}")
        return v


class OutputBlock(_Strict):
    directory: str = "out"
    formats: list[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"])


class ExperimentConfig(_Strict):
    schema_version: Literal[1]
    model: ModelBlock
    run: RunBlock
    verify: VerifyBlock = Field(default_factory=VerifyBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def _run_on_grid(self):
        k = self.run.s / self.model.dt
        if abs(k - round(k)) > NODE_TOL * max(1.0, k) or self.run.s > self.model.horizon + NODE_TOL:
            raise ValueError(f"run.s={self.run.s} is not a grid node of [0, {self.model.horizon}]")
        if self.run.x0 is not None and len(self.run.x0) != self.model.dim:
            raise ValueError(f"run.x0 has length {len(self.run.x0)}, expected dim={self.model.dim}")
        return self


def _field_path(err: dict) -> str:
    loc = ".".join(str(p) for p in err["loc"])
    return loc or "<root>"


def parse_config(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a config mapping; file references are resolved against ``base_dir``."""
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        msgs = [f"{_field_path(e)}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("; ".join(msgs)) from None
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for field, ref in (("run.initial_path", cfg.run.initial_path),
                       ("verify.continuity.scenario_file", cfg.verify.continuity.scenario_file)):
        if ref is not None and not (base / ref).is_file():
            raise ConfigError(f"{field}: file {ref!r} does not exist")
    return cfg


def load_config(path) -> tuple[ExperimentConfig, Path]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: not valid YAML: {exc}") from None
    return parse_config(data, path.parent), path.parent


def _file_digest(base: Path, ref: str | None):
    if ref is None:
        return None
    return hashlib.sha256((base / ref).read_bytes()).hexdigest()


def config_hash(cfg: ExperimentConfig, base_dir: Path | None = None) -> str:
    """SHA-256 of the canonical JSON form, plus the contents of referenced files.

    The output directory is excluded: it does not change any result.
    """
    data = cfg.model_dump(mode="json")
    data.pop("output", None)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    data["files"] = {
        "initial_path": _file_digest(base, cfg.run.initial_path),
        "scenario_file": _file_digest(base, cfg.verify.continuity.scenario_file),
    }
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def steps(cfg: ExperimentConfig) -> int:
    return int(round(cfg.model.horizon / cfg.model.dt))
