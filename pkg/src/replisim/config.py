"""Experiment configuration (JSON) and its validation."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .cluster import ClusterConfig
from .metrics import DEFAULT_P_GRID
from .policy import DEFAULT_BINS, make_schedule
from .workload import DEFAULT_LOGIN_PROFILE, DEFAULT_SUBMIT_PROFILE, WorkloadConfig


class ConfigError(ValueError):
    pass


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WorkloadSettings(_Model):
    days: float = Field(14, gt=0)
    task_count: int = Field(14000, ge=0)
    workflow_fraction: float = Field(0.1, ge=0, le=1)
    workflow_template: Literal["eight_task", "montage_like", "file"] = "eight_task"
    template_params: dict[str, str] = Field(default_factory=dict)
    login_profile: list[float] = Field(default_factory=lambda: list(DEFAULT_LOGIN_PROFILE),
                                       min_length=24, max_length=24)
    session_median_minutes: float = Field(60.0, gt=0)
    session_sigma: float = Field(0.8, ge=0)
    submit_profile: list[float] = Field(default_factory=lambda: list(DEFAULT_SUBMIT_PROFILE),
                                        min_length=24, max_length=24)
    duration_median_minutes: float = Field(30.0, gt=0)
    duration_sigma: float = Field(1.0, ge=0)
    start_time: int = 0

    @field_validator("login_profile", "submit_profile")
    @classmethod
    def _non_negative(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("profile values must be >= 0")
        return v


class ClusterSettings(_Model):
    resource_count: int = Field(200, ge=1)
    power_active: float = Field(100, ge=0)
    power_idle: float = Field(40, ge=0)
    # optional [active, idle] pairs cycled over resources; overrides the scalars
    power_profiles: Optional[list[tuple[float, float]]] = None
    reboot_enabled: bool = True
    reboot_hour: int = Field(3, ge=0, le=23)
    reboot_minutes: int = Field(10, ge=0)
    xi: Optional[float] = Field(None, gt=0)
    scheduling_latency: int = Field(0, ge=0)
    drain_hours: int = Field(48, ge=0)
    horizon: Optional[int] = None


class EpsilonSettings(_Model):
    variant: Literal["constant", "initial_high", "drift_window"] = "initial_high"
    epsilon: float = Field(0.1, ge=0, le=1)
    epsilon1: float = Field(0.5, ge=0, le=1)
    epsilon2: float = Field(0.05, ge=0, le=1)
    switch_after: int = Field(1000, ge=0)
    window: int = Field(100, ge=1)
    threshold: float = Field(0.5, ge=0)
    boosted: float = Field(0.5, ge=0, le=1)
    base: float = Field(0.05, ge=0, le=1)

    def build(self):
        if self.variant == "constant":
            return make_schedule("constant", epsilon=self.epsilon)
        if self.variant == "initial_high":
            return make_schedule("initial_high", epsilon1=self.epsilon1, epsilon2=self.epsilon2,
                                 switch_after=self.switch_after)
        return make_schedule("drift_window", window=self.window, threshold=self.threshold,
                             boosted=self.boosted, base=self.base)


class ExperimentConfig(_Model):
    workload: WorkloadSettings = Field(default_factory=WorkloadSettings)
    cluster: ClusterSettings = Field(default_factory=ClusterSettings)
    workload_file: Optional[str] = None
    interactive_trace: Optional[str] = None
    policy: str = "single"
    phi: float = Field(0.1, ge=0)
    P_grid: list[float] = Field(default_factory=lambda: list(DEFAULT_P_GRID), min_length=1)
    balancing: Literal["balanced", "current"] = "balanced"
    max_replicas: int = Field(10, ge=1, le=10)
    epsilon: EpsilonSettings = Field(default_factory=EpsilonSettings)
    rl_P: float = Field(1.0, gt=0)
    rl_bins: int = Field(DEFAULT_BINS, ge=1)
    qtable_in: Optional[str] = None
    seed: int = 0
    out: str = "out"

    @field_validator("policy")
    @classmethod
    def _policy(cls, v):
        name, _, arg = v.partition(":")
        if name not in ("single", "fixed", "rl"):
            raise ValueError("policy must be single, fixed:N, rl or rl:N")
        if name == "single" and arg:
            raise ValueError("single takes no argument")
        if arg:
            try:
                n = int(arg)
            except ValueError:
                raise ValueError(f"replica count {arg!r} is not an integer") from None
            if not 1 <= n <= 10:
                raise ValueError("replica count must be in 1..10")
        return v

    def workload_config(self, seed: int) -> WorkloadConfig:
        w = self.workload
        return WorkloadConfig(
            resource_count=self.cluster.resource_count, days=w.days, task_count=w.task_count,
            workflow_fraction=w.workflow_fraction, workflow_template=w.workflow_template,
            template_params=dict(w.template_params), login_profile=tuple(w.login_profile),
            session_median_minutes=w.session_median_minutes, session_sigma=w.session_sigma,
            submit_profile=tuple(w.submit_profile),
            duration_median_minutes=w.duration_median_minutes, duration_sigma=w.duration_sigma,
            start_time=w.start_time, seed=seed,
        )

    def cluster_config(self) -> ClusterConfig:
        c = self.cluster
        profiles = c.power_profiles or [(c.power_active, c.power_idle)]
        horizon = c.horizon
        if horizon is None and self.workload_file is None:
            horizon = self.workload.start_time + int(round(self.workload.days * 86400)) \
                + c.drain_hours * 3600
        return ClusterConfig(
            resource_count=c.resource_count, power_profiles=tuple(tuple(p) for p in profiles),
            reboot_enabled=c.reboot_enabled, reboot_hour=c.reboot_hour,
            reboot_minutes=c.reboot_minutes, xi=c.xi, phi=self.phi, balancing=self.balancing,
            rl_P=self.rl_P, rl_bins=self.rl_bins, scheduling_latency=c.scheduling_latency,
            start_time=self.workload.start_time, horizon=horizon, drain_hours=c.drain_hours,
        )

    def digest(self) -> str:
        """Short hash of everything that affects results (``out`` excluded)."""
        payload = self.model_dump(mode="json", exclude={"out"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def format_validation_error(err: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"  field {loc}: {e['msg']}")
    return "\n".join(lines)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc, source)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))
