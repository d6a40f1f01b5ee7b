"""Replica-scaling control MDP with calibrated CPU, latency and error dynamics.

The controlled quantity is an integer replica count in [1, 10]; one decision
step covers 15 simulated seconds and an episode is 240 steps (60 minutes).
Dynamics:

    raw_cpu  = cpu_base + (rate / replicas) * cpu_slope          (percent)
    p95      = lat_base + (rate / replicas) ** lat_exp * lat_coeff
               * exp(overload_alpha * (raw_cpu - 100) / 100)  if raw_cpu > 100
    err_rate = clamp((raw_cpu - 100) / 100, 0, 1)
    mem      = clamp(mem_base + mem_slope * rate / replicas, 0, 512)

raw_cpu is kept unclamped internally so overload terms see the true load;
the observed CPU in the state vector is clamped to [0, 100]. A step violates
the SLO when p95 >= slo_p95_ms or err_rate >= slo_err. The reward is
-(c_rep * replicas + lambda * 1[violated]), min-max normalized to [-1, 0]
against the analytic bounds attained at (min_replicas, no violation) and
(max_replicas, violation).
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from .workload import (Trace, WorkloadKind, WorkloadSpec, default_spec,
                       generate_trace)

ACTIONS: tuple[int, ...] = (-2, -1, 0, 1, 2)

OBSERVATION_FIELDS: tuple[str, ...] = ("cpu", "mem", "qps", "p95", "err_rate", "replicas")

MEM_CAP_MB = 512.0


class EpisodeOverError(RuntimeError):
    """Raised when step() is called on a terminated episode."""


class ViolationCounting(str, enum.Enum):
    PER_STEP = "per_step"
    PER_SECOND = "per_second"


@dataclass(frozen=True)
class CalibrationParams:
    """Dynamics constants, tuned so a 70%-target controller scales up at
    ~100 req/min per replica and the SLO is p95 < 500 ms, error rate < 5%."""

    cpu_base: float = 5.0
    cpu_slope: float = 0.7
    lat_base: float = 50.0
    lat_coeff: float = 0.08
    lat_exp: float = 1.5
    overload_alpha: float = 2.0
    slo_p95_ms: float = 500.0
    slo_err: float = 0.05
    cost_per_replica_step: float = 0.01
    mem_base: float = 100.0
    mem_slope: float = 0.5

    def __post_init__(self) -> None:
        for name in ("cpu_base", "cpu_slope", "lat_base", "lat_coeff", "lat_exp",
                     "overload_alpha", "slo_p95_ms", "cost_per_replica_step",
                     "mem_base", "mem_slope"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 < self.slo_err < 1.0:
            raise ValueError(f"slo_err must be in (0, 1), got {self.slo_err}")


@dataclass(frozen=True)
class RewardParams:
    """Cost/penalty weights and the normalization bounds for the raw reward."""

    c_rep: float = 0.01
    penalty_lambda: float = 1.0   # config-file key: "lambda"
    r_min: float = -1.10
    r_max: float = -0.01

    def __post_init__(self) -> None:
        if self.penalty_lambda < 0:
            raise ValueError(f"lambda must be >= 0, got {self.penalty_lambda}")
        if not self.r_min < self.r_max <= 0:
            raise ValueError(
                f"reward bounds must satisfy r_min < r_max <= 0, "
                f"got r_min={self.r_min}, r_max={self.r_max}")

    @classmethod
    def analytic(cls, c_rep: float = 0.01, penalty_lambda: float = 1.0,
                 min_replicas: int = 1, max_replicas: int = 10) -> "RewardParams":
        """Bounds attained at (min_replicas, ok) and (max_replicas, violated)."""
        return cls(c_rep=c_rep, penalty_lambda=penalty_lambda,
                   r_min=-(c_rep * max_replicas + penalty_lambda),
                   r_max=-c_rep * min_replicas)


@dataclass(frozen=True)
class Observation:
    cpu: float        # observed CPU %, clamped to [0, 100]
    mem: float        # MB, in [0, 512]
    qps: float        # request rate, req/min
    p95: float        # 95th-percentile latency, ms
    err_rate: float   # fraction in [0, 1]
    replicas: int     # in [min_replicas, max_replicas]

    def as_list(self) -> list[float]:
        """The wire/array order: (cpu, mem, qps, p95, err_rate, replicas)."""
        return [self.cpu, self.mem, self.qps, self.p95, self.err_rate,
                float(self.replicas)]


def observation_from_list(values: list[float]) -> Observation:
    """Inverse of Observation.as_list(); validates length and replica range."""
    if len(values) != len(OBSERVATION_FIELDS):
        raise ValueError(
            f"observation must have {len(OBSERVATION_FIELDS)} entries, "
            f"got {len(values)}")
    cpu, mem, qps, p95, err, replicas = (float(v) for v in values)
    return Observation(cpu=cpu, mem=mem, qps=qps, p95=p95, err_rate=err,
                       replicas=int(replicas))


@dataclass(frozen=True)
class StepOutcome:
    obs: Observation
    reward_raw: float
    reward_norm: float
    step_cost: float
    slo_violated: bool
    violation_units: int
    terminated: bool


@dataclass(frozen=True)
class EnvConfig:
    calibration: CalibrationParams = field(default_factory=CalibrationParams)
    reward: RewardParams = field(default_factory=RewardParams.analytic)
    trace: Trace | None = None
    episode_steps: int = 240
    step_seconds: int = 15
    max_replicas: int = 10
    min_replicas: int = 1
    violation_counting: ViolationCounting = ViolationCounting.PER_STEP
    actuation_delay_steps: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "violation_counting",
                           ViolationCounting(self.violation_counting))
        if self.episode_steps < 1:
            raise ValueError(f"episode_steps must be >= 1, got {self.episode_steps}")
        if not 1 <= self.min_replicas <= self.max_replicas:
            raise ValueError(
                f"need 1 <= min_replicas <= max_replicas, "
                f"got {self.min_replicas}..{self.max_replicas}")
        if self.actuation_delay_steps < 0:
            raise ValueError("actuation_delay_steps must be >= 0")


def cpu_util(rate: float, replicas: int,
             cal: CalibrationParams) -> tuple[float, float]:
    """(raw_cpu, observed_cpu) for the given load.

    raw_cpu may exceed 100 under overload and feeds the latency/error terms;
    observed_cpu is the clamped value that enters the state vector.
    """
    if replicas < 1:
        raise ValueError(f"replicas must be >= 1, got {replicas}")
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    raw = cal.cpu_base + (rate / replicas) * cal.cpu_slope
    return raw, min(max(raw, 0.0), 100.0)


def p95_latency(rate: float, replicas: int, raw_cpu: float,
                cal: CalibrationParams) -> float:
    """Base latency curve with exponential degradation once raw_cpu > 100."""
    if replicas < 1:
        raise ValueError(f"replicas must be >= 1, got {replicas}")
    base = cal.lat_base + (rate / replicas) ** cal.lat_exp * cal.lat_coeff
    if raw_cpu > 100.0:
        return base * math.exp(cal.overload_alpha * (raw_cpu - 100.0) / 100.0)
    return base


def error_rate(raw_cpu: float) -> float:
    """Zero at or below capacity, then linear in the overload fraction."""
    if raw_cpu <= 100.0:
        return 0.0
    return min(1.0, (raw_cpu - 100.0) / 100.0)


def memory_mb(rate: float, replicas: int, cal: CalibrationParams) -> float:
    if replicas < 1:
        raise ValueError(f"replicas must be >= 1, got {replicas}")
    return min(max(cal.mem_base + cal.mem_slope * rate / replicas, 0.0), MEM_CAP_MB)


def apply_action(replicas: int, delta: int, min_replicas: int = 1,
                 max_replicas: int = 10) -> int:
    return min(max(replicas + delta, min_replicas), max_replicas)


def reward(replicas: int, slo_violated: bool,
           rp: RewardParams) -> tuple[float, float]:
    """(raw, normalized) reward; normalized lies in [-1, 0]."""
    raw = -(rp.c_rep * replicas + (rp.penalty_lambda if slo_violated else 0.0))
    norm = (raw - rp.r_min) / (rp.r_max - rp.r_min) - 1.0
    return raw, min(max(norm, -1.0), 0.0)


def validate_action(action: Any) -> int:
    if isinstance(action, bool) or not isinstance(action, int):
        raise ValueError(f"action must be an integer in {ACTIONS}, got {action!r}")
    if action not in ACTIONS:
        raise ValueError(f"action must be in {ACTIONS}, got {action}")
    return action


class ScalingEnv:
    """One episode at a time; all randomness flows from the reset seed.

    Instances are single-caller; run concurrent episodes on separate
    instances. ``reset(seed)`` regenerates the trace from the configured
    workload spec, so equal seeds give bit-identical trajectories.
    """

    def __init__(self, cfg: EnvConfig):
        if cfg.trace is None:
            cfg = replace(cfg, trace=generate_trace(
                default_spec("constant"), seed=0, steps=cfg.episode_steps))
        self.cfg = cfg
        self._rates: tuple[float, ...] = cfg.trace.rates
        self._replicas = cfg.min_replicas
        self._t = 0
        self._done = True
        self._pending: list[tuple[int, int]] = []  # (apply_at_step, delta)

    @property
    def replicas(self) -> int:
        return self._replicas

    @property
    def step_index(self) -> int:
        return self._t

    def reset(self, seed: int | None = None) -> Observation:
        cfg = self.cfg
        if seed is not None:
            trace = generate_trace(cfg.trace.spec, seed, cfg.episode_steps)
            self.cfg = cfg = replace(cfg, trace=trace)
        if len(cfg.trace.rates) < cfg.episode_steps:
            raise ValueError(
                f"trace has {len(cfg.trace.rates)} steps, need {cfg.episode_steps}")
        self._rates = cfg.trace.rates
        self._replicas = cfg.min_replicas
        self._t = 0
        self._done = False
        self._pending = []
        return self._observe(self._rates[0], self._replicas)

    def step(self, action: int) -> StepOutcome:
        if self._done:
            raise EpisodeOverError("episode is over; call reset() first")
        cfg = self.cfg
        delta = validate_action(action)

        if cfg.actuation_delay_steps == 0:
            self._replicas = apply_action(self._replicas, delta,
                                          cfg.min_replicas, cfg.max_replicas)
        else:
            self._pending.append((self._t + cfg.actuation_delay_steps, delta))
            due = [d for at, d in self._pending if at <= self._t]
            self._pending = [(at, d) for at, d in self._pending if at > self._t]
            for d in due:
                self._replicas = apply_action(self._replicas, d,
                                              cfg.min_replicas, cfg.max_replicas)

        rate = self._rates[self._t]
        cal = cfg.calibration
        raw_cpu, _ = cpu_util(rate, self._replicas, cal)
        p95 = p95_latency(rate, self._replicas, raw_cpu, cal)
        err = error_rate(raw_cpu)
        violated = p95 >= cal.slo_p95_ms or err >= cal.slo_err
        if not violated:
            units = 0
        elif cfg.violation_counting is ViolationCounting.PER_STEP:
            units = 1
        else:
            # per-second mode charges the whole step duration as violated
            units = math.ceil(cfg.step_seconds * 1.0)
        raw_r, norm_r = reward(self._replicas, violated, cfg.reward)

        self._t += 1
        self._done = self._t >= cfg.episode_steps
        obs = self._observe(rate, self._replicas)
        return StepOutcome(
            obs=obs,
            reward_raw=raw_r,
            reward_norm=norm_r,
            step_cost=cfg.reward.c_rep * self._replicas,
            slo_violated=violated,
            violation_units=units,
            terminated=self._done,
        )

    def _observe(self, rate: float, replicas: int) -> Observation:
        cal = self.cfg.calibration
        raw_cpu, observed = cpu_util(rate, replicas, cal)
        return Observation(
            cpu=observed,
            mem=memory_mb(rate, replicas, cal),
            qps=rate,
            p95=p95_latency(rate, replicas, raw_cpu, cal),
            err_rate=error_rate(raw_cpu),
            replicas=replicas,
        )


# --------------------------------------------------------------------------
# Configuration files: a YAML/JSON document mirroring EnvConfig field names.
# --------------------------------------------------------------------------

_REWARD_KEY_ALIASES = {"lambda": "penalty_lambda"}


def default_env_config(workload: WorkloadKind | str | WorkloadSpec = "constant",
                       seed: int = 0) -> EnvConfig:
    spec = workload if isinstance(workload, WorkloadSpec) else default_spec(workload)
    return EnvConfig(trace=generate_trace(spec, seed, 240))


def env_config_to_dict(cfg: EnvConfig) -> dict[str, Any]:
    cal = cfg.calibration
    rp = cfg.reward
    spec = cfg.trace.spec
    trace_doc: dict[str, Any] = {"kind": spec.kind.value}
    defaults = WorkloadSpec(kind=spec.kind)
    for name in ("base_rate", "noise_sd", "min_rate", "max_rate", "period_steps",
                 "walk_step", "spike_rate", "spike_decay_steps", "flash_multiplier",
                 "flash_start", "flash_duration", "ramp_start", "ramp_end",
                 "rate_floor"):
        value = getattr(spec, name)
        if value != getattr(defaults, name):
            trace_doc[name] = value
    return {
        "calibration": {
            "cpu_base": cal.cpu_base, "cpu_slope": cal.cpu_slope,
            "lat_base": cal.lat_base, "lat_coeff": cal.lat_coeff,
            "lat_exp": cal.lat_exp, "overload_alpha": cal.overload_alpha,
            "slo_p95_ms": cal.slo_p95_ms, "slo_err": cal.slo_err,
            "cost_per_replica_step": cal.cost_per_replica_step,
            "mem_base": cal.mem_base, "mem_slope": cal.mem_slope,
        },
        "reward": {
            "c_rep": rp.c_rep, "lambda": rp.penalty_lambda,
            "r_min": rp.r_min, "r_max": rp.r_max,
        },
        "trace": trace_doc,
        "episode_steps": cfg.episode_steps,
        "step_seconds": cfg.step_seconds,
        "max_replicas": cfg.max_replicas,
        "min_replicas": cfg.min_replicas,
        "violation_counting": cfg.violation_counting.value,
        "actuation_delay_steps": cfg.actuation_delay_steps,
    }


def env_config_from_dict(doc: dict[str, Any]) -> EnvConfig:
    doc = dict(doc or {})
    cal = CalibrationParams(**doc.get("calibration", {}))
    reward_doc = {
        _REWARD_KEY_ALIASES.get(k, k): v
        for k, v in doc.get("reward", {}).items()
    }
    trace_doc = dict(doc.get("trace", {"kind": "constant"}))
    kind = WorkloadKind(trace_doc.pop("kind", "constant"))
    spec_defaults = default_spec(kind)
    spec_fields = {name: trace_doc.pop(name)
                   for name in list(trace_doc)
                   if hasattr(spec_defaults, name)}
    if trace_doc:
        raise ValueError(f"unknown trace keys: {sorted(trace_doc)}")
    spec = replace(spec_defaults, **spec_fields)
    episode_steps = int(doc.get("episode_steps", 240))
    min_replicas = int(doc.get("min_replicas", 1))
    max_replicas = int(doc.get("max_replicas", 10))
    if reward_doc and {"r_min", "r_max"} - reward_doc.keys():
        reward_doc = dict(reward_doc)
        rp = RewardParams.analytic(
            c_rep=reward_doc.get("c_rep", 0.01),
            penalty_lambda=reward_doc.get("penalty_lambda", 1.0),
            min_replicas=min_replicas, max_replicas=max_replicas)
        reward_doc.setdefault("r_min", rp.r_min)
        reward_doc.setdefault("r_max", rp.r_max)
        rp = RewardParams(**reward_doc)
    elif reward_doc:
        rp = RewardParams(**reward_doc)
    else:
        rp = RewardParams.analytic(min_replicas=min_replicas,
                                   max_replicas=max_replicas)
    return EnvConfig(
        calibration=cal,
        reward=rp,
        trace=generate_trace(spec, seed=0, steps=episode_steps),
        episode_steps=episode_steps,
        step_seconds=int(doc.get("step_seconds", 15)),
        max_replicas=max_replicas,
        min_replicas=min_replicas,
        violation_counting=ViolationCounting(doc.get("violation_counting", "per_step")),
        actuation_delay_steps=int(doc.get("actuation_delay_steps", 0)),
    )


def load_env_config(path: str) -> EnvConfig:
    """Read a YAML (or JSON) environment configuration file."""
    with open(path, "r", encoding="utf-8") as fp:
        doc = yaml.safe_load(fp)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ValueError(f"config file must hold a mapping, got {type(doc).__name__}")
    return env_config_from_dict(doc)


def config_hash(cfg: EnvConfig) -> str:
    """Stable short digest of the full environment configuration."""
    doc = env_config_to_dict(cfg)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
