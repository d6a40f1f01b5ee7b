"""Seeded generators for the six benchmark traffic patterns.

Every trace is a pure function of (spec, seed, steps): regenerating with the
same inputs yields an element-wise identical request-rate series on any host.
Randomness comes from numpy's PCG64 bit generator, explicitly seeded through
a SeedSequence, one independent stream per trace.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import IO

import numpy as np


class WorkloadKind(str, enum.Enum):
    CONSTANT = "constant"
    PERIODIC = "periodic"
    VARIABLE = "variable"
    BURSTY = "bursty"
    RAMP = "ramp"
    FLASH = "flash"


WORKLOAD_NAMES: tuple[str, ...] = tuple(k.value for k in WorkloadKind)

TRACE_CSV_HEADER = "step,rate_req_per_min"


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of one traffic pattern. Rates are requests per minute.

    Only the fields relevant to ``kind`` are consulted:

    * constant: base_rate, noise_sd (clamped to base_rate +- 3*noise_sd)
    * periodic: min_rate, max_rate, period_steps (pure sinusoid)
    * variable: min_rate, max_rate, walk_step (reflected random walk)
    * bursty:   base_rate, min_rate, max_rate, spike_rate, spike_decay_steps
    * ramp:     ramp_start, ramp_end, noise_sd
    * flash:    base_rate, flash_multiplier, flash_start, flash_duration
    """

    kind: WorkloadKind
    base_rate: float = 100.0
    noise_sd: float = 0.0
    min_rate: float = 0.0
    max_rate: float = 0.0
    period_steps: int = 40
    walk_step: int = 15
    spike_rate: float = 0.05
    spike_decay_steps: int = 4
    flash_multiplier: float = 3.0
    flash_start: int = 60
    flash_duration: int = 120
    ramp_start: float = 50.0
    ramp_end: float = 250.0
    rate_floor: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", WorkloadKind(self.kind))
        for name in ("base_rate", "min_rate", "max_rate", "ramp_start",
                     "ramp_end", "rate_floor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.period_steps < 2:
            raise ValueError(f"period_steps must be >= 2, got {self.period_steps}")
        if self.min_rate > self.max_rate:
            raise ValueError(
                f"min_rate ({self.min_rate}) must not exceed max_rate ({self.max_rate})")
        if self.walk_step < 1:
            raise ValueError(f"walk_step must be >= 1, got {self.walk_step}")
        if self.spike_rate < 0:
            raise ValueError(f"spike_rate must be >= 0, got {self.spike_rate}")
        if self.spike_decay_steps < 1:
            raise ValueError(
                f"spike_decay_steps must be >= 1, got {self.spike_decay_steps}")
        if self.flash_multiplier <= 0:
            raise ValueError(
                f"flash_multiplier must be > 0, got {self.flash_multiplier}")
        if self.flash_start < 0 or self.flash_duration < 0:
            raise ValueError("flash_start and flash_duration must be >= 0")


def default_spec(kind: WorkloadKind | str) -> WorkloadSpec:
    """The stock parameterization of each named pattern."""
    kind = WorkloadKind(kind)
    if kind is WorkloadKind.CONSTANT:
        # 100 +- 10 envelope; the stddev makes +-10 a 3-sigma band.
        return WorkloadSpec(kind, base_rate=100.0, noise_sd=10.0 / 3.0)
    if kind is WorkloadKind.PERIODIC:
        return WorkloadSpec(kind, min_rate=50.0, max_rate=200.0, period_steps=40)
    if kind is WorkloadKind.VARIABLE:
        return WorkloadSpec(kind, min_rate=30.0, max_rate=250.0, walk_step=15)
    if kind is WorkloadKind.BURSTY:
        return WorkloadSpec(kind, base_rate=100.0, min_rate=50.0, max_rate=300.0,
                            spike_rate=0.05, spike_decay_steps=4)
    if kind is WorkloadKind.RAMP:
        return WorkloadSpec(kind, ramp_start=50.0, ramp_end=250.0, noise_sd=0.0)
    return WorkloadSpec(kind, base_rate=80.0, flash_multiplier=3.0,
                        flash_start=60, flash_duration=120)


@dataclass(frozen=True)
class Trace:
    """A realized request-rate series: one rate per decision step."""

    spec: WorkloadSpec
    seed: int
    rates: tuple[float, ...]

    @property
    def steps(self) -> int:
        return len(self.rates)


def _trace_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def generate_trace(spec: WorkloadSpec, seed: int, steps: int) -> Trace:
    """Generate the per-step request rates for ``spec``.

    Deterministic in (spec, seed, steps). Noisy kinds (constant, variable,
    bursty) draw from a fresh PCG64 stream seeded with ``seed``; periodic,
    ramp (at noise_sd=0) and flash are noise-free and identical across seeds.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    rng = _trace_rng(seed)
    kind = spec.kind

    if kind is WorkloadKind.CONSTANT:
        rates = spec.base_rate + rng.normal(0.0, spec.noise_sd, steps)
        envelope = 3.0 * spec.noise_sd
        rates = np.clip(rates, spec.base_rate - envelope, spec.base_rate + envelope)
    elif kind is WorkloadKind.PERIODIC:
        t = np.arange(steps)
        mid = (spec.min_rate + spec.max_rate) / 2.0
        amp = (spec.max_rate - spec.min_rate) / 2.0
        rates = mid + amp * np.sin(2.0 * np.pi * t / spec.period_steps)
    elif kind is WorkloadKind.VARIABLE:
        moves = rng.integers(-spec.walk_step, spec.walk_step + 1, steps)
        rates = np.empty(steps)
        x = (spec.min_rate + spec.max_rate) / 2.0
        for i in range(steps):
            x += int(moves[i])
            # reflect at the declared bounds
            while x < spec.min_rate or x > spec.max_rate:
                if x < spec.min_rate:
                    x = 2.0 * spec.min_rate - x
                if x > spec.max_rate:
                    x = 2.0 * spec.max_rate - x
            rates[i] = x
    elif kind is WorkloadKind.BURSTY:
        rates = np.full(steps, spec.base_rate)
        arrivals = rng.poisson(spec.spike_rate, steps)
        spike = spec.max_rate - spec.base_rate
        decay = spec.spike_decay_steps
        for i in range(steps):
            for _ in range(int(arrivals[i])):
                for k in range(decay):
                    if i + k < steps:
                        rates[i + k] += spike * (1.0 - k / decay)
        rates = np.clip(rates, spec.min_rate, spec.max_rate)
    elif kind is WorkloadKind.RAMP:
        rates = np.linspace(spec.ramp_start, spec.ramp_end, steps)
        if spec.noise_sd > 0:
            rates = rates + rng.normal(0.0, spec.noise_sd, steps)
    else:  # flash
        rates = np.full(steps, spec.base_rate)
        lo = min(spec.flash_start, steps)
        hi = min(spec.flash_start + spec.flash_duration, steps)
        rates[lo:hi] = spec.flash_multiplier * spec.base_rate

    rates = np.maximum(rates, spec.rate_floor)
    return Trace(spec=spec, seed=int(seed), rates=tuple(float(r) for r in rates))


def write_trace_csv(trace: Trace, out: IO[str]) -> None:
    """Write ``step,rate_req_per_min`` rows, rates with 6 decimal places."""
    out.write(TRACE_CSV_HEADER + "\n")
    for i, rate in enumerate(trace.rates):
        out.write(f"{i},{rate:.6f}\n")
