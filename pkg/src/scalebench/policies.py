"""In-process controllers sharing one interface: reset(seed) / decide(obs).

decide() returns a replica delta in {-2, -1, 0, +1, +2}. The calibrated
threshold controller (HPA) emits an absolute replica target that is bridged
into the shared delta space, so distant targets are reached over successive
steps.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .simenv import ACTIONS, EnvConfig, Observation, ScalingEnv, config_hash
from .workload import WorkloadKind, default_spec, generate_trace

# Stream tags keeping policy randomness independent of trace randomness
# under the same episode seed.
_RANDOM_POLICY_STREAM = 1
_QLEARN_STREAM = 2

BOX_BIN_EDGES: tuple[float, ...] = (-0.6, -0.2, 0.2, 0.6)


class PolicyKind(str, enum.Enum):
    HPA = "hpa"
    RANDOM = "random"
    QLEARNING = "qlearning"
    EXTERNAL = "external"


@dataclass(frozen=True)
class HpaConfig:
    """Threshold controller settings.

    cooldown_steps suppresses scale-downs for that many steps after any
    replica change; 20 steps is the production default stabilization window
    (300 s at 15 s per step). Set 0 for a fully reactive, memoryless policy.
    """

    target_cpu: float = 70.0
    min_replicas: int = 1
    max_replicas: int = 10
    cooldown_steps: int = 20

    def __post_init__(self) -> None:
        if not 0.0 < self.target_cpu <= 100.0:
            raise ValueError(f"target_cpu must be in (0, 100], got {self.target_cpu}")
        if not 1 <= self.min_replicas <= self.max_replicas:
            raise ValueError("need 1 <= min_replicas <= max_replicas")
        if self.cooldown_steps < 0:
            raise ValueError("cooldown_steps must be >= 0")


def hpa_target(obs: Observation, cfg: HpaConfig) -> int:
    """desired = ceil(replicas * observed_cpu / target_cpu), clamped."""
    if obs.cpu == 0.0:
        return cfg.min_replicas
    desired = math.ceil(obs.replicas * obs.cpu / cfg.target_cpu)
    return min(max(desired, cfg.min_replicas), cfg.max_replicas)


def target_to_delta(current: int, target: int) -> int:
    """Bridge an absolute replica target into the shared +-2 delta space."""
    return min(max(target - current, -2), 2)


class HpaPolicy:
    """Reactive scaler toward a CPU utilization target."""

    kind = PolicyKind.HPA

    def __init__(self, cfg: HpaConfig | None = None):
        self.cfg = cfg or HpaConfig()
        self._t = 0
        self._last_change = -(10 ** 9)

    def reset(self, seed: int | None = None) -> None:
        self._t = 0
        self._last_change = -(10 ** 9)

    def decide(self, obs: Observation) -> int:
        cfg = self.cfg
        delta = target_to_delta(obs.replicas, hpa_target(obs, cfg))
        if delta < 0 and (self._t - self._last_change) < cfg.cooldown_steps:
            delta = 0
        applied = min(max(obs.replicas + delta, cfg.min_replicas), cfg.max_replicas)
        if applied != obs.replicas:
            self._last_change = self._t
        self._t += 1
        return delta


class RandomPolicy:
    """Uniform over the five deltas; deterministic given the episode seed."""

    kind = PolicyKind.RANDOM

    def __init__(self, seed: int = 0):
        self._rng = None
        self.reset(seed)

    def reset(self, seed: int | None = None) -> None:
        if seed is not None:
            self._rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence((seed, _RANDOM_POLICY_STREAM))))

    def decide(self, obs: Observation) -> int:
        return int(self._rng.integers(-2, 3))


def map_box_action(x: float) -> int:
    """Bin a continuous action in [-1, 1] onto the five deltas.

    Values outside [-1, 1] are clamped first. Bins are left-closed:
    x < -0.6 -> -2, [-0.6, -0.2) -> -1, [-0.2, 0.2) -> 0,
    [0.2, 0.6) -> +1, x >= 0.6 -> +2.
    """
    if not math.isfinite(x):
        raise ValueError(f"continuous action must be finite, got {x!r}")
    x = min(max(x, -1.0), 1.0)
    for i, edge in enumerate(BOX_BIN_EDGES):
        if x < edge:
            return i - 2
    return 2


# --------------------------------------------------------------------------
# Tabular Q-learning reference agent
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QTableConfig:
    cpu_buckets: int = 10
    learning_rate: float = 0.1
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    discount: float = 0.99
    training_steps: int = 50_000

    def __post_init__(self) -> None:
        if self.cpu_buckets < 2:
            raise ValueError(f"cpu_buckets must be >= 2, got {self.cpu_buckets}")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must be in (0, 1], got {self.discount}")
        if self.training_steps < 0:
            raise ValueError("training_steps must be >= 0")


def cpu_bucket(observed_cpu: float, buckets: int) -> int:
    return min(buckets - 1, int(observed_cpu // (100.0 / buckets)))


@dataclass
class QTable:
    """Frozen action values over (cpu bucket, replica count) states."""

    q: np.ndarray              # shape (cpu_buckets, replica_levels, 5)
    cpu_buckets: int
    replica_levels: int
    env_hash: str
    train_seed: int

    def greedy_action(self, obs: Observation) -> int:
        b = cpu_bucket(obs.cpu, self.cpu_buckets)
        r = min(max(obs.replicas, 1), self.replica_levels) - 1
        # ties resolve to the lowest action index
        return int(np.argmax(self.q[b, r])) - 2

    def save(self, path: str) -> None:
        header = {
            "cpu_buckets": self.cpu_buckets,
            "replica_levels": self.replica_levels,
            "actions": len(ACTIONS),
            "config_hash": self.env_hash,
            "train_seed": self.train_seed,
        }
        with open(path, "w", encoding="utf-8") as fp:
            fp.write(json.dumps(header) + "\n")
            for b in range(self.cpu_buckets):
                for r in range(self.replica_levels):
                    fp.write(" ".join(repr(float(v)) for v in self.q[b, r]) + "\n")

    @classmethod
    def load(cls, path: str) -> "QTable":
        with open(path, "r", encoding="utf-8") as fp:
            header = json.loads(fp.readline())
            buckets = int(header["cpu_buckets"])
            levels = int(header["replica_levels"])
            actions = int(header["actions"])
            q = np.empty((buckets, levels, actions))
            for b in range(buckets):
                for r in range(levels):
                    row = fp.readline().split()
                    if len(row) != actions:
                        raise ValueError(f"malformed Q-table row at state ({b}, {r})")
                    q[b, r] = [float(v) for v in row]
        return cls(q=q, cpu_buckets=buckets, replica_levels=levels,
                   env_hash=str(header.get("config_hash", "")),
                   train_seed=int(header.get("train_seed", 0)))


class QPolicy:
    """Greedy evaluation of a trained table; read-only, shareable."""

    kind = PolicyKind.QLEARNING

    def __init__(self, table: QTable):
        self.table = table

    def reset(self, seed: int | None = None) -> None:
        pass

    def decide(self, obs: Observation) -> int:
        return self.table.greedy_action(obs)


# Episode seeds during training advance by a fixed odd stride so they never
# collide with the small evaluation seed set.
_TRAIN_SEED_STRIDE = 1_000_003


def qlearn_train(env_cfg: EnvConfig, qcfg: QTableConfig | None = None,
                 seed: int = 42) -> QTable:
    """Train a tabular agent on the variable (random walk) workload.

    Epsilon decays linearly from epsilon_start to epsilon_final over
    training_steps. Deterministic in (env_cfg, qcfg, seed).
    """
    qcfg = qcfg or QTableConfig()
    cfg = replace(env_cfg, trace=generate_trace(
        default_spec(WorkloadKind.VARIABLE), seed, env_cfg.episode_steps))
    levels = cfg.max_replicas
    q = np.zeros((qcfg.cpu_buckets, levels, len(ACTIONS)))
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, _QLEARN_STREAM))))
    env = ScalingEnv(cfg)

    total = 0
    episode_seed = seed
    while total < qcfg.training_steps:
        obs = env.reset(episode_seed)
        episode_seed += _TRAIN_SEED_STRIDE
        state = (cpu_bucket(obs.cpu, qcfg.cpu_buckets), obs.replicas - 1)
        for _ in range(cfg.episode_steps):
            if total >= qcfg.training_steps:
                break
            frac = total / qcfg.training_steps
            epsilon = qcfg.epsilon_start + (qcfg.epsilon_final - qcfg.epsilon_start) * frac
            if rng.random() < epsilon:
                action_idx = int(rng.integers(0, len(ACTIONS)))
            else:
                action_idx = int(np.argmax(q[state[0], state[1]]))
            out = env.step(action_idx - 2)
            nxt = (cpu_bucket(out.obs.cpu, qcfg.cpu_buckets), out.obs.replicas - 1)
            target = out.reward_norm
            if not out.terminated:
                target += qcfg.discount * float(np.max(q[nxt[0], nxt[1]]))
            q[state[0], state[1], action_idx] += qcfg.learning_rate * (
                target - q[state[0], state[1], action_idx])
            state = nxt
            total += 1

    return QTable(q=q, cpu_buckets=qcfg.cpu_buckets, replica_levels=levels,
                  env_hash=config_hash(cfg), train_seed=seed)
