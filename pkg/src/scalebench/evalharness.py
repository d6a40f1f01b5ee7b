"""Grid evaluation: policies x workloads x seeds, with derived analyses.

Every episode is a pure function of (policy spec, workload, seed), so grid
results are independent of execution order and parallelism; records are
sorted before any file is written. Aggregation reports mean, sample std and
a seeded percentile-bootstrap 95% CI per cell. On top of the aggregates the
harness computes the composite cost/violations score matrix, the viability-
filtered rank matrix, the (cost, violations) Pareto front, and the
distribution-shift (transfer) summary.
"""

from __future__ import annotations

import json
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .policies import (HpaConfig, HpaPolicy, PolicyKind, QPolicy, QTable,
                       RandomPolicy)
from .simenv import EnvConfig, ScalingEnv, default_env_config
from .workload import WORKLOAD_NAMES, WorkloadKind, default_spec, generate_trace

DEFAULT_SEEDS: tuple[int, ...] = (42, 123, 456, 789, 1024)

METRICS: tuple[str, ...] = ("total_cost_usd", "total_violations", "mean_replicas")

RESULT_FIELDS: tuple[str, ...] = ("policy", "workload", "seed", "total_cost_usd",
                                  "total_violations", "mean_replicas", "steps",
                                  "failed")

_BOOTSTRAP_RESAMPLES = 1000
_BOOTSTRAP_TAG = 0xB007


@dataclass(frozen=True)
class PolicySpec:
    """A named policy entry in the evaluation grid."""

    policy_id: str
    kind: PolicyKind
    hpa: HpaConfig = field(default_factory=HpaConfig)
    qtable: QTable | None = None
    endpoint: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.QLEARNING and self.qtable is None:
            raise ValueError(f"policy {self.policy_id!r} needs a trained Q-table")
        if self.kind is PolicyKind.EXTERNAL and not self.endpoint:
            raise ValueError(f"policy {self.policy_id!r} needs an endpoint")


def baseline_policies(hpa: HpaConfig | None = None) -> list[PolicySpec]:
    return [
        PolicySpec("hpa", PolicyKind.HPA, hpa=hpa or HpaConfig()),
        PolicySpec("random", PolicyKind.RANDOM),
    ]


@dataclass(frozen=True)
class EvalProtocol:
    policies: tuple[PolicySpec, ...] = ()
    workloads: tuple[str, ...] = WORKLOAD_NAMES
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    episode_steps: int = 240

    def __post_init__(self) -> None:
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "workloads",
                           tuple(WorkloadKind(w).value for w in self.workloads))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        ids = [p.policy_id for p in self.policies]
        if len(set(ids)) != len(ids):
            raise ValueError(f"policy ids must be distinct, got {ids}")


@dataclass(frozen=True)
class EpisodeMetrics:
    policy: str
    workload: str
    seed: int
    total_cost_usd: float
    total_violations: int
    mean_replicas: float
    steps: int
    failed: bool = False

    def to_json(self) -> str:
        return json.dumps({name: getattr(self, name) for name in RESULT_FIELDS})

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "EpisodeMetrics":
        return cls(policy=str(doc["policy"]), workload=str(doc["workload"]),
                   seed=int(doc["seed"]),
                   total_cost_usd=float(doc["total_cost_usd"]),
                   total_violations=int(doc["total_violations"]),
                   mean_replicas=float(doc["mean_replicas"]),
                   steps=int(doc["steps"]), failed=bool(doc.get("failed", False)))


def make_policy(spec: PolicySpec):
    if spec.kind is PolicyKind.HPA:
        return HpaPolicy(spec.hpa)
    if spec.kind is PolicyKind.RANDOM:
        return RandomPolicy()
    if spec.kind is PolicyKind.QLEARNING:
        return QPolicy(spec.qtable)
    raise ValueError(f"{spec.kind} policies do not run in-process")


def run_episode(policy, env: ScalingEnv, seed: int) -> tuple[float, int, float, int]:
    """(total_cost, total_violations, mean_replicas, steps) for one episode.

    The episode cost is exact: c_rep times the integer sum of per-step
    replica counts, not an accumulation of per-step floats.
    """
    obs = env.reset(seed)
    policy.reset(seed)
    violations = 0
    replica_steps = 0
    steps = 0
    while True:
        out = env.step(policy.decide(obs))
        obs = out.obs
        violations += out.violation_units
        replica_steps += out.obs.replicas
        steps += 1
        if out.terminated:
            break
    total_cost = env.cfg.reward.c_rep * replica_steps
    return total_cost, violations, replica_steps / steps, steps


def _run_one(spec: PolicySpec, workload: str, seed: int,
             env_cfg: EnvConfig) -> EpisodeMetrics:
    cfg = replace(env_cfg, trace=generate_trace(
        default_spec(workload), seed, env_cfg.episode_steps))
    cost, violations, mean_replicas, steps = run_episode(
        make_policy(spec), ScalingEnv(cfg), seed)
    return EpisodeMetrics(policy=spec.policy_id, workload=workload, seed=seed,
                          total_cost_usd=cost, total_violations=violations,
                          mean_replicas=mean_replicas, steps=steps)


def run_grid(protocol: EvalProtocol, env_cfg: EnvConfig | None = None,
             parallel: int | None = None,
             agent_timeout: float = 30.0) -> list[EpisodeMetrics]:
    """Run the full grid; exactly |policies| x |workloads| x |seeds| records.

    Episode seeds double as workload seeds. External policies run their plan
    over their own connection; unreachable agents yield failed records.
    """
    env_cfg = env_cfg or default_env_config()
    if env_cfg.episode_steps != protocol.episode_steps:
        env_cfg = replace(env_cfg, episode_steps=protocol.episode_steps,
                          trace=generate_trace(env_cfg.trace.spec, 0,
                                               protocol.episode_steps))
    plan = [(w, s) for w in protocol.workloads for s in protocol.seeds]
    records: list[EpisodeMetrics] = []
    workers = parallel or os.cpu_count() or 1

    in_process = [p for p in protocol.policies if p.kind is not PolicyKind.EXTERNAL]
    external = [p for p in protocol.policies if p.kind is PolicyKind.EXTERNAL]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_one, spec, workload, seed, env_cfg)
                   for spec in in_process for workload, seed in plan]
        ext_futures = [pool.submit(_drive_external, spec, plan, env_cfg,
                                   agent_timeout)
                       for spec in external]
        for fut in futures:
            records.append(fut.result())
        for fut in ext_futures:
            records.extend(fut.result())

    records.sort(key=lambda r: (r.policy, WORKLOAD_NAMES.index(r.workload), r.seed))
    return records


def _drive_external(spec: PolicySpec, plan, env_cfg, timeout):
    from .protocol import drive
    return drive(spec.endpoint, plan, env_cfg, policy_id=spec.policy_id,
                 timeout=timeout)


# --------------------------------------------------------------------------
# Results files (JSON lines)
# --------------------------------------------------------------------------


def write_results_jsonl(records: Iterable[EpisodeMetrics], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        for record in records:
            fp.write(record.to_json() + "\n")


def read_results_jsonl(path: str) -> list[EpisodeMetrics]:
    records = []
    with open(path, "r", encoding="utf-8") as fp:
        for line in fp:
            line = line.strip()
            if line:
                records.append(EpisodeMetrics.from_dict(json.loads(line)))
    return records


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregateCell:
    mean: float
    std: float       # sample std, n-1 denominator
    ci_low: float    # 95% percentile bootstrap
    ci_high: float
    n: int


def _bootstrap_rng(policy: str, workload: str, metric: str) -> np.random.Generator:
    entropy = (_BOOTSTRAP_TAG,
               zlib.crc32(policy.encode("utf-8")),
               zlib.crc32(workload.encode("utf-8")),
               METRICS.index(metric))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _cell(values: Sequence[float], policy: str, workload: str,
          metric: str) -> AggregateCell:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    if arr.size == 1 or np.all(arr == arr[0]):
        return AggregateCell(mean, std, mean, mean, arr.size)
    rng = _bootstrap_rng(policy, workload, metric)
    resamples = rng.choice(arr, size=(_BOOTSTRAP_RESAMPLES, arr.size), replace=True)
    means = resamples.mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return AggregateCell(mean, std, float(lo), float(hi), arr.size)


def aggregate(records: Iterable[EpisodeMetrics],
              ) -> dict[tuple[str, str], dict[str, AggregateCell]]:
    """Per-(policy, workload) cells for all three metrics, failures excluded."""
    grouped: dict[tuple[str, str], list[EpisodeMetrics]] = {}
    for record in records:
        if record.failed:
            continue
        grouped.setdefault((record.policy, record.workload), []).append(record)
    cells: dict[tuple[str, str], dict[str, AggregateCell]] = {}
    for key in sorted(grouped, key=lambda k: (k[0], WORKLOAD_NAMES.index(k[1]))):
        # fix the in-group order so bootstrap CIs are permutation-invariant
        group = sorted(grouped[key], key=lambda r: r.seed)
        cells[key] = {
            metric: _cell([getattr(r, metric) for r in group], key[0], key[1],
                          metric)
            for metric in METRICS
        }
    return cells


def missing_cells(records: Iterable[EpisodeMetrics]) -> list[tuple[str, str]]:
    """(policy, workload) pairs that appear only as failed episodes."""
    seen: dict[tuple[str, str], bool] = {}
    for record in records:
        key = (record.policy, record.workload)
        seen[key] = seen.get(key, False) or not record.failed
    return sorted(key for key, ok in seen.items() if not ok)


# --------------------------------------------------------------------------
# Derived analyses
# --------------------------------------------------------------------------


def _minmax(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0 for _ in values]
    return [(v - lo) / (hi - lo) for v in values]


def composite_scores(aggregates: Mapping[tuple[str, str], Mapping[str, AggregateCell]],
                     ) -> dict[tuple[str, str], float]:
    """Per-workload blend of normalized mean cost and violations, re-scaled so
    the best policy scores 0.0 and the worst 1.0; degenerate columns are all
    zero."""
    workloads = sorted({w for _, w in aggregates}, key=WORKLOAD_NAMES.index)
    scores: dict[tuple[str, str], float] = {}
    for workload in workloads:
        policies = [p for p, w in aggregates if w == workload]
        if len(policies) < 2:
            raise ValueError(
                f"composite score needs >= 2 policies on {workload!r}")
        costs = _minmax([aggregates[(p, workload)]["total_cost_usd"].mean
                         for p in policies])
        viols = _minmax([aggregates[(p, workload)]["total_violations"].mean
                         for p in policies])
        blended = _minmax([(c + v) / 2.0 for c, v in zip(costs, viols)])
        for policy, score in zip(policies, blended):
            scores[(policy, workload)] = score
    return scores


@dataclass(frozen=True)
class RankResult:
    ranks: dict[tuple[str, str], int]
    excluded: tuple[str, ...]          # non-viable policies
    max_shift: dict[str, int]          # max rank - min rank across workloads


def rank_matrix(aggregates: Mapping[tuple[str, str], Mapping[str, AggregateCell]],
                viable_threshold: float = 100.0) -> RankResult:
    """Rank viable policies per workload by mean violations, cost-tie-broken.

    A policy is non-viable when its mean violations reach the threshold on
    any workload. Exact (violations, cost) ties share the minimum rank
    (competition ranking).
    """
    if viable_threshold <= 0:
        raise ValueError(f"viable_threshold must be > 0, got {viable_threshold}")
    policies = sorted({p for p, _ in aggregates})
    workloads = sorted({w for _, w in aggregates}, key=WORKLOAD_NAMES.index)
    excluded = tuple(
        p for p in policies
        if any((p, w) in aggregates
               and aggregates[(p, w)]["total_violations"].mean >= viable_threshold
               for w in workloads))
    viable = [p for p in policies if p not in excluded]

    ranks: dict[tuple[str, str], int] = {}
    for workload in workloads:
        scored = sorted(
            ((aggregates[(p, workload)]["total_violations"].mean,
              aggregates[(p, workload)]["total_cost_usd"].mean, p)
             for p in viable if (p, workload) in aggregates))
        for position, (violations, cost, policy) in enumerate(scored):
            rank = position + 1
            if position > 0 and (violations, cost) == scored[position - 1][:2]:
                rank = ranks[(scored[position - 1][2], workload)]
            ranks[(policy, workload)] = rank

    max_shift = {}
    for policy in viable:
        values = [ranks[(policy, w)] for w in workloads if (policy, w) in ranks]
        if values:
            max_shift[policy] = max(values) - min(values)
    return RankResult(ranks=ranks, excluded=excluded, max_shift=max_shift)


def pareto_front(points: Sequence[tuple[float, float]],
                 keys: Sequence[Any] | None = None) -> list[int]:
    """Indices of non-dominated (cost, violations) points, input order kept.

    A point is dominated when another is <= in both coordinates and < in at
    least one; exact duplicates therefore survive together. When ``keys`` is
    given, repeated keys keep their first occurrence only.
    """
    if not points:
        return []
    candidates: list[int] = []
    seen: set[Any] = set()
    for i in range(len(points)):
        if keys is not None:
            if keys[i] in seen:
                continue
            seen.add(keys[i])
        candidates.append(i)

    # sweep in (cost, violations) order; a candidate survives when it beats
    # every strictly-cheaper point on violations and ties the best violations
    # at its own cost
    order = sorted(candidates, key=lambda i: (points[i][0], points[i][1]))
    front: list[int] = []
    best_cheaper = float("inf")
    i = 0
    while i < len(order):
        j = i
        cost = points[order[i]][0]
        while j < len(order) and points[order[j]][0] == cost:
            j += 1
        group = order[i:j]
        group_best = min(points[k][1] for k in group)
        if group_best < best_cheaper:
            front.extend(k for k in group if points[k][1] == group_best)
        best_cheaper = min(best_cheaper, group_best)
        i = j
    return sorted(front)


@dataclass(frozen=True)
class ShiftCell:
    cost: float
    violations: float
    d_cost: float | None           # vs the training workload
    d_violations: float | None
    cost_premium: float | None     # transfer tax vs lowest-violation policy


@dataclass(frozen=True)
class TransferRow:
    policy: str
    training_free: bool
    train_cost: float
    train_violations: float
    shifted: dict[str, ShiftCell]


TRAINING_FREE_POLICIES = frozenset({"hpa", "random"})


def transfer_report(records: Iterable[EpisodeMetrics],
                    train_workload: str = WorkloadKind.VARIABLE.value,
                    training_free: frozenset[str] = TRAINING_FREE_POLICIES,
                    ) -> list[TransferRow]:
    """Per-policy shift deltas from the training workload, plus the cost
    premium against the lowest-violation policy on each shifted workload.
    Rule-based (training-free) policies carry no transfer tax."""
    aggregates = aggregate(records)
    policies = sorted({p for p, _ in aggregates})
    workloads = sorted({w for _, w in aggregates}, key=WORKLOAD_NAMES.index)
    if train_workload not in workloads:
        raise ValueError(
            f"no successful records on the training workload {train_workload!r}")

    best_violation_policy: dict[str, str] = {}
    for workload in workloads:
        scored = sorted((aggregates[(p, workload)]["total_violations"].mean,
                         aggregates[(p, workload)]["total_cost_usd"].mean, p)
                        for p in policies if (p, workload) in aggregates)
        best_violation_policy[workload] = scored[0][2]

    rows = []
    for policy in policies:
        if (policy, train_workload) not in aggregates:
            continue  # e.g. all train-workload episodes of this policy failed
        is_free = policy in training_free
        train_cost = aggregates[(policy, train_workload)]["total_cost_usd"].mean
        train_viol = aggregates[(policy, train_workload)]["total_violations"].mean
        shifted: dict[str, ShiftCell] = {}
        for workload in workloads:
            if workload == train_workload or (policy, workload) not in aggregates:
                continue
            cost = aggregates[(policy, workload)]["total_cost_usd"].mean
            violations = aggregates[(policy, workload)]["total_violations"].mean
            best = best_violation_policy[workload]
            premium = cost - aggregates[(best, workload)]["total_cost_usd"].mean
            shifted[workload] = ShiftCell(
                cost=cost, violations=violations,
                d_cost=None if is_free else cost - train_cost,
                d_violations=None if is_free else violations - train_viol,
                cost_premium=None if is_free else premium)
        rows.append(TransferRow(policy=policy, training_free=is_free,
                                train_cost=train_cost,
                                train_violations=train_viol, shifted=shifted))
    return rows


# --------------------------------------------------------------------------
# Report assembly and CSV export
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    aggregates: dict[tuple[str, str], dict[str, AggregateCell]]
    missing: list[tuple[str, str]]
    failed_count: int
    composite: dict[tuple[str, str], float]
    composite_undefined: tuple[str, ...]   # workloads with < 2 policies
    ranks: RankResult
    pareto: list[tuple[str, str, float, float, bool]]  # policy, workload, cost, violations, on_front
    transfer: list[TransferRow]


def build_report(records: Sequence[EpisodeMetrics],
                 viable_threshold: float = 100.0,
                 train_workload: str = WorkloadKind.VARIABLE.value) -> EvalReport:
    aggregates = aggregate(records)
    if not aggregates:
        raise ValueError("no successful records to report on")
    points = [(aggregates[key]["total_cost_usd"].mean,
               aggregates[key]["total_violations"].mean) for key in aggregates]
    keys = list(aggregates)
    front = set(pareto_front(points, keys=keys))
    pareto = [(key[0], key[1], points[i][0], points[i][1], i in front)
              for i, key in enumerate(keys)]
    workloads = {w for _, w in aggregates}
    transfer = (transfer_report(records, train_workload)
                if train_workload in workloads else [])
    undefined = tuple(sorted(
        (w for w in workloads if sum(1 for _, w2 in aggregates if w2 == w) < 2),
        key=WORKLOAD_NAMES.index))
    scorable = {key: cells for key, cells in aggregates.items()
                if key[1] not in undefined}
    return EvalReport(
        aggregates=aggregates,
        missing=missing_cells(records),
        failed_count=sum(1 for r in records if r.failed),
        composite=composite_scores(scorable) if scorable else {},
        composite_undefined=undefined,
        ranks=rank_matrix(aggregates, viable_threshold),
        pareto=pareto,
        transfer=transfer,
    )


def _ordered_axes(aggregates) -> tuple[list[str], list[str]]:
    policies = sorted({p for p, _ in aggregates})
    workloads = sorted({w for _, w in aggregates}, key=WORKLOAD_NAMES.index)
    return policies, workloads


def _write_mean_std_table(aggregates, metric: str, fmt: str, path: str) -> None:
    policies, workloads = _ordered_axes(aggregates)
    with open(path, "w", encoding="utf-8") as fp:
        fp.write("policy," + ",".join(workloads) + "\n")
        for policy in policies:
            cells = []
            for workload in workloads:
                cell = aggregates.get((policy, workload))
                if cell is None:
                    cells.append("")
                else:
                    c = cell[metric]
                    cells.append(f"{c.mean:{fmt}}±{c.std:{fmt}}")
            fp.write(policy + "," + ",".join(cells) + "\n")


def write_report_csvs(report: EvalReport, outdir: str) -> list[str]:
    """Write the report tables; returns the created file paths."""
    os.makedirs(outdir, exist_ok=True)
    aggregates = report.aggregates
    policies, workloads = _ordered_axes(aggregates)
    paths = []

    def out(name: str) -> str:
        path = os.path.join(outdir, name)
        paths.append(path)
        return path

    _write_mean_std_table(aggregates, "total_cost_usd", ".4f", out("cost_table.csv"))
    _write_mean_std_table(aggregates, "total_violations", ".1f",
                          out("violations_table.csv"))
    _write_mean_std_table(aggregates, "mean_replicas", ".2f",
                          out("replicas_table.csv"))

    with open(out("aggregates.csv"), "w", encoding="utf-8") as fp:
        fp.write("policy,workload,metric,mean,std,ci_low,ci_high,n\n")
        for (policy, workload) in aggregates:
            for metric in METRICS:
                c = aggregates[(policy, workload)][metric]
                fp.write(f"{policy},{workload},{metric},{c.mean!r},{c.std!r},"
                         f"{c.ci_low!r},{c.ci_high!r},{c.n}\n")

    with open(out("composite.csv"), "w", encoding="utf-8") as fp:
        fp.write("policy," + ",".join(workloads) + "\n")
        for policy in policies:
            row = [f"{report.composite[(policy, w)]:.4f}"
                   if (policy, w) in report.composite else ""
                   for w in workloads]
            fp.write(policy + "," + ",".join(row) + "\n")

    with open(out("rank.csv"), "w", encoding="utf-8") as fp:
        fp.write("policy,viable," + ",".join(workloads) + ",max_rank_shift\n")
        for policy in policies:
            viable = policy not in report.ranks.excluded
            row = [str(report.ranks.ranks.get((policy, w), "")) if viable else ""
                   for w in workloads]
            shift = report.ranks.max_shift.get(policy, "")
            fp.write(f"{policy},{str(viable).lower()}," + ",".join(row)
                     + f",{shift}\n")

    with open(out("pareto.csv"), "w", encoding="utf-8") as fp:
        fp.write("policy,workload,mean_cost_usd,mean_violations,on_front\n")
        for policy, workload, cost, violations, on_front in report.pareto:
            fp.write(f"{policy},{workload},{cost!r},{violations!r},"
                     f"{str(on_front).lower()}\n")

    with open(out("transfer.csv"), "w", encoding="utf-8") as fp:
        fp.write("policy,training_free,train_cost_usd,train_violations,workload,"
                 "cost_usd,violations,d_cost_usd,d_violations,"
                 "robustness_cost_premium\n")
        for row in report.transfer:
            for workload, cell in row.shifted.items():
                def opt(v):
                    return "" if v is None else repr(v)
                fp.write(f"{row.policy},{str(row.training_free).lower()},"
                         f"{row.train_cost!r},{row.train_violations!r},"
                         f"{workload},{cell.cost!r},{cell.violations!r},"
                         f"{opt(cell.d_cost)},{opt(cell.d_violations)},"
                         f"{opt(cell.cost_premium)}\n")

    return paths
