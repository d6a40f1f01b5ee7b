"""Reproducible autoscaling benchmark.

Workload generators, a calibrated replica-scaling MDP, rule-based and
tabular-learning controllers, a line-delimited agent wire protocol, and a
multi-seed evaluation harness with derived reports.
"""

from .workload import (WorkloadKind, WorkloadSpec, Trace, default_spec,
                       generate_trace, write_trace_csv, WORKLOAD_NAMES)
from .simenv import (ACTIONS, CalibrationParams, RewardParams, Observation,
                     StepOutcome, EnvConfig, ScalingEnv, ViolationCounting,
                     EpisodeOverError, cpu_util, p95_latency, error_rate,
                     memory_mb, apply_action, reward, observation_from_list,
                     default_env_config, load_env_config, config_hash)
from .policies import (PolicyKind, HpaConfig, HpaPolicy, RandomPolicy,
                       QTableConfig, QTable, QPolicy, hpa_target,
                       target_to_delta, map_box_action, qlearn_train,
                       cpu_bucket, BOX_BIN_EDGES)
from .evalharness import (DEFAULT_SEEDS, EvalProtocol, PolicySpec,
                          EpisodeMetrics, AggregateCell, baseline_policies,
                          run_episode, run_grid, aggregate, composite_scores,
                          rank_matrix, pareto_front, transfer_report,
                          build_report, write_report_csvs,
                          write_results_jsonl, read_results_jsonl)

__version__ = "0.1.0"
