import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalebench.policies import (BOX_BIN_EDGES, HpaConfig, HpaPolicy, QPolicy,
                                 QTable, QTableConfig, RandomPolicy, cpu_bucket,
                                 hpa_target, map_box_action, qlearn_train,
                                 target_to_delta)
from scalebench.simenv import Observation, ScalingEnv, default_env_config


def obs(cpu: float, replicas: int) -> Observation:
    return Observation(cpu=cpu, mem=150.0, qps=100.0, p95=100.0, err_rate=0.0,
                       replicas=replicas)


class TestHpa:
    def test_scale_up_rounding(self):
        # ceil(2 * 105 / 70) = ceil(3.0) = 3: exact boundaries use plain ceil
        assert hpa_target(obs(105.0, 2), HpaConfig()) == 3

    def test_at_target_no_change(self):
        assert hpa_target(obs(70.0, 2), HpaConfig()) == 2

    def test_upper_clamp(self):
        assert hpa_target(obs(100.0, 8), HpaConfig()) == 10

    def test_lower_clamp(self):
        assert hpa_target(obs(5.0, 1), HpaConfig()) == 1

    def test_zero_cpu_returns_min(self):
        assert hpa_target(obs(0.0, 7), HpaConfig()) == 1

    @pytest.mark.parametrize("current", range(1, 11))
    def test_fixed_point_at_target(self, current):
        assert hpa_target(obs(70.0, current), HpaConfig()) == current

    def test_target_cpu_validation(self):
        with pytest.raises(ValueError, match="target_cpu"):
            HpaConfig(target_cpu=0.0)
        with pytest.raises(ValueError, match="target_cpu"):
            HpaConfig(target_cpu=101.0)

    def test_target_to_delta(self):
        assert target_to_delta(2, 3) == 1
        assert target_to_delta(2, 10) == 2
        assert target_to_delta(5, 5) == 0
        assert target_to_delta(8, 1) == -2

    def test_memoryless_without_cooldown(self):
        policy = HpaPolicy(HpaConfig(cooldown_steps=0))
        policy.reset(0)
        sequence = [policy.decide(obs(30.0, 4)) for _ in range(5)]
        fresh = HpaPolicy(HpaConfig(cooldown_steps=0))
        fresh.reset(0)
        assert sequence == [fresh.decide(obs(30.0, 4))] * 5

    def test_cooldown_suppresses_scale_down(self):
        policy = HpaPolicy(HpaConfig(cooldown_steps=3))
        policy.reset(0)
        assert policy.decide(obs(100.0, 2)) == 1   # change at step 0
        assert policy.decide(obs(20.0, 3)) == 0    # steps 1, 2 suppressed
        assert policy.decide(obs(20.0, 3)) == 0
        assert policy.decide(obs(20.0, 3)) < 0     # step 3: window elapsed

    def test_cooldown_never_blocks_scale_up(self):
        policy = HpaPolicy(HpaConfig(cooldown_steps=10))
        policy.reset(0)
        assert policy.decide(obs(100.0, 1)) == 1
        assert policy.decide(obs(100.0, 2)) == 1

    def test_composed_with_env_stays_in_bounds(self):
        for kind in ("bursty", "flash", "variable"):
            env = ScalingEnv(default_env_config(kind))
            policy = HpaPolicy()
            observation = env.reset(42)
            policy.reset(42)
            for _ in range(240):
                out = env.step(policy.decide(observation))
                observation = out.obs
                assert 1 <= observation.replicas <= 10


class TestRandomPolicy:
    def test_deterministic_per_seed(self):
        a = RandomPolicy(seed=42)
        b = RandomPolicy(seed=42)
        actions = [a.decide(obs(50.0, 1)) for _ in range(200)]
        assert actions == [b.decide(obs(50.0, 1)) for _ in range(200)]

    def test_support_is_the_five_deltas(self):
        policy = RandomPolicy(seed=7)
        seen = {policy.decide(obs(50.0, 1)) for _ in range(2000)}
        assert seen == {-2, -1, 0, 1, 2}

    def test_uniform_frequencies(self):
        policy = RandomPolicy(seed=42)
        draws = np.array([policy.decide(obs(50.0, 1)) for _ in range(100_000)])
        for action in (-2, -1, 0, 1, 2):
            assert 0.19 <= np.mean(draws == action) <= 0.21


class TestBoxMapper:
    def test_examples(self):
        assert map_box_action(0.0) == 0
        assert map_box_action(-1.0) == -2
        assert map_box_action(0.6) == 2
        assert map_box_action(-0.21) == -1

    def test_all_four_edges_left_closed(self):
        assert map_box_action(-0.6) == -1
        assert map_box_action(-0.2) == 0
        assert map_box_action(0.2) == 1
        assert map_box_action(0.6) == 2

    def test_clamps_out_of_range(self):
        assert map_box_action(-5.0) == -2
        assert map_box_action(5.0) == 2

    def test_rejects_non_finite(self):
        for bad in (float("nan"), float("inf"), float("-inf")):
            with pytest.raises(ValueError):
                map_box_action(bad)

    @given(st.floats(-1.0, 1.0, allow_nan=False))
    def test_matches_searchsorted_oracle(self, x):
        # independent formulation of the same left-closed bin rule
        expected = int(np.searchsorted(np.array(BOX_BIN_EDGES), x,
                                       side="right")) - 2
        assert map_box_action(x) == expected

    def test_uniform_input_uniform_output(self):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(4)))
        draws = rng.uniform(-1.0, 1.0, 100_000)
        actions = np.array([map_box_action(float(x)) for x in draws])
        for action in (-2, -1, 0, 1, 2):
            assert abs(np.mean(actions == action) - 0.2) <= 0.01


class TestQLearning:
    def test_zero_training_steps_gives_lowest_action_greedy(self):
        cfg = default_env_config("variable")
        table = qlearn_train(cfg, QTableConfig(training_steps=0), seed=1)
        assert np.all(table.q == 0.0)
        policy = QPolicy(table)
        assert policy.decide(obs(50.0, 5)) == -2  # tie resolved to index 0

    def test_training_is_deterministic(self):
        cfg = default_env_config("variable")
        qcfg = QTableConfig(training_steps=2000)
        a = qlearn_train(cfg, qcfg, seed=42)
        b = qlearn_train(cfg, qcfg, seed=42)
        assert np.array_equal(a.q, b.q)
        c = qlearn_train(cfg, qcfg, seed=43)
        assert not np.array_equal(a.q, c.q)

    def test_save_load_round_trip(self, tmp_path):
        cfg = default_env_config("variable")
        table = qlearn_train(cfg, QTableConfig(training_steps=2000), seed=42)
        path = tmp_path / "table.qt"
        table.save(str(path))
        loaded = QTable.load(str(path))
        assert np.array_equal(loaded.q, table.q)
        assert loaded.cpu_buckets == table.cpu_buckets
        assert loaded.replica_levels == table.replica_levels
        assert loaded.env_hash == table.env_hash
        assert loaded.train_seed == 42

    def test_cpu_bucket_edges(self):
        assert cpu_bucket(0.0, 10) == 0
        assert cpu_bucket(9.99, 10) == 0
        assert cpu_bucket(10.0, 10) == 1
        assert cpu_bucket(99.9, 10) == 9
        assert cpu_bucket(100.0, 10) == 9
        assert cpu_bucket(100.0, 5) == 4

    def test_qtable_config_validation(self):
        with pytest.raises(ValueError, match="cpu_buckets"):
            QTableConfig(cpu_buckets=1)
        with pytest.raises(ValueError, match="discount"):
            QTableConfig(discount=0.0)

    def test_trained_policy_is_sane_on_constant(self):
        # desk-scale training: beats doing nothing on violations/cost balance
        cfg = default_env_config("variable")
        table = qlearn_train(cfg, QTableConfig(training_steps=20_000), seed=42)
        env = ScalingEnv(default_env_config("constant"))
        policy = QPolicy(table)
        observation = env.reset(42)
        violations = 0
        replica_steps = 0
        for _ in range(240):
            out = env.step(policy.decide(observation))
            observation = out.obs
            violations += out.violation_units
            replica_steps += out.obs.replicas
        assert violations == 0
        assert replica_steps / 240 < 5.5  # far below the random-walk average
