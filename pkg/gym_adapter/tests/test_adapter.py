import sys

import numpy as np
import pytest

from scalebench_gym import (ACTION_DELTAS, AdapterConfig, AdapterError,
                            BoxSpace, DiscreteSpace, RemoteScalingEnv)

from scalebench.simenv import config_hash, default_env_config

STDIO_ARGV = [sys.executable, "-m", "scalebench.cli", "serve", "--stdio"]


def make_env(server_endpoint, **kwargs) -> RemoteScalingEnv:
    kwargs.setdefault("endpoint", server_endpoint)
    return RemoteScalingEnv(AdapterConfig(**kwargs))


class TestReset:
    def test_observation_shape_and_initial_replicas(self, server_endpoint):
        with make_env(server_endpoint, workload="bursty", seed=42) as env:
            obs = env.reset()
            assert len(obs) == 6
            assert obs[5] == 1.0
            assert env.observation_space.contains(obs)

    def test_same_seed_same_observation(self, server_endpoint):
        with make_env(server_endpoint, workload="variable", seed=7) as env:
            assert env.reset() == env.reset()

    def test_seed_override(self, server_endpoint):
        with make_env(server_endpoint, workload="variable", seed=7) as env:
            assert env.reset(seed=7) == env.reset(seed=7)
            assert env.reset(seed=7) != env.reset(seed=8)

    def test_handshake_echoes_server_config_hash(self, server_endpoint):
        with make_env(server_endpoint) as env:
            assert env.server_config_hash == config_hash(default_env_config())


class TestSpaces:
    def test_discrete_space_is_the_delta_set(self, server_endpoint):
        with make_env(server_endpoint) as env:
            space = env.action_space
            assert isinstance(space, DiscreteSpace)
            assert space.n == 5 and space.start == -2
            assert all(space.contains(a) for a in ACTION_DELTAS)
            assert not space.contains(3)

    def test_continuous_space_is_unit_box(self, server_endpoint):
        with make_env(server_endpoint, continuous_mode=True) as env:
            space = env.action_space
            assert isinstance(space, BoxSpace)
            assert space.shape == (1,)
            assert space.contains([0.3]) and not space.contains([1.5])

    def test_observation_space_bounds(self):
        space = RemoteScalingEnv.observation_space
        assert space.shape == (6,)
        assert space.low == (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
        assert space.high[0] == 100.0 and space.high[1] == 512.0


class TestStep:
    def test_five_tuple(self, server_endpoint):
        with make_env(server_endpoint, workload="constant", seed=42) as env:
            env.reset()
            obs, reward, terminated, truncated, info = env.step(1)
            assert len(obs) == 6
            assert -1.0 <= reward <= 0.0
            assert terminated is False and truncated is False
            assert info["replicas"] == 2
            assert set(info) == {"cost", "slo_violated", "replicas"}

    def test_terminates_exactly_at_240(self, server_endpoint):
        with make_env(server_endpoint, workload="constant", seed=42) as env:
            env.reset()
            flags = [env.step(0)[2] for _ in range(240)]
            assert flags[-1] and not any(flags[:-1])
            with pytest.raises(AdapterError):
                env.step(0)

    def test_invalid_actions_raise_before_sending(self, server_endpoint):
        with make_env(server_endpoint, workload="constant", seed=42) as env:
            reference = make_env(server_endpoint, workload="constant", seed=42)
            env.reset()
            reference.reset()
            for bad in (3, -3, "up", True, None):
                with pytest.raises((ValueError, TypeError)):
                    env.step(bad)
            # nothing was sent: both sessions are still in lockstep
            assert env.step(1) == reference.step(1)
            reference.close()

    def test_continuous_rejects_non_finite_before_sending(self, server_endpoint):
        with make_env(server_endpoint, continuous_mode=True) as env:
            env.reset()
            with pytest.raises(ValueError):
                env.step(float("nan"))
            with pytest.raises(ValueError):
                env.step([0.1, 0.2])

    def test_numpy_actions_accepted(self, server_endpoint):
        with make_env(server_endpoint, workload="constant", seed=1) as env:
            env.reset()
            out = env.step(np.int64(2))
            assert out[4]["replicas"] == 3
        with make_env(server_endpoint, continuous_mode=True, seed=1) as env:
            env.reset()
            env.step(np.float64(0.25))
            env.step(np.array([0.25])[0])

    def test_step_before_reset_raises(self, server_endpoint):
        with make_env(server_endpoint) as env:
            with pytest.raises(AdapterError):
                env.step(0)


class TestStatelessness:
    def test_two_adapters_identical_trajectories(self, server_endpoint):
        actions = [int(a) for a in
                   np.random.Generator(np.random.PCG64(5)).integers(-2, 3, 240)]

        def rollout():
            with make_env(server_endpoint, workload="flash", seed=123) as env:
                obs = env.reset()
                rows = [obs]
                for action in actions:
                    rows.append(env.step(action))
                return rows

        assert rollout() == rollout()

    def test_continuous_zero_equals_discrete_zero(self, server_endpoint):
        with make_env(server_endpoint, workload="periodic", seed=9,
                      continuous_mode=True) as cont, \
             make_env(server_endpoint, workload="periodic", seed=9) as disc:
            cont.reset()
            disc.reset()
            for _ in range(10):
                assert cont.step(0.0) == disc.step(0)


class TestStdioMode:
    def test_child_process_round_trip(self):
        cfg = AdapterConfig(endpoint=STDIO_ARGV, workload="ramp", seed=3)
        assert cfg.uses_stdio()
        with RemoteScalingEnv(cfg) as env:
            obs = env.reset()
            assert len(obs) == 6
            out = env.step(2)
            assert out[4]["replicas"] == 3

    def test_endpoint_autodetection(self):
        assert AdapterConfig(endpoint="host:123").uses_stdio() is False
        assert AdapterConfig(endpoint="scalebench serve --stdio").uses_stdio()
        assert AdapterConfig(endpoint=["x", "serve"]).uses_stdio()


def test_unreachable_endpoint_raises():
    with pytest.raises(AdapterError):
        RemoteScalingEnv(AdapterConfig(endpoint="127.0.0.1:9", timeout=0.2))
