"""Single-agent RL environment interface over the scalebench wire protocol.

The adapter is a thin, stateless client: every reward, observation and
termination flag comes verbatim from the server, with no shaping, clipping
or normalization on this side. Actions are replica deltas in
{-2, -1, 0, +1, +2}; in continuous mode the environment instead accepts a
value in [-1, 1] and bins it client-side at the edges
(-0.6, -0.2, 0.2, 0.6), left-closed, before sending the delta.
"""

from .env import (ACTION_DELTAS, BIN_EDGES, AdapterConfig, AdapterError,
                  BoxSpace, DiscreteSpace, RemoteScalingEnv,
                  map_continuous_action)

__version__ = "0.1.0"

__all__ = [
    "ACTION_DELTAS",
    "BIN_EDGES",
    "AdapterConfig",
    "AdapterError",
    "BoxSpace",
    "DiscreteSpace",
    "RemoteScalingEnv",
    "map_continuous_action",
]
