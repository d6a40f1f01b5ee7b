from __future__ import annotations

import json
import math
import shlex
import socket
import subprocess
from dataclasses import dataclass
from typing import Any, Sequence

PROTO_VERSION = 1

ACTION_DELTAS: tuple[int, ...] = (-2, -1, 0, 1, 2)

#: Left-closed bin edges mapping [-1, 1] onto the five deltas.
BIN_EDGES: tuple[float, ...] = (-0.6, -0.2, 0.2, 0.6)

OBS_LOW: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
OBS_HIGH: tuple[float, ...] = (100.0, 512.0, math.inf, math.inf, 1.0, 10.0)


class AdapterError(RuntimeError):
    """Connection or protocol failure while talking to the environment server."""


def map_continuous_action(x: float) -> int:
    """Clamp to [-1, 1] and bin; finite input required."""
    if not math.isfinite(x):
        raise ValueError(f"continuous action must be finite, got {x!r}")
    x = min(max(x, -1.0), 1.0)
    for i, edge in enumerate(BIN_EDGES):
        if x < edge:
            return i - 2
    return 2


@dataclass(frozen=True)
class BoxSpace:
    low: tuple[float, ...]
    high: tuple[float, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return (len(self.low),)

    def contains(self, values: Sequence[float]) -> bool:
        return len(values) == len(self.low) and all(
            lo <= v <= hi for lo, v, hi in zip(self.low, values, self.high))


@dataclass(frozen=True)
class DiscreteSpace:
    n: int
    start: int = 0

    def contains(self, value: Any) -> bool:
        return (isinstance(value, int) and not isinstance(value, bool)
                and self.start <= value < self.start + self.n)


@dataclass(frozen=True)
class AdapterConfig:
    """Where and what to play.

    ``endpoint`` is either ``"host:port"`` for a running TCP server or a
    command (string or argv list) to spawn as a stdio child process, e.g.
    ``"scalebench serve --stdio"``.
    """

    endpoint: str | Sequence[str] = "127.0.0.1:7781"
    workload: str = "constant"
    seed: int = 42
    continuous_mode: bool = False
    timeout: float = 30.0
    stdio: bool | None = None   # autodetect from endpoint when None

    def uses_stdio(self) -> bool:
        if self.stdio is not None:
            return self.stdio
        if not isinstance(self.endpoint, str):
            return True
        host, sep, port = self.endpoint.rpartition(":")
        return not (sep and host and port.isdigit())


class _Transport:
    def __init__(self, cfg: AdapterConfig):
        self._proc: subprocess.Popen | None = None
        self._sock: socket.socket | None = None
        try:
            if cfg.uses_stdio():
                argv = (shlex.split(cfg.endpoint)
                        if isinstance(cfg.endpoint, str) else list(cfg.endpoint))
                self._proc = subprocess.Popen(
                    argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
                self._writer = self._proc.stdin
                self._reader = self._proc.stdout
            else:
                host, _, port = cfg.endpoint.rpartition(":")
                self._sock = socket.create_connection((host, int(port)),
                                                      cfg.timeout)
                self._sock.settimeout(cfg.timeout)
                self._writer = self._sock.makefile("wb")
                self._reader = self._sock.makefile("rb")
        except (OSError, ValueError) as exc:
            raise AdapterError(f"cannot reach {cfg.endpoint!r}: {exc}") from exc

    def request(self, message: dict[str, Any]) -> dict[str, Any]:
        try:
            self._writer.write((json.dumps(message) + "\n").encode("utf-8"))
            self._writer.flush()
            line = self._reader.readline()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise AdapterError(f"transport failure: {exc}") from exc
        if not line:
            raise AdapterError("server closed the connection")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"malformed server reply: {exc}") from exc
        if reply.get("type") == "error":
            raise AdapterError(
                f"server error {reply.get('code')}: {reply.get('message')}")
        return reply

    def close(self) -> None:
        for stream in ("_writer", "_reader"):
            try:
                getattr(self, stream).close()
            except (OSError, AttributeError):
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._proc is not None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class RemoteScalingEnv:
    """reset()/step() against a remote replica-scaling environment.

    Discrete mode exposes ``DiscreteSpace(5, start=-2)``: the action IS the
    replica delta. Continuous mode exposes a one-dimensional box in [-1, 1]
    and applies the client-side bin mapping before sending. ``step`` returns
    the conventional (obs, reward, terminated, truncated, info) five-tuple;
    episodes end only by termination, so truncated is always False.
    """

    observation_space = BoxSpace(OBS_LOW, OBS_HIGH)

    def __init__(self, cfg: AdapterConfig | None = None, **kwargs):
        self.cfg = cfg or AdapterConfig(**kwargs)
        self.action_space: BoxSpace | DiscreteSpace = (
            BoxSpace((-1.0,), (1.0,)) if self.cfg.continuous_mode
            else DiscreteSpace(len(ACTION_DELTAS), start=-2))
        self._transport = _Transport(self.cfg)
        self._terminated = True
        hello = self._transport.request({"proto": PROTO_VERSION, "type": "hello"})
        if hello.get("type") != "ack":
            raise AdapterError(f"bad handshake reply: {hello}")
        self.server_config_hash: str = hello.get("config_hash", "")

    def reset(self, seed: int | None = None) -> list[float]:
        reply = self._transport.request({
            "proto": PROTO_VERSION, "type": "reset",
            "seed": self.cfg.seed if seed is None else int(seed),
            "workload": self.cfg.workload,
        })
        if reply.get("type") != "obs":
            raise AdapterError(f"unexpected reset reply: {reply}")
        self._terminated = False
        return list(reply["obs"])

    def step(self, action) -> tuple[list[float], float, bool, bool, dict]:
        delta = self._to_delta(action)
        if self._terminated:
            raise AdapterError("episode is over; call reset() first")
        reply = self._transport.request(
            {"proto": PROTO_VERSION, "type": "step", "action": delta})
        if reply.get("type") != "outcome":
            raise AdapterError(f"unexpected step reply: {reply}")
        self._terminated = bool(reply["terminated"])
        return (list(reply["obs"]), float(reply["reward"]), self._terminated,
                False, dict(reply.get("info", {})))

    def _to_delta(self, action) -> int:
        """Validate locally; nothing goes on the wire for a bad action."""
        if self.cfg.continuous_mode:
            if isinstance(action, (list, tuple)):
                if len(action) != 1:
                    raise ValueError(
                        f"continuous action must be a scalar or length-1 "
                        f"sequence, got {action!r}")
                action = action[0]
            return map_continuous_action(float(action))
        if isinstance(action, bool):
            raise ValueError(f"action must be an integer delta, got {action!r}")
        try:
            delta = int(action)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"action must be an integer delta, got "
                             f"{action!r}") from exc
        if delta != action or delta not in ACTION_DELTAS:
            raise ValueError(
                f"action must be one of {ACTION_DELTAS}, got {action!r}")
        return delta

    def close(self) -> None:
        try:
            self._transport.request({"proto": PROTO_VERSION, "type": "close"})
        except AdapterError:
            pass
        self._transport.close()

    def __enter__(self) -> "RemoteScalingEnv":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
