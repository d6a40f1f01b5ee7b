"""Line-delimited JSON protocol for driving episodes across a byte stream.

One JSON object per newline-terminated UTF-8 line; every message carries
``"proto": 1``. Unknown fields are ignored, unknown types rejected.

Server side (``serve_*``): an external agent connects and sends requests.

    -> {"proto":1,"type":"hello"}
    <- {"proto":1,"type":"ack","config_hash":"..."}
    -> {"proto":1,"type":"reset","seed":42,"workload":"bursty"}
    <- {"proto":1,"type":"obs","obs":[cpu,mem,qps,p95,err_rate,replicas]}
    -> {"proto":1,"type":"step","action":-2}
    <- {"proto":1,"type":"outcome","obs":[...],"reward":r,"terminated":false,
        "info":{"cost":c,"slo_violated":v,"replicas":n}}
    -> {"proto":1,"type":"close"}
    <- {"proto":1,"type":"ack"}

``reward`` is the normalized value in [-1, 0]; ``info.cost`` is the raw
per-step USD cost. Errors come back as
{"proto":1,"type":"error","code":...,"message":...} with codes ``parse``,
``protocol``, ``action_range`` or ``validation``, and never end the session.

Client side (``drive``): the environment runs locally and a remote agent
serves actions. The driver sends ``obs`` (episode start) and ``outcome``
messages; the agent answers each non-terminated one with a ``step``.
Floats are serialized with 17 significant digits so decoded values are
bit-exact.
"""

from __future__ import annotations

import json
import math
import socket
import socketserver
import sys
from dataclasses import replace
from typing import Any, Callable, IO, Iterable, Sequence

from .evalharness import EpisodeMetrics
from .simenv import (ACTIONS, EnvConfig, EpisodeOverError, ScalingEnv,
                     config_hash, default_env_config, observation_from_list)
from .workload import WORKLOAD_NAMES, default_spec, generate_trace

PROTO_VERSION = 1
DEFAULT_PORT = 7781
DEFAULT_AGENT_TIMEOUT = 30.0


def _fmt_float(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError(f"non-finite number cannot go on the wire: {value!r}")
    text = format(value, ".17g")
    if "." not in text and "e" not in text and "E" not in text:
        text += ".0"
    return text


def _encode_value(value: Any) -> str:
    if value is None or isinstance(value, bool):
        return json.dumps(value)
    if isinstance(value, float):
        return _fmt_float(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_encode_value(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(
            json.dumps(str(k)) + ":" + _encode_value(v) for k, v in value.items()
        ) + "}"
    raise TypeError(f"cannot serialize {type(value).__name__} on the wire")


def encode(message: dict[str, Any]) -> str:
    """One wire line (without the trailing newline)."""
    return _encode_value(message)


def decode(line: str | bytes) -> dict[str, Any]:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    message = json.loads(line)
    if not isinstance(message, dict):
        raise ValueError("wire message must be a JSON object")
    return message


def _error(code: str, message: str) -> dict[str, Any]:
    return {"proto": PROTO_VERSION, "type": "error", "code": code,
            "message": message}


def _outcome_message(out) -> dict[str, Any]:
    return {
        "proto": PROTO_VERSION,
        "type": "outcome",
        "obs": out.obs.as_list(),
        "reward": out.reward_norm,
        "terminated": out.terminated,
        "info": {
            "cost": out.step_cost,
            "slo_violated": out.slo_violated,
            "replicas": out.obs.replicas,
        },
    }


class _Session:
    """Request dispatch for one connection; owns one environment at a time."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.env: ScalingEnv | None = None
        self.terminated = True
        self.closed = False

    def handle_line(self, line: str) -> dict[str, Any]:
        try:
            message = decode(line)
        except (json.JSONDecodeError, ValueError) as exc:
            return _error("parse", f"malformed message: {exc}")
        proto = message.get("proto")
        if proto != PROTO_VERSION:
            return _error("protocol", f"unsupported proto {proto!r}, expected "
                                      f"{PROTO_VERSION}")
        mtype = message.get("type")
        if mtype == "hello":
            return {"proto": PROTO_VERSION, "type": "ack", "config_hash": self.hash}
        if mtype == "reset":
            return self._handle_reset(message)
        if mtype == "step":
            return self._handle_step(message)
        if mtype == "close":
            self.closed = True
            return {"proto": PROTO_VERSION, "type": "ack"}
        return _error("protocol", f"unknown message type {mtype!r}")

    def _handle_reset(self, message: dict[str, Any]) -> dict[str, Any]:
        seed = message.get("seed")
        if isinstance(seed, bool) or not isinstance(seed, int):
            return _error("validation", "reset requires an integer 'seed'")
        cfg = self.cfg
        workload = message.get("workload")
        if workload is not None:
            if workload not in WORKLOAD_NAMES:
                return _error("validation",
                              f"unknown workload {workload!r}; expected one of "
                              f"{', '.join(WORKLOAD_NAMES)}")
            cfg = replace(cfg, trace=generate_trace(
                default_spec(workload), seed, cfg.episode_steps))
        self.env = ScalingEnv(cfg)
        obs = self.env.reset(seed)
        self.terminated = False
        return {"proto": PROTO_VERSION, "type": "obs", "obs": obs.as_list()}

    def _handle_step(self, message: dict[str, Any]) -> dict[str, Any]:
        if self.env is None:
            return _error("protocol", "step before reset")
        if self.terminated:
            return _error("protocol", "episode is over; send reset first")
        action = message.get("action")
        if isinstance(action, bool) or not isinstance(action, int) \
                or action not in ACTIONS:
            return _error("action_range",
                          f"action must be an integer in {list(ACTIONS)}, "
                          f"got {action!r}")
        try:
            out = self.env.step(action)
        except EpisodeOverError as exc:
            return _error("protocol", str(exc))
        self.terminated = out.terminated
        return _outcome_message(out)


def serve_stream(cfg: EnvConfig, lines: Iterable[bytes],
                 send: Callable[[str], None]) -> None:
    """Run one session over an arbitrary line source; used by all transports."""
    session = _Session(cfg)
    for raw in lines:
        if not raw:
            break
        line = raw.strip()
        if not line:
            continue
        reply = session.handle_line(line.decode("utf-8", errors="replace"))
        send(encode(reply) + "\n")
        if session.closed:
            break


def serve_stdio(cfg: EnvConfig | None = None,
                stdin: IO[bytes] | None = None,
                stdout: IO[bytes] | None = None) -> None:
    """Single session over stdin/stdout."""
    cfg = cfg or default_env_config()
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer

    def send(text: str) -> None:
        stdout.write(text.encode("utf-8"))
        stdout.flush()

    serve_stream(cfg, iter(stdin.readline, b""), send)


class _AgentServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def serve_tcp(cfg: EnvConfig | None = None, host: str = "127.0.0.1",
              port: int = DEFAULT_PORT) -> _AgentServer:
    """Start a TCP server hosting one independent session per connection.

    Returns the server; call ``serve_forever()`` (or use the CLI) to block.
    """
    cfg = cfg or default_env_config()

    class Handler(socketserver.StreamRequestHandler):
        def handle(self) -> None:
            serve_stream(cfg, iter(self.rfile.readline, b""),
                         lambda text: self.wfile.write(text.encode("utf-8")))

    return _AgentServer((host, port), Handler)


# --------------------------------------------------------------------------
# Driving a remote agent from a local environment
# --------------------------------------------------------------------------


class AgentFailure(RuntimeError):
    """Remote agent broke the conversation (timeout, disconnect, bad reply)."""


class _LineChannel:
    def __init__(self, sock: socket.socket, timeout: float):
        sock.settimeout(timeout)
        self._sock = sock
        self._rfile = sock.makefile("rb")

    def send(self, message: dict[str, Any]) -> None:
        self._sock.sendall((encode(message) + "\n").encode("utf-8"))

    def recv(self) -> dict[str, Any]:
        try:
            line = self._rfile.readline()
        except (socket.timeout, OSError) as exc:
            raise AgentFailure(f"agent read failed: {exc}") from exc
        if not line:
            raise AgentFailure("agent closed the connection")
        try:
            return decode(line)
        except (json.JSONDecodeError, ValueError) as exc:
            raise AgentFailure(f"agent sent malformed line: {exc}") from exc

    def close(self) -> None:
        try:
            self._rfile.close()
            self._sock.close()
        except OSError:
            pass


def _parse_endpoint(endpoint: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(endpoint, tuple):
        return endpoint
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host, int(port)


def drive(endpoint: str | tuple[str, int],
          episodes: Sequence[tuple[str, int]],
          env_cfg: EnvConfig | None = None,
          policy_id: str = "external",
          timeout: float = DEFAULT_AGENT_TIMEOUT) -> list[EpisodeMetrics]:
    """Run episodes locally while a remote agent picks the actions.

    ``episodes`` is a sequence of (workload name, seed). For every episode the
    driver sends the initial ``obs`` (annotated with workload/seed/episode
    fields) and then one ``outcome`` per step; the agent answers each
    non-terminated message with a ``step``. A timeout, disconnect or invalid
    reply marks that episode failed (keeping the step index reached, zero
    cost/violations); the driver reconnects for the next episode and gives up
    only when the agent is unreachable. Failed episodes are reported, never
    dropped.
    """
    cfg = env_cfg or default_env_config()
    host, port = _parse_endpoint(endpoint)
    records: list[EpisodeMetrics] = []

    def failed(workload: str, seed: int, steps_done: int) -> EpisodeMetrics:
        return EpisodeMetrics(policy=policy_id, workload=workload, seed=seed,
                              total_cost_usd=0.0, total_violations=0,
                              mean_replicas=0.0, steps=steps_done, failed=True)

    def connect() -> _LineChannel | None:
        try:
            return _LineChannel(
                socket.create_connection((host, port), timeout), timeout)
        except OSError:
            return None

    channel = connect()
    for index, (workload, seed) in enumerate(episodes):
        if channel is None:
            records.append(failed(workload, seed, 0))
            continue
        episode_cfg = replace(cfg, trace=generate_trace(
            default_spec(workload), seed, cfg.episode_steps))
        env = ScalingEnv(episode_cfg)
        obs = env.reset(seed)
        steps_done = 0
        violations = 0
        replica_steps = 0
        try:
            channel.send({"proto": PROTO_VERSION, "type": "obs",
                          "obs": obs.as_list(), "workload": workload,
                          "seed": seed, "episode": index})
            while True:
                reply = channel.recv()
                if reply.get("type") != "step":
                    raise AgentFailure(
                        f"expected a step reply, got {reply.get('type')!r}")
                action = reply.get("action")
                if isinstance(action, bool) or not isinstance(action, int) \
                        or action not in ACTIONS:
                    raise AgentFailure(f"action out of range: {action!r}")
                out = env.step(action)
                steps_done += 1
                violations += out.violation_units
                replica_steps += out.obs.replicas
                channel.send(_outcome_message(out))
                if out.terminated:
                    break
            records.append(EpisodeMetrics(
                policy=policy_id, workload=workload, seed=seed,
                total_cost_usd=cfg.reward.c_rep * replica_steps,
                total_violations=violations,
                mean_replicas=replica_steps / steps_done,
                steps=steps_done, failed=False))
        except AgentFailure:
            records.append(failed(workload, seed, steps_done))
            channel.close()
            channel = connect()
    if channel is not None:
        channel.close()
    return records


def run_agent_server(policy_factory, host: str = "127.0.0.1",
                     port: int = 0) -> _AgentServer:
    """Serve a local policy as a remote agent (the counterpart of ``drive``).

    For each incoming episode the server builds a fresh policy via
    ``policy_factory(workload, seed)`` and answers every non-terminated
    ``obs``/``outcome`` with a ``step``.
    """

    class Handler(socketserver.StreamRequestHandler):
        def handle(self) -> None:
            policy = None
            for raw in iter(self.rfile.readline, b""):
                message = decode(raw)
                mtype = message.get("type")
                if mtype == "obs":
                    policy = policy_factory(message.get("workload"),
                                            message.get("seed"))
                    policy.reset(message.get("seed"))
                    obs = observation_from_list(message["obs"])
                elif mtype == "outcome":
                    if message.get("terminated"):
                        continue
                    obs = observation_from_list(message["obs"])
                else:
                    continue
                action = policy.decide(obs)
                self.wfile.write((encode(
                    {"proto": PROTO_VERSION, "type": "step",
                     "action": int(action)}) + "\n").encode("utf-8"))

    return _AgentServer((host, port), Handler)
