"""Line-oriented environment protocol.

Exposes the plant boundary over a stream socket so an external simulator
can stand in for the built-in surrogate. One JSON object per line; every
request carries a monotonically increasing integer `id` echoed in the
response. Grammar:

    request  := {"id": N, "kind": KIND, ...}
    KIND     := "reset" {scenario?: {field: value}, seed?: N}
              | "step" {n_steps: N}
              | "set_gain" {kp: X}
              | "measure" {}
              | "run_episode" {kp: X, seed?: N}
    response := {"id": N, "kind": "ok", "payload": {...}}
              | {"id": N, "kind": "trace", "samples": [...], "rate": X,
                 "t0": X, "diverged": B}
              | {"id": N, "kind": "error", "code": S, "message": S}

Floats are serialized with full round-trip precision (Python repr), so a
remote episode is bit-identical to a local one at the same seed.
"""

from __future__ import annotations

import json
import math
import socket
import socketserver
import threading
from dataclasses import asdict, replace

import numpy as np

from . import plant
from .sigproc import SignalTrace


class ProtocolError(RuntimeError):
    pass


DEFAULT_KP_BOUNDS = (0.5, 4.0)


class _Session:
    """Per-connection plant instance: scenario, integrator state, noise rng."""

    def __init__(self, scenario: plant.PlantScenario, kp_bounds=DEFAULT_KP_BOUNDS):
        self.base_scenario = scenario
        self.kp_bounds = kp_bounds
        self.last_id = None
        self._reset(scenario, seed=None)

    def _reset(self, scenario, seed):
        self.scenario = scenario
        self.state = plant.initial_state(scenario)
        self.rng = np.random.default_rng(seed)

    def handle(self, msg: dict) -> dict:
        if not isinstance(msg, dict) or "kind" not in msg or "id" not in msg:
            return _error(msg.get("id", -1) if isinstance(msg, dict) else -1,
                          "parse", "message must carry id and kind")
        rid = msg["id"]
        if not isinstance(rid, int):
            return _error(-1, "parse", "id must be an integer")
        if self.last_id is not None and rid <= self.last_id:
            return _error(rid, "sequence",
                          f"id {rid} not greater than previous {self.last_id}")
        self.last_id = rid
        kind = msg["kind"]
        try:
            if kind == "reset":
                overrides = msg.get("scenario", {})
                scenario = replace(self.base_scenario, **overrides) \
                    if overrides else self.base_scenario
                self._reset(scenario, msg.get("seed"))
                return _ok(rid, {"t": self.state.t})
            if kind == "set_gain":
                kp = float(msg["kp"])
                lo, hi = self.kp_bounds
                if not (lo <= kp <= hi):
                    return _error(rid, "bounds",
                                  f"kp {kp} outside [{lo}, {hi}]")
                self.state = plant.apply_gain(self.state, plant.GainAction(kp))
                return _ok(rid, {"active_kp": kp})
            if kind == "step":
                n = int(msg["n_steps"])
                if n < 1:
                    return _error(rid, "args", "n_steps must be >= 1")
                for _ in range(n):
                    self.state = plant.step(self.state, self.scenario,
                                            self.scenario.sim_dt, self.rng)
                return _ok(rid, {"t": self.state.t,
                                 "mode_state": list(self.state.mode_state)})
            if kind == "measure":
                value = plant.measure(self.state, self.scenario, self.rng)
                return {"id": rid, "kind": "trace", "samples": [value],
                        "rate": self.scenario.sample_rate, "t0": self.state.t,
                        "diverged": False}
            if kind == "run_episode":
                result = plant.run_episode(self.scenario,
                                           plant.GainAction(float(msg["kp"])),
                                           msg.get("seed"))
                return {"id": rid, "kind": "trace",
                        "samples": result.trace.samples.tolist(),
                        "rate": result.trace.sample_rate,
                        "t0": result.trace.t0, "diverged": result.diverged}
            return _error(rid, "unknown_kind", f"unknown kind {kind!r}")
        except (TypeError, ValueError, KeyError) as exc:
            return _error(rid, "args", str(exc))
        except plant.DivergedError as exc:
            return _error(rid, "diverged", str(exc))


def _ok(rid, payload):
    return {"id": rid, "kind": "ok", "payload": payload}


def _error(rid, code, message):
    return {"id": rid, "kind": "error", "code": code, "message": message}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = _Session(self.server.scenario, self.server.kp_bounds)
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                reply = _error(-1, "parse", f"bad JSON: {exc}")
            else:
                reply = session.handle(msg)
            self.wfile.write((json.dumps(reply) + "\n").encode())
            self.wfile.flush()


class EnvServer(socketserver.ThreadingTCPServer):
    """Serves independent plant sessions, one per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, scenario: plant.PlantScenario, host: str = "127.0.0.1",
                 port: int = 0, kp_bounds=DEFAULT_KP_BOUNDS):
        super().__init__((host, port), _Handler)
        self.scenario = scenario
        self.kp_bounds = kp_bounds

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


class RemoteEnv:
    """Client adapter presenting the trainer's environment interface.

    Speaks the line protocol against a served plant (or any external
    simulator implementing it). A failed episode request is retried once on
    a fresh connection; a second failure raises.
    """

    def __init__(self, host: str, port: int,
                 scenario: plant.PlantScenario | None = None,
                 timeout: float = 30.0):
        self.host, self.port, self.timeout = host, port, timeout
        self.scenario = scenario
        self.episode_count = 0
        self._seq = 0
        self._sock = None
        self._fh = None
        self._connect()

    def _connect(self):
        try:
            self._sock = socket.create_connection((self.host, self.port),
                                                  timeout=self.timeout)
        except OSError as exc:
            raise ProtocolError(
                f"cannot connect to environment server at "
                f"{self.host}:{self.port}: {exc}") from exc
        self._fh = self._sock.makefile("rw", encoding="utf-8", newline="\n")
        self._seq = 0
        if self.scenario is not None:
            self.request("reset", scenario=asdict(self.scenario))

    def request(self, kind: str, **payload) -> dict:
        self._seq += 1
        msg = {"id": self._seq, "kind": kind, **payload}
        self._fh.write(json.dumps(msg) + "\n")
        self._fh.flush()
        line = self._fh.readline()
        if not line:
            raise ProtocolError("connection closed by server")
        reply = json.loads(line)
        if reply.get("id") != self._seq:
            raise ProtocolError(f"response id {reply.get('id')} != request {self._seq}")
        if reply.get("kind") == "error":
            raise ProtocolError(f"server error [{reply.get('code')}]: "
                                f"{reply.get('message')}")
        return reply

    def run_episode(self, kp: float, seed: int | None) -> plant.EpisodeResult:
        last_exc = None
        for attempt in range(2):
            try:
                if attempt:
                    self.close()
                    self._connect()
                reply = self.request("run_episode", kp=float(kp),
                                     **({"seed": int(seed)} if seed is not None else {}))
                break
            except (ProtocolError, OSError, json.JSONDecodeError) as exc:
                last_exc = exc
        else:
            raise ProtocolError(f"episode failed after retry: {last_exc}")
        self.episode_count += 1
        trace = SignalTrace(np.array(reply["samples"]), reply["rate"], reply["t0"])
        diverged = bool(reply.get("diverged"))
        diverged_at = trace.t0 + len(trace) * trace.dt if diverged else None
        return plant.EpisodeResult(trace=trace, diverged=diverged,
                                   diverged_at=diverged_at)

    def close(self):
        for obj in (self._fh, self._sock):
            try:
                if obj is not None:
                    obj.close()
            except OSError:
                pass
        self._fh = self._sock = None
