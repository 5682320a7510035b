"""Newline-delimited JSON episode service over TCP or stdio.

Requests:  {"id": <int>, "method": <str>, "params": <object>}
Responses: {"id", "ok": true, "result"} or {"id", "ok": false, "error": {"code", "message"}}

One response line per request line, canonical encoding (sorted keys, compact
separators). Sessions are isolated; tool calls within a session serialize on
a per-session lock while simulations across sessions share the global
admission gate. Error codes: unknown_session, bounds_violation,
no_simulation, episode_closed, malformed_request.
"""

from __future__ import annotations

import json
import socketserver
import sys
import threading
from pathlib import Path

from .crest import SIMULATION_GATE
from .episode import Episode, EpisodeClosedError, EpisodeConfig, ToolRejection
from .rewards import RewardTrace

METHODS = (
    "create_episode", "set_parameters", "run_simulation", "evaluate",
    "parse_failure", "status", "score", "close",
)

CONFIG_KEYS = (
    "target_nse", "max_turns", "no_improve_rounds", "wall_clock_budget_s",
    "improvement_epsilon", "allow_fixed_override",
)


def encode(obj: dict) -> str:
    """Canonical wire encoding: sorted keys, compact separators, one line.

    Non-finite numbers are rejected; payloads must use null for absent values.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


class ServiceError(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        self.message = message
        super().__init__(message)


class EpisodeService:
    """Session registry and request dispatcher, transport-agnostic."""

    def __init__(self, root: str | Path | None = None, gate_width: int | None = None):
        self.root = Path(root) if root is not None else Path.cwd()
        if gate_width is not None:
            SIMULATION_GATE.configure(gate_width)
        self._lock = threading.Lock()
        self._sessions: dict[str, tuple[Episode, threading.Lock]] = {}
        self._next_id = 0

    # -- session management ---------------------------------------------------

    def _new_session_id(self) -> str:
        with self._lock:
            self._next_id += 1
            return f"s{self._next_id}"

    def _get(self, params: dict) -> tuple[Episode, threading.Lock]:
        session = params.get("session")
        if not isinstance(session, str):
            raise ServiceError("malformed_request", "missing session id")
        with self._lock:
            entry = self._sessions.get(session)
        if entry is None:
            raise ServiceError("unknown_session", f"no session {session!r}")
        return entry

    # -- dispatch ---------------------------------------------------------------

    def handle_line(self, line: str) -> str:
        request_id = None
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ServiceError("malformed_request", f"bad JSON: {e}") from None
            if not isinstance(obj, dict):
                raise ServiceError("malformed_request", "request must be an object")
            request_id = obj.get("id")
            if not isinstance(request_id, int):
                request_id = None
                raise ServiceError("malformed_request", "id must be an integer")
            method = obj.get("method")
            params = obj.get("params", {})
            if not isinstance(params, dict):
                raise ServiceError("malformed_request", "params must be an object")
            result = self.dispatch(method, params)
            return encode({"id": request_id, "ok": True, "result": result})
        except ServiceError as e:
            return encode({
                "id": request_id,
                "ok": False,
                "error": {"code": e.code, "message": e.message},
            })
        except Exception as e:  # defensive: a server bug must not kill the stream
            return encode({
                "id": request_id,
                "ok": False,
                "error": {"code": "malformed_request",
                          "message": f"internal error: {type(e).__name__}: {e}"},
            })

    def dispatch(self, method: str, params: dict) -> dict:
        if method == "create_episode":
            return self.create_episode(params)
        if method not in METHODS:
            raise ServiceError("malformed_request", f"unknown method {method!r}")
        episode, lock = self._get(params)
        with lock:
            try:
                if method == "set_parameters":
                    values = params.get("values")
                    if not isinstance(values, dict):
                        raise ServiceError("malformed_request",
                                           "set_parameters needs a values object")
                    return episode.set_parameters(values)
                if method == "run_simulation":
                    return episode.run_simulation()
                if method == "evaluate":
                    return episode.evaluate()
                if method == "parse_failure":
                    return episode.parse_failure()
                if method == "status":
                    return episode.status_payload()
                if method == "score":
                    trace: RewardTrace = episode.reward_trace()
                    return trace.to_dict()
                if method == "close":
                    return episode.close()
            except ToolRejection as rej:
                raise ServiceError(rej.code, rej.reason) from None
            except EpisodeClosedError as e:
                raise ServiceError("episode_closed", str(e)) from None
        raise ServiceError("malformed_request", f"unknown method {method!r}")

    def create_episode(self, params: dict) -> dict:
        control = params.get("control")
        if not isinstance(control, str):
            raise ServiceError("malformed_request", "create_episode needs a control path")
        control_path = Path(control)
        if not control_path.is_absolute():
            control_path = self.root / control_path
        unknown = [k for k in params if k not in ("control", *CONFIG_KEYS)]
        if unknown:
            raise ServiceError("malformed_request",
                               f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = {k: params[k] for k in CONFIG_KEYS if k in params}
        try:
            episode = Episode(EpisodeConfig(control_path=control_path, **kwargs))
        except (ValueError, KeyError, OSError) as e:
            raise ServiceError("malformed_request", f"cannot create episode: {e}") from None
        session = self._new_session_id()
        with self._lock:
            self._sessions[session] = (episode, threading.Lock())
        return {
            "session": session,
            "gauge_id": episode.gauge_id,
            "target_nse": episode.target_nse,
            "max_turns": episode.cfg.max_turns,
        }


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            line = self.rfile.readline()
            if not line:
                return
            text = line.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            response = self.server.service.handle_line(text)  # type: ignore[attr-defined]
            self.wfile.write(response.encode("utf-8") + b"\n")
            self.wfile.flush()


class EpisodeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: EpisodeService):
        super().__init__(address, _LineHandler)
        self.service = service


def serve_tcp(host: str, port: int, service: EpisodeService,
              ready_line=None) -> None:
    """Serve forever over TCP; prints the bound address once listening."""
    with EpisodeServer((host, port), service) as server:
        bound = server.server_address
        message = f"listening on {bound[0]}:{bound[1]}"
        if ready_line is not None:
            ready_line(message)
        else:
            print(message, flush=True)
        server.serve_forever()


def serve_stdio(service: EpisodeService, stdin=None, stdout=None) -> None:
    """Serve over stdin/stdout, one response line per request line."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(service.handle_line(line.strip()) + "\n")
        stdout.flush()
