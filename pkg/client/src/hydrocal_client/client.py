"""Socket client for the newline-delimited JSON episode protocol.

Requests are encoded canonically (sorted keys, compact separators), one line
per call, and results are returned exactly as the service sent them: no field
is renamed, recomputed, or rounded.
"""

from __future__ import annotations

import json
import socket
import threading
from typing import Any


class ServiceError(Exception):
    """Base for wire errors; carries the protocol error code."""

    code = "error"

    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


class UnknownSessionError(ServiceError):
    code = "unknown_session"


class BoundsViolationError(ServiceError):
    code = "bounds_violation"


class NoSimulationError(ServiceError):
    code = "no_simulation"


class EpisodeClosedError(ServiceError):
    code = "episode_closed"


class MalformedRequestError(ServiceError):
    code = "malformed_request"


ERROR_TYPES = {
    cls.code: cls
    for cls in (UnknownSessionError, BoundsViolationError, NoSimulationError,
                EpisodeClosedError, MalformedRequestError)
}


def encode_request(request_id: int, method: str, params: dict) -> str:
    """The protocol's canonical request line, newline excluded."""
    return json.dumps(
        {"id": request_id, "method": method, "params": params},
        sort_keys=True,
        separators=(",", ":"),
    )


class ServiceClient:
    """One connection to the service; safe for many episodes, one call at a time.

    Calls serialize on an internal lock, so multiple RemoteEpisodes may share
    a client from different threads; a single RemoteEpisode must not be used
    concurrently.
    """

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._file = sock.makefile("rwb")
        self._lock = threading.Lock()
        self._next_id = 0
        self.last_request_line: str | None = None
        self.last_response_line: str | None = None

    def call(self, method: str, params: dict | None = None) -> Any:
        """Send one request and return the service's result object unmodified."""
        with self._lock:
            self._next_id += 1
            line = encode_request(self._next_id, method, params or {})
            self.last_request_line = line
            self._file.write(line.encode("utf-8") + b"\n")
            self._file.flush()
            raw = self._file.readline()
            if not raw:
                raise ConnectionError("service closed the connection")
            text = raw.decode("utf-8").rstrip("\n")
            self.last_response_line = text
        response = json.loads(text)
        if response.get("ok"):
            return response["result"]
        error = response.get("error", {})
        exc_type = ERROR_TYPES.get(error.get("code"), ServiceError)
        raise exc_type(error.get("message", "unknown error"))

    def open_episode(self, control: str, **config) -> "RemoteEpisode":
        params = {"control": control, **config}
        result = self.call("create_episode", params)
        return RemoteEpisode(self, result["session"], result)

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class RemoteEpisode:
    """Handle on one live session; every method is a pass-through tool call."""

    def __init__(self, client: ServiceClient, session: str, info: dict):
        self.client = client
        self.session = session
        self.info = info
        self.last_result: Any = None

    def _call(self, method: str, **params) -> Any:
        result = self.client.call(method, {"session": self.session, **params})
        self.last_result = result
        return result

    def set_parameters(self, values: dict) -> dict:
        return self._call("set_parameters", values=values)

    def run_simulation(self) -> dict:
        return self._call("run_simulation")

    def evaluate(self) -> dict:
        return self._call("evaluate")

    def parse_failure(self) -> dict:
        return self._call("parse_failure")

    def status(self) -> dict:
        return self._call("status")

    def score(self) -> dict:
        return self._call("score")

    def close(self) -> dict:
        return self._call("close")


def connect(host: str, port: int, timeout: float | None = 30.0) -> ServiceClient:
    sock = socket.create_connection((host, port), timeout=timeout)
    return ServiceClient(sock)
