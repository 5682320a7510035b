"""Spawn a live service through its CLI; the client knows only the protocol."""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest


def synth_root(directory: Path) -> Path:
    subprocess.run(
        [sys.executable, "-m", "hydrocal.cli", "synth", "--out", str(directory),
         "--seed", "42"],
        check=True, capture_output=True,
    )
    return directory


def spawn_service(root: Path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "hydrocal.cli", "serve", "--mode", "tcp",
         "--host", "127.0.0.1", "--port", "0", "--root", str(root)],
        stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True,
    )
    ready = proc.stdout.readline().strip()
    if not ready.startswith("listening on "):
        proc.terminate()
        raise RuntimeError(f"service failed to start: {ready!r}")
    host, port = ready.removeprefix("listening on ").rsplit(":", 1)
    return proc, host, int(port)


@pytest.fixture(scope="session")
def data_root(tmp_path_factory) -> Path:
    return synth_root(tmp_path_factory.mktemp("service-root"))


@pytest.fixture(scope="session")
def service_endpoint(data_root):
    proc, host, port = spawn_service(data_root)
    yield host, port
    proc.terminate()
    proc.wait(timeout=10)


@pytest.fixture()
def fresh_service(data_root):
    """A dedicated service whose first session id is deterministic."""
    proc, host, port = spawn_service(data_root)
    yield host, port
    proc.terminate()
    proc.wait(timeout=10)
