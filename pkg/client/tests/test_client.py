"""Client SDK against a live service: fidelity, error mapping, golden transcript."""

import json
import socket
from pathlib import Path

import pytest

from hydrocal_client import (
    BoundsViolationError,
    EpisodeClosedError,
    MalformedRequestError,
    NoSimulationError,
    ServiceError,
    UnknownSessionError,
    connect,
)

GOLDEN_REQUESTS = Path(__file__).parent / "data" / "golden_requests.jsonl"

ONES = {n: 1.0 for n in ("wm", "b", "im", "ke", "fc", "under", "leaki",
                         "alpha", "beta", "alpha0", "iwu")}
ONES.update({"th": 10.0, "isu": 0.0})


class TestSessions:
    def test_open_returns_session_id(self, service_endpoint):
        with connect(*service_endpoint) as client:
            episode = client.open_episode("control.txt")
            assert episode.session
            assert episode.info["gauge_id"] == "synth-0042"
            episode.close()

    def test_two_opens_get_distinct_ids(self, service_endpoint):
        with connect(*service_endpoint) as client:
            a = client.open_episode("control.txt")
            b = client.open_episode("control.txt")
            assert a.session != b.session
            a.close()
            b.close()

    def test_open_with_bad_config_raises_typed_error(self, service_endpoint):
        with connect(*service_endpoint) as client:
            with pytest.raises(MalformedRequestError):
                client.open_episode("no-such-control.txt")


class TestErrorMapping:
    def test_all_five_codes_map_to_distinct_exceptions(self, service_endpoint):
        with connect(*service_endpoint) as client:
            episode = client.open_episode("control.txt")

            with pytest.raises(UnknownSessionError):
                client.call("status", {"session": "zzz"})
            with pytest.raises(BoundsViolationError):
                episode.set_parameters({**ONES, "im": -0.1})
            with pytest.raises(NoSimulationError):
                episode.evaluate()
            with pytest.raises(MalformedRequestError):
                client.call("reticulate", {})
            episode.close()
            with pytest.raises(EpisodeClosedError):
                episode.close()

            kinds = {UnknownSessionError, BoundsViolationError,
                     NoSimulationError, EpisodeClosedError,
                     MalformedRequestError}
            assert len(kinds) == 5
            for kind in kinds:
                assert issubclass(kind, ServiceError)

    def test_evaluate_before_simulation(self, service_endpoint):
        with connect(*service_endpoint) as client:
            episode = client.open_episode("control.txt")
            with pytest.raises(NoSimulationError):
                episode.evaluate()
            episode.close()

    def test_operations_after_close_raise(self, service_endpoint):
        with connect(*service_endpoint) as client:
            episode = client.open_episode("control.txt")
            episode.close()
            with pytest.raises(EpisodeClosedError):
                episode.run_simulation()


class TestPassThroughFidelity:
    def test_request_bytes_match_documented_encoding(self, service_endpoint):
        with connect(*service_endpoint) as client:
            episode = client.open_episode("control.txt")
            episode.status()
            expected = json.dumps(
                {"id": 2, "method": "status",
                 "params": {"session": episode.session}},
                sort_keys=True, separators=(",", ":"),
            )
            assert client.last_request_line == expected
            episode.close()

    def test_numeric_values_round_trip_as_decimal_strings(self, service_endpoint):
        with connect(*service_endpoint) as client:
            episode = client.open_episode("control.txt")
            episode.set_parameters(ONES)
            episode.run_simulation()
            result = episode.evaluate()
            raw = client.last_response_line
            # re-encoding the parsed response reproduces the wire bytes, so no
            # numeric value was altered by the client
            assert json.dumps(json.loads(raw), sort_keys=True,
                              separators=(",", ":")) == raw
            assert result["metrics"]["nse"] == json.loads(raw)["result"]["metrics"]["nse"]
            episode.close()


class TestGoldenTranscript:
    def test_scripted_session_reproduces_golden_transcript(self, data_root, fresh_service):
        """Byte-for-byte: requests equal the frozen golden file, responses
        equal a transcript recorded from the raw socket on an identical
        service."""
        golden_lines = GOLDEN_REQUESTS.read_text().splitlines()

        # record the reference transcript through a raw socket
        host, port = fresh_service
        with socket.create_connection((host, port), timeout=30) as sock:
            f = sock.makefile("rwb")
            recorded = []
            for line in golden_lines:
                f.write(line.encode() + b"\n")
                f.flush()
                recorded.append(f.readline().decode().rstrip("\n"))

        # drive the same sequence through the SDK against a fresh service
        from conftest import spawn_service

        proc, host2, port2 = spawn_service(data_root)
        try:
            with connect(host2, port2) as client:
                sent, received = [], []

                def snap():
                    sent.append(client.last_request_line)
                    received.append(client.last_response_line)

                episode = client.open_episode("control.txt")
                snap()
                episode.set_parameters(ONES)
                snap()
                episode.run_simulation()
                snap()
                episode.evaluate()
                snap()
                episode.score()
                snap()
                episode.close()
                snap()

            assert sent == golden_lines
            assert received == recorded
        finally:
            proc.terminate()
            proc.wait(timeout=10)
