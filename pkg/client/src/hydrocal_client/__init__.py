"""Thin client for the episode wire service; no domain logic, no validation.

The service is the single source of truth for bounds and episode state: this
client only frames requests in the protocol's canonical encoding and maps the
five wire error codes to typed exceptions.
"""

__version__ = "0.1.0"

from .client import (
    BoundsViolationError,
    EpisodeClosedError,
    MalformedRequestError,
    NoSimulationError,
    RemoteEpisode,
    ServiceClient,
    ServiceError,
    UnknownSessionError,
    connect,
)

__all__ = [
    "BoundsViolationError",
    "EpisodeClosedError",
    "MalformedRequestError",
    "NoSimulationError",
    "RemoteEpisode",
    "ServiceClient",
    "ServiceError",
    "UnknownSessionError",
    "connect",
]
