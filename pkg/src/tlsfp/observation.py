"""Types shared by the live engine, the simulator and feature extraction."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

from .certs import CertValidity
from .codec import MessageKind, ServerMessage


@dataclass
class Target:
    ip: str | None
    port: int = 443
    domain: str | None = None
    source_list: str = ""
    labels: dict[str, str] = field(default_factory=dict)

    @property
    def identity(self) -> tuple[str | None, int, str | None]:
        return (self.ip, self.port, self.domain)

    def __str__(self) -> str:
        host = self.ip or "?"
        if ":" in host:
            host = f"[{host}]"
        return f"{host}:{self.port}" + (f"/{self.domain}" if self.domain else "")


class Outcome(str, Enum):
    COMPLETED = "completed"
    ALERTED_ONLY = "alerted_only"
    TRANSPORT_ERROR = "transport_error"


@dataclass
class HandshakeObservation:
    probe_id: str
    target: Target
    outcome: Outcome
    messages: list[ServerMessage] = field(default_factory=list)
    alerts: list[tuple[int, int]] = field(default_factory=list)
    negotiated_version: int | None = None
    cert_validity: CertValidity | None = None
    http_server_header: str | None = None
    error: str | None = None
    timestamp: float = field(default_factory=time.time)
    raw_server_bytes: bytes | None = None

    @classmethod
    def transport_error(cls, probe_id: str, target: Target, kind: str) -> HandshakeObservation:
        return cls(probe_id, target, Outcome.TRANSPORT_ERROR, error=kind)

    def first(self, kind: MessageKind) -> ServerMessage | None:
        return next((m for m in self.messages if m.kind == kind), None)


def classify_outcome(messages: list[ServerMessage]) -> Outcome:
    """Completed when any handshake message arrived, otherwise AlertedOnly."""
    if any(m.kind != MessageKind.ALERT and m.kind not in _MARKERS_ONLY for m in messages):
        return Outcome.COMPLETED
    return Outcome.ALERTED_ONLY


_MARKERS_ONLY = {MessageKind.TIMEOUT, MessageKind.TRUNCATED, MessageKind.MALFORMED_RECORD}
