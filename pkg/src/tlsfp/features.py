"""Canonical feature strings and per-server fingerprints.

A feature string has eight underscore-separated sections::

    version _ cipher _ sh _ ee _ cr _ hrr _ cert _ alerts

Extension items are ``id`` or ``id.value`` joined by ``-``; values are
unpadded base64 of the raw extension body, except the key share which
renders the selected group in decimal.  Alerts render as ``<desc``.
Reserved ``!token`` items mark parse failures, timeouts and similar.
"""

from __future__ import annotations

import base64
import binascii
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Union

from . import constants as C
from .codec import MessageKind
from .observation import HandshakeObservation, Outcome

EXT_SECTIONS = ("sh", "ee", "cr", "hrr", "cert")
MARKERS = frozenset({"!malformed", "!timeout", "!undecryptable", "!truncated"})

Value = Union[None, bytes, int]
Item = Union[tuple, str]  # (ext_id, Value) or a marker token


class RefusedTransportError(ValueError):
    """Feature extraction was asked to encode a TCP-level failure."""


class FeatureParseError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionPolicy:
    value_whitelist: frozenset = C.VALUE_WHITELIST
    strip_extensions: frozenset = frozenset({C.EXT_STATUS_REQUEST})
    keyshare_group_only: bool = True

    def __post_init__(self):
        object.__setattr__(self, "value_whitelist", frozenset(self.value_whitelist))
        object.__setattr__(self, "strip_extensions", frozenset(self.strip_extensions))

    def encode_item(self, ext_id: int, raw: bytes) -> tuple | None:
        if ext_id in self.strip_extensions:
            return None
        if ext_id not in self.value_whitelist:
            return (ext_id, None)
        if ext_id == C.EXT_KEY_SHARE and self.keyshare_group_only and len(raw) >= 2:
            return (ext_id, int.from_bytes(raw[:2], "big"))
        return (ext_id, bytes(raw))


DEFAULT_POLICY = ExtractionPolicy()
# What scan records keep on disk: nothing stripped, so any stricter policy
# can be applied afterwards.
RETENTION_POLICY = ExtractionPolicy(strip_extensions=frozenset())


def b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode().rstrip("=")


def unb64(text: str) -> bytes:
    try:
        raw = base64.b64decode(text + "=" * (-len(text) % 4), validate=True)
    except binascii.Error as exc:
        raise FeatureParseError(f"bad base64 value {text!r}") from exc
    if b64(raw) != text:
        raise FeatureParseError(f"non-canonical base64 value {text!r}")
    return raw


def _render_item(item: Item) -> str:
    if isinstance(item, str):
        return item
    ext_id, value = item
    if value is None:
        return str(ext_id)
    if isinstance(value, int):
        return f"{ext_id}.{value}"
    return f"{ext_id}.{b64(value)}"


def _parse_item(token: str, keyshare_group_only: bool) -> Item:
    if token.startswith("!"):
        if token not in MARKERS:
            raise FeatureParseError(f"unknown marker {token!r}")
        return token
    head, dot, value = token.partition(".")
    if not head.isdigit() or str(int(head)) != head:
        raise FeatureParseError(f"bad extension id {token!r}")
    ext_id = int(head)
    if not dot:
        return (ext_id, None)
    if ext_id == C.EXT_KEY_SHARE and keyshare_group_only:
        if not value.isdigit() or str(int(value)) != value:
            raise FeatureParseError(f"bad key share group {token!r}")
        return (ext_id, int(value))
    return (ext_id, unb64(value))


def _parse_int(text: str) -> int | None:
    if text == "":
        return None
    if not text.isdigit() or str(int(text)) != text:
        raise FeatureParseError(f"bad number {text!r}")
    return int(text)


@dataclass(frozen=True)
class FeatureString:
    version: int | None = None
    cipher: int | None = None
    sh: tuple = ()
    ee: tuple = ()
    cr: tuple = ()
    hrr: tuple = ()
    cert: tuple = ()
    alerts: tuple = ()  # ints (descriptions) and marker tokens

    @cached_property
    def text(self) -> str:
        parts = [
            "" if self.version is None else str(self.version),
            "" if self.cipher is None else str(self.cipher),
        ]
        for name in EXT_SECTIONS:
            parts.append("-".join(_render_item(i) for i in getattr(self, name)))
        parts.append("-".join(a if isinstance(a, str) else f"<{a}" for a in self.alerts))
        return "_".join(parts)

    def __str__(self) -> str:
        return self.text

    @classmethod
    def parse(cls, text: str, keyshare_group_only: bool = True) -> FeatureString:
        parts = text.split("_")
        if len(parts) != 8:
            raise FeatureParseError(f"expected 8 sections, got {len(parts)}: {text!r}")
        sections = {}
        for name, part in zip(EXT_SECTIONS, parts[2:7]):
            sections[name] = tuple(_parse_item(t, keyshare_group_only) for t in part.split("-")) if part else ()
        alerts = []
        if parts[7]:
            for tok in parts[7].split("-"):
                if tok in MARKERS:
                    alerts.append(tok)
                elif tok.startswith("<"):
                    val = _parse_int(tok[1:])
                    if val is None:
                        raise FeatureParseError(f"empty alert {text!r}")
                    alerts.append(val)
                else:
                    raise FeatureParseError(f"bad alert item {tok!r}")
        return cls(_parse_int(parts[0]), _parse_int(parts[1]), alerts=tuple(alerts), **sections)

    def extension_ids(self, section: str) -> list[int]:
        return [i[0] for i in getattr(self, section) if not isinstance(i, str)]


def extract_features(obs: HandshakeObservation, policy: ExtractionPolicy = DEFAULT_POLICY) -> FeatureString:
    """Encode one handshake observation under ``policy``."""
    if obs.outcome == Outcome.TRANSPORT_ERROR:
        raise RefusedTransportError(f"{obs.target} / {obs.probe_id}: transport error {obs.error}")
    version = cipher = None
    sections: dict[str, list] = {name: [] for name in EXT_SECTIONS}
    alerts: list = []

    def exts(msg):
        return [it for i, raw in msg.extensions if (it := policy.encode_item(i, raw)) is not None]

    section_of = {
        MessageKind.SERVER_HELLO: "sh",
        MessageKind.HELLO_RETRY_REQUEST: "hrr",
        MessageKind.ENCRYPTED_EXTENSIONS: "ee",
        MessageKind.CERTIFICATE_REQUEST: "cr",
        MessageKind.CERTIFICATE: "cert",
    }
    for msg in obs.messages:
        kind = msg.kind
        if kind in section_of:
            name = section_of[kind]
            if msg.malformed:
                sections[name].append("!malformed")
                continue
            if kind == MessageKind.SERVER_HELLO or (kind == MessageKind.HELLO_RETRY_REQUEST and version is None):
                version, cipher = msg.version, msg.cipher
            sections[name].extend(exts(msg))
        elif kind == MessageKind.ALERT:
            alerts.append("!malformed" if msg.malformed or msg.alert is None else msg.alert[1])
        elif kind == MessageKind.UNDECRYPTABLE:
            sections["ee"].append("!undecryptable")
        elif kind == MessageKind.TIMEOUT:
            alerts.append("!timeout")
        elif kind == MessageKind.TRUNCATED:
            alerts.append("!truncated")
        elif kind == MessageKind.MALFORMED_RECORD:
            alerts.append("!malformed")
    return FeatureString(version, cipher, alerts=tuple(alerts), **{k: tuple(v) for k, v in sections.items()})


def reapply_policy(fs: FeatureString, policy: ExtractionPolicy) -> FeatureString:
    """Narrow a stored feature string to a stricter policy.

    Only removes information: stripped ids vanish and values of
    non-whitelisted ids are dropped.
    """

    def narrow(items):
        out = []
        for it in items:
            if isinstance(it, str):
                out.append(it)
            elif it[0] in policy.strip_extensions:
                continue
            elif it[0] not in policy.value_whitelist:
                out.append((it[0], None))
            else:
                out.append(it)
        return tuple(out)

    return replace(fs, **{name: narrow(getattr(fs, name)) for name in EXT_SECTIONS})


def project_jarm(fs: FeatureString) -> FeatureString:
    """Restrict to what JARM sees: version, cipher, ServerHello extension ids
    (with the ALPN value only)."""
    sh = tuple(
        it if isinstance(it, str) or it[0] == C.EXT_ALPN else (it[0], None)
        for it in fs.sh
    )
    return FeatureString(fs.version, fs.cipher, sh=sh)


# --------------------------------------------------------------------------
# Fingerprints


@dataclass(frozen=True, eq=False)
class ServerFingerprint:
    entries: Mapping[str, FeatureString] = field(default_factory=dict)
    complete: bool = False

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(sorted(self.entries.items())))

    @cached_property
    def key(self) -> str:
        return "|".join(f"{pid}:{fs.text}" for pid, fs in self.entries.items())

    def __eq__(self, other):
        if not isinstance(other, ServerFingerprint):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self):
        return hash(self.key)

    def __len__(self):
        return len(self.entries)

    def restrict(self, probe_ids: Iterable[str]) -> ServerFingerprint:
        ids = list(probe_ids)
        entries = {p: self.entries[p] for p in ids if p in self.entries}
        return ServerFingerprint(entries, len(entries) == len(set(ids)) and bool(ids))

    def map(self, fn) -> ServerFingerprint:
        return ServerFingerprint({p: fn(fs) for p, fs in self.entries.items()}, self.complete)

    @classmethod
    def from_features(cls, features: Mapping[str, FeatureString | None], probe_ids: Iterable[str]) -> ServerFingerprint:
        ids = list(dict.fromkeys(probe_ids))
        entries = {p: features[p] for p in ids if features.get(p) is not None}
        return cls(entries, bool(ids) and len(entries) == len(ids))

    @classmethod
    def parse_key(cls, key: str, keyshare_group_only: bool = True) -> ServerFingerprint:
        entries = {}
        for part in key.split("|") if key else ():
            pid, _, text = part.partition(":")
            entries[pid] = FeatureString.parse(text, keyshare_group_only)
        return cls(entries, bool(entries))


def assemble_fingerprint(
    observations: Iterable[HandshakeObservation],
    probe_ids: Iterable[str],
    policy: ExtractionPolicy = DEFAULT_POLICY,
) -> ServerFingerprint:
    """Union of per-probe feature strings for one target.

    Later observations for the same probe replace earlier ones; transport
    errors contribute nothing.
    """
    ids = list(dict.fromkeys(probe_ids))
    wanted = set(ids)
    features: dict[str, FeatureString | None] = {}
    for obs in observations:
        if obs.probe_id not in wanted:
            continue
        if obs.outcome == Outcome.TRANSPORT_ERROR:
            features[obs.probe_id] = None
        else:
            features[obs.probe_id] = extract_features(obs, policy)
    return ServerFingerprint.from_features(features, ids)
