"""Client Hello serialization and parsing of server-side TLS records.

Everything here is pure: byte strings in, values out.  Record-layer framing
of the Client Hello is left to the caller (:func:`frame_record`).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

import jsonschema

from . import constants as C


class CodecError(Exception):
    pass


class UnrenderableTemplate(CodecError):
    pass


class MalformedRecordHeader(CodecError):
    pass


class MalformedMessage(CodecError):
    pass


class Truncated(CodecError):
    """The stream ended inside a record (or inside a handshake message).

    ``records`` holds everything that was complete before the cut.
    """

    def __init__(self, message: str, records=()):
        super().__init__(message)
        self.records = list(records)


# --------------------------------------------------------------------------
# Client Hello specification

PAYLOAD_KINDS = (
    "literal",
    "supported_versions",
    "key_share",
    "sni",
    "alpn",
    "signature_algorithms",
    "supported_groups",
    "ec_point_formats",
    "empty",
)


@dataclass(frozen=True)
class ExtensionTemplate:
    ext_id: int
    kind: str = "empty"
    values: tuple = ()
    literal: bytes = b""

    def __post_init__(self):
        if self.kind not in PAYLOAD_KINDS:
            raise ValueError(f"unknown extension payload kind {self.kind!r}")
        if not 0 <= self.ext_id <= 0xFFFF:
            raise ValueError(f"extension id out of range: {self.ext_id}")
        object.__setattr__(self, "values", tuple(self.values))

    def render(self, ctx: RenderContext) -> bytes | None:
        """Extension body, or None when the extension must be left out."""
        kind, vals = self.kind, self.values
        if kind == "literal":
            return self.literal
        if kind == "empty":
            return b""
        if kind == "sni":
            if not ctx.sni:
                return None
            name = ctx.sni.encode("idna") if not ctx.sni.isascii() else ctx.sni.encode()
            entry = b"\x00" + _u16(len(name)) + name
            return _u16(len(entry)) + entry
        if kind == "supported_versions":
            body = b"".join(_u16(v) for v in vals)
            return _u8(len(body)) + body
        if kind in ("signature_algorithms", "supported_groups"):
            body = b"".join(_u16(v) for v in vals)
            return _u16(len(body)) + body
        if kind == "ec_point_formats":
            return _u8(len(vals)) + bytes(vals)
        if kind == "alpn":
            body = b""
            for proto in vals:
                raw = proto.encode()
                if not 0 < len(raw) < 256:
                    raise UnrenderableTemplate(f"ALPN protocol length out of range: {proto!r}")
                body += _u8(len(raw)) + raw
            return _u16(len(body)) + body
        if kind == "key_share":
            body = b""
            for group in vals:
                key = ctx.key_shares.get(group)
                if key is None:
                    raise UnrenderableTemplate(f"no key material for group {group}")
                body += _u16(group) + _u16(len(key)) + key
            return _u16(len(body)) + body
        raise UnrenderableTemplate(self.kind)  # pragma: no cover


@dataclass(frozen=True)
class ClientHelloSpec:
    id: str
    legacy_version: int = C.TLS12
    cipher_suites: tuple[int, ...] = ()
    compression_methods: tuple[int, ...] = (0,)
    extensions: tuple[ExtensionTemplate, ...] = ()
    session_id_policy: str = "empty"
    grease_policy: str = "none"

    def __post_init__(self):
        for name in ("cipher_suites", "compression_methods", "extensions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.session_id_policy not in ("empty", "random-32"):
            raise ValueError(f"bad session_id_policy {self.session_id_policy!r}")
        if self.grease_policy not in ("none", "fixed-values"):
            raise ValueError(f"bad grease_policy {self.grease_policy!r}")
        if not self.id or any(ch in self.id for ch in ":|,\n"):
            raise ValueError(f"probe id must be non-empty and free of ':|,': {self.id!r}")

    def key_share_groups(self) -> list[int]:
        groups = []
        for ext in self.extensions:
            if ext.kind == "key_share":
                groups.extend(g for g in ext.values if g not in groups)
        return groups

    def effective_ciphers(self) -> list[int]:
        ciphers = list(self.cipher_suites)
        if self.grease_policy == "fixed-values":
            ciphers.insert(0, C.GREASE_VALUE)
        return ciphers

    def render_extensions(self, ctx: RenderContext) -> list[tuple[int, bytes]]:
        out = []
        if self.grease_policy == "fixed-values":
            out.append((C.GREASE_VALUE, b""))
        for ext in self.extensions:
            body = ext.render(ctx)
            if body is not None:
                out.append((ext.ext_id, body))
        return out

    def offered(self, kind: str) -> list:
        """Values of the first template of the given payload kind, [] if absent."""
        for ext in self.extensions:
            if ext.kind == kind:
                return list(ext.values)
        return []

    def has_extension(self, ext_id: int) -> bool:
        return any(ext.ext_id == ext_id for ext in self.extensions)


@dataclass
class RenderContext:
    sni: str | None = None
    key_shares: dict[int, bytes] = field(default_factory=dict)
    client_random: bytes = bytes(32)
    session_id: bytes = b""

    @classmethod
    def fresh(cls, spec: ClientHelloSpec, sni=None, key_shares=None) -> RenderContext:
        sid = os.urandom(32) if spec.session_id_policy == "random-32" else b""
        return cls(sni=sni, key_shares=dict(key_shares or {}), client_random=os.urandom(32), session_id=sid)


def _u8(n: int) -> bytes:
    return struct.pack("!B", n)


def _u16(n: int) -> bytes:
    return struct.pack("!H", n)


def _u24(n: int) -> bytes:
    return struct.pack("!I", n)[1:]


def handshake_message(msg_type: int, body: bytes) -> bytes:
    return _u8(msg_type) + _u24(len(body)) + body


def frame_record(content_type: int, payload: bytes, version: int = C.TLS10) -> bytes:
    """Split ``payload`` into records of at most 2^14 bytes."""
    out = b""
    for i in range(0, max(len(payload), 1), 1 << 14):
        chunk = payload[i : i + (1 << 14)]
        out += _u8(content_type) + _u16(version) + _u16(len(chunk)) + chunk
    return out


def encode_client_hello(spec: ClientHelloSpec, ctx: RenderContext) -> bytes:
    """Serialize ``spec`` into a complete ClientHello handshake message."""
    if len(ctx.client_random) != 32:
        raise UnrenderableTemplate("client random must be 32 bytes")
    if len(ctx.session_id) > 32:
        raise UnrenderableTemplate("session id longer than 32 bytes")
    ciphers = b"".join(_u16(c) for c in spec.effective_ciphers())
    exts = b"".join(_u16(i) + _u16(len(v)) + v for i, v in spec.render_extensions(ctx))
    body = (
        _u16(spec.legacy_version)
        + ctx.client_random
        + _u8(len(ctx.session_id))
        + ctx.session_id
        + _u16(len(ciphers))
        + ciphers
        + _u8(len(spec.compression_methods))
        + bytes(spec.compression_methods)
        + _u16(len(exts))
        + exts
    )
    return handshake_message(C.HT_CLIENT_HELLO, body)


# --------------------------------------------------------------------------
# Byte reader


class Reader:
    def __init__(self, data: bytes, error=MalformedMessage):
        self.data = data
        self.pos = 0
        self.error = error

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise self.error(f"need {n} bytes at offset {self.pos}, have {self.remaining()}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u24(self) -> int:
        return int.from_bytes(self.take(3), "big")

    def vec8(self) -> bytes:
        return self.take(self.u8())

    def vec16(self) -> bytes:
        return self.take(self.u16())

    def vec24(self) -> bytes:
        return self.take(self.u24())

    def done(self) -> None:
        if self.remaining():
            raise self.error(f"{self.remaining()} trailing bytes")


def parse_extension_block(data: bytes) -> list[tuple[int, bytes]]:
    """Parse the contents of an extensions<0..2^16-1> vector."""
    r = Reader(data)
    out = []
    while r.remaining():
        ext_id = r.u16()
        out.append((ext_id, r.vec16()))
    return out


def _u16_list(data: bytes) -> list[int]:
    if len(data) % 2:
        raise MalformedMessage("odd-length u16 list")
    return [int.from_bytes(data[i : i + 2], "big") for i in range(0, len(data), 2)]


@dataclass
class ParsedClientHello:
    legacy_version: int
    random: bytes
    session_id: bytes
    cipher_suites: list[int]
    compression_methods: list[int]
    extensions: list[tuple[int, bytes]]


def parse_client_hello(message: bytes) -> ParsedClientHello:
    """Inverse of :func:`encode_client_hello` (takes the full handshake message)."""
    r = Reader(message)
    if r.u8() != C.HT_CLIENT_HELLO:
        raise MalformedMessage("not a ClientHello")
    body = Reader(r.vec24())
    r.done()
    version = body.u16()
    random = body.take(32)
    sid = body.vec8()
    ciphers = _u16_list(body.vec16())
    comp = list(body.vec8())
    exts = parse_extension_block(body.vec16()) if body.remaining() else []
    body.done()
    return ParsedClientHello(version, random, sid, ciphers, comp, exts)


# --------------------------------------------------------------------------
# Records

MAX_RECORD_LEN = (1 << 14) + 2048


class Record(NamedTuple):
    content_type: int
    version: int
    payload: bytes


class RecordBuffer:
    """Incremental record splitter for bytes arriving from a socket."""

    def __init__(self):
        self.buf = b""

    def feed(self, data: bytes) -> None:
        self.buf += data

    def pending(self) -> int:
        return len(self.buf)

    def next_record(self) -> Record | None:
        if len(self.buf) < 5:
            if self.buf and self.buf[0] not in C.RECORD_TYPES:
                raise MalformedRecordHeader(f"content type {self.buf[0]}")
            return None
        ctype, version, length = struct.unpack("!BHH", self.buf[:5])
        if ctype not in C.RECORD_TYPES:
            raise MalformedRecordHeader(f"content type {ctype}")
        if version >> 8 != 3:
            raise MalformedRecordHeader(f"record version {version:#06x}")
        if length > MAX_RECORD_LEN:
            raise MalformedRecordHeader(f"record length {length}")
        if len(self.buf) < 5 + length:
            return None
        payload = self.buf[5 : 5 + length]
        self.buf = self.buf[5 + length :]
        return Record(ctype, version, payload)


def parse_records(stream: bytes) -> list[Record]:
    """Split a complete server byte stream into records.

    Raises :class:`Truncated` when the stream stops inside a record.
    """
    buf = RecordBuffer()
    buf.feed(stream)
    records = []
    while (rec := buf.next_record()) is not None:
        records.append(rec)
    if buf.pending():
        raise Truncated(f"{buf.pending()} bytes of an incomplete record", records)
    return records


class HandshakeReassembler:
    """Turns handshake record payloads into whole handshake messages.

    Handles messages split across records and several messages per record.
    """

    def __init__(self):
        self.buf = b""

    def feed(self, payload: bytes) -> list[tuple[int, bytes, bytes]]:
        """Returns (type, body, raw message bytes) for each completed message."""
        self.buf += payload
        out = []
        while len(self.buf) >= 4:
            length = int.from_bytes(self.buf[1:4], "big")
            if len(self.buf) < 4 + length:
                break
            raw = self.buf[: 4 + length]
            self.buf = self.buf[4 + length :]
            out.append((raw[0], raw[4:], raw))
        return out

    def pending(self) -> int:
        return len(self.buf)


def handshake_messages(records: Iterable[Record]) -> list[tuple[int, bytes]]:
    """All handshake messages carried by plaintext handshake records, in order."""
    reasm = HandshakeReassembler()
    out = []
    for rec in records:
        if rec.content_type == C.CT_HANDSHAKE:
            out.extend((t, body) for t, body, _ in reasm.feed(rec.payload))
    if reasm.pending():
        raise Truncated("incomplete handshake message", out)
    return out


# --------------------------------------------------------------------------
# Server messages


class MessageKind(str, Enum):
    SERVER_HELLO = "ServerHello"
    HELLO_RETRY_REQUEST = "HelloRetryRequest"
    ENCRYPTED_EXTENSIONS = "EncryptedExtensions"
    CERTIFICATE_REQUEST = "CertificateRequest"
    CERTIFICATE = "Certificate"
    ALERT = "Alert"
    OTHER = "Other"
    # observation markers, not wire messages
    UNDECRYPTABLE = "Undecryptable"
    TIMEOUT = "Timeout"
    TRUNCATED = "Truncated"
    MALFORMED_RECORD = "MalformedRecord"


MARKER_KINDS = frozenset(
    {MessageKind.UNDECRYPTABLE, MessageKind.TIMEOUT, MessageKind.TRUNCATED, MessageKind.MALFORMED_RECORD}
)


@dataclass
class ServerMessage:
    kind: MessageKind
    type_code: int | None = None
    version: int | None = None
    cipher: int | None = None
    random: bytes = b""
    session_id: bytes = b""
    extensions: list[tuple[int, bytes]] = field(default_factory=list)
    alert: tuple[int, int] | None = None
    cert_chain: list[bytes] = field(default_factory=list)
    cert_entry_extensions: list[list[tuple[int, bytes]]] = field(default_factory=list)
    malformed: bool = False

    def extension(self, ext_id: int) -> bytes | None:
        for i, v in self.extensions:
            if i == ext_id:
                return v
        return None

    def selected_version(self) -> int | None:
        """supported_versions value when present, else the legacy version."""
        sv = self.extension(C.EXT_SUPPORTED_VERSIONS)
        if sv is not None and len(sv) == 2:
            return int.from_bytes(sv, "big")
        return self.version


_KIND_BY_TYPE = {
    C.HT_SERVER_HELLO: MessageKind.SERVER_HELLO,
    C.HT_ENCRYPTED_EXTENSIONS: MessageKind.ENCRYPTED_EXTENSIONS,
    C.HT_CERTIFICATE_REQUEST: MessageKind.CERTIFICATE_REQUEST,
    C.HT_CERTIFICATE: MessageKind.CERTIFICATE,
}


def alert_message(level: int, description: int) -> ServerMessage:
    return ServerMessage(MessageKind.ALERT, alert=(level, description))


def parse_alerts(payload: bytes) -> list[ServerMessage]:
    """Alert record payload -> alert messages; a dangling odd byte is malformed."""
    out = [alert_message(payload[i], payload[i + 1]) for i in range(0, len(payload) - 1, 2)]
    if len(payload) % 2 or not payload:
        out.append(ServerMessage(MessageKind.ALERT, malformed=True))
    return out


def parse_handshake_message(type_code: int, body: bytes, tls13: bool = False) -> ServerMessage:
    """Decode one server handshake message.

    ``tls13`` selects the TLS 1.3 layouts of CertificateRequest and
    Certificate.  Raises :class:`MalformedMessage` on any encoding error.
    """
    kind = _KIND_BY_TYPE.get(type_code, MessageKind.OTHER)
    msg = ServerMessage(kind, type_code=type_code)
    r = Reader(body)
    if type_code == C.HT_SERVER_HELLO:
        msg.version = r.u16()
        msg.random = r.take(32)
        msg.session_id = r.vec8()
        if len(msg.session_id) > 32:
            raise MalformedMessage("session id longer than 32 bytes")
        msg.cipher = r.u16()
        r.u8()  # compression method
        if r.remaining():
            msg.extensions = parse_extension_block(r.vec16())
        r.done()
        if msg.random == C.HRR_RANDOM:
            msg.kind = MessageKind.HELLO_RETRY_REQUEST
    elif type_code == C.HT_ENCRYPTED_EXTENSIONS:
        msg.extensions = parse_extension_block(r.vec16())
        r.done()
    elif type_code == C.HT_CERTIFICATE_REQUEST:
        if tls13:
            r.vec8()  # certificate_request_context
            msg.extensions = parse_extension_block(r.vec16())
        else:
            r.vec8()  # certificate types
            if r.remaining() and r.remaining() != 2 + int.from_bytes(r.data[r.pos : r.pos + 2], "big"):
                r.vec16()  # signature_algorithms (TLS 1.2)
            r.vec16()  # certificate authorities
        r.done()
    elif type_code == C.HT_CERTIFICATE:
        if tls13:
            r.vec8()  # certificate_request_context
        entries = Reader(r.vec24())
        r.done()
        while entries.remaining():
            msg.cert_chain.append(entries.vec24())
            if tls13:
                exts = parse_extension_block(entries.vec16())
                msg.cert_entry_extensions.append(exts)
                msg.extensions.extend(exts)
    return msg


def safe_parse_handshake_message(type_code: int, body: bytes, tls13: bool = False) -> ServerMessage:
    """Like :func:`parse_handshake_message` but malformed input becomes a flagged message."""
    try:
        return parse_handshake_message(type_code, body, tls13)
    except MalformedMessage:
        kind = _KIND_BY_TYPE.get(type_code, MessageKind.OTHER)
        return ServerMessage(kind, type_code=type_code, malformed=True)


# --------------------------------------------------------------------------
# JSON file format for probe pools

EXTENSION_SCHEMA = {
    "type": "object",
    "required": ["ext_id", "kind"],
    "properties": {
        "ext_id": {"type": "integer", "minimum": 0, "maximum": 65535},
        "kind": {"enum": list(PAYLOAD_KINDS)},
        "values": {"type": "array", "items": {"type": ["integer", "string"]}},
        "hex": {"type": "string", "pattern": "^([0-9a-f]{2})*$"},
    },
    "additionalProperties": False,
}

CLIENT_HELLO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ClientHelloSpec",
    "type": "object",
    "required": ["id", "legacy_version", "cipher_suites", "extensions"],
    "properties": {
        "id": {"type": "string", "pattern": "^[^:|,\\n]+$"},
        "legacy_version": {"type": "integer", "minimum": 0, "maximum": 65535},
        "cipher_suites": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 65535}},
        "compression_methods": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 255}},
        "extensions": {"type": "array", "items": EXTENSION_SCHEMA},
        "session_id_policy": {"enum": ["empty", "random-32"]},
        "grease_policy": {"enum": ["none", "fixed-values"]},
    },
    "additionalProperties": False,
}

POOL_SCHEMA = {"type": "array", "items": CLIENT_HELLO_SCHEMA}
# built once; jsonschema.validate() re-checks the schema on every call
_SPEC_VALIDATOR = jsonschema.Draft202012Validator(CLIENT_HELLO_SCHEMA)


def _check_spec(d, where: str = "spec") -> None:
    err = jsonschema.exceptions.best_match(_SPEC_VALIDATOR.iter_errors(d))
    if err is not None:
        raise ValueError(f"{where}: {err.message}")


def spec_to_dict(spec: ClientHelloSpec) -> dict:
    exts = []
    for ext in spec.extensions:
        d = {"ext_id": ext.ext_id, "kind": ext.kind}
        if ext.kind == "literal":
            d["hex"] = ext.literal.hex()
        elif ext.kind not in ("empty", "sni"):
            d["values"] = list(ext.values)
        exts.append(d)
    return {
        "id": spec.id,
        "legacy_version": spec.legacy_version,
        "cipher_suites": list(spec.cipher_suites),
        "compression_methods": list(spec.compression_methods),
        "extensions": exts,
        "session_id_policy": spec.session_id_policy,
        "grease_policy": spec.grease_policy,
    }


def spec_from_dict(d: dict, where: str = "spec") -> ClientHelloSpec:
    _check_spec(d, where)
    exts = tuple(
        ExtensionTemplate(
            e["ext_id"], e["kind"], tuple(e.get("values", ())), bytes.fromhex(e.get("hex", ""))
        )
        for e in d["extensions"]
    )
    return ClientHelloSpec(
        id=d["id"],
        legacy_version=d["legacy_version"],
        cipher_suites=tuple(d["cipher_suites"]),
        compression_methods=tuple(d.get("compression_methods", (0,))),
        extensions=exts,
        session_id_policy=d.get("session_id_policy", "empty"),
        grease_policy=d.get("grease_policy", "none"),
    )


def dump_pool(specs: Iterable[ClientHelloSpec], path) -> None:
    with open(path, "w") as fh:
        json.dump([spec_to_dict(s) for s in specs], fh, indent=1)
        fh.write("\n")


def load_pool(path) -> list[ClientHelloSpec]:
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise ValueError("a pool is a JSON array of ClientHelloSpec objects")
    specs = [spec_from_dict(d, f"pool entry {i}") for i, d in enumerate(data)]
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate probe ids in pool")
    return specs
