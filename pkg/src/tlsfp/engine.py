"""Run one probe against one endpoint and record how the server reacts.

The client speaks just enough TLS to see every fingerprintable message:
TLS 1.3 handshake traffic is decrypted, and when the server's choices are
supported the client finishes the handshake (TLS 1.3 and TLS 1.2 AEAD
suites) so an HTTP request can follow.
"""

from __future__ import annotations

import hashlib
import logging
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass, field, replace

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import dh, ec, padding, rsa, x448, x25519
from cryptography import x509

from . import constants as C
from .certs import verify_certificate_chain
from .codec import (
    ClientHelloSpec,
    ExtensionTemplate,
    HandshakeReassembler,
    MalformedMessage,
    MalformedRecordHeader,
    MessageKind,
    Reader,
    RecordBuffer,
    RenderContext,
    ServerMessage,
    UnrenderableTemplate,
    encode_client_hello,
    frame_record,
    handshake_message,
    parse_alerts,
    safe_parse_handshake_message,
)
from .keyschedule import (
    RecordProtection12,
    RecordProtection13,
    UnsupportedCipher,
    derive_application_secrets,
    derive_handshake_keys,
    finished_verify_data,
    key_block12,
    master_secret12,
    message_hash,
    prf12,
    tls12_suite,
    tls13_suite,
    traffic_key_iv,
)
from .observation import HandshakeObservation, Target, classify_outcome

log = logging.getLogger(__name__)

MIN_TRANSCRIPT_CAP = 64 * 1024


@dataclass
class EngineConfig:
    connect_timeout: float = 5.0
    read_timeout: float = 10.0
    max_transcript_bytes: int = 256 * 1024
    complete_handshake: bool = True
    follow_hrr: bool = False
    fetch_http_header: bool = False
    trust_store: list = field(default_factory=list)
    keylog_path: str | None = None
    capture_raw: bool = False

    def __post_init__(self):
        if self.connect_timeout <= 0 or self.read_timeout <= 0:
            raise ValueError("timeouts must be positive")
        if self.max_transcript_bytes < MIN_TRANSCRIPT_CAP:
            raise ValueError(f"max_transcript_bytes must be >= {MIN_TRANSCRIPT_CAP}")


# --------------------------------------------------------------------------
# Ephemeral keys

_EC_CURVES = {
    C.GROUP_SECP256R1: ec.SECP256R1,
    C.GROUP_SECP384R1: ec.SECP384R1,
    C.GROUP_SECP521R1: ec.SECP521R1,
}
SUPPORTED_GROUPS = frozenset({*_EC_CURVES, C.GROUP_X25519, C.GROUP_X448})


def generate_key(group: int):
    if group == C.GROUP_X25519:
        return x25519.X25519PrivateKey.generate()
    if group == C.GROUP_X448:
        return x448.X448PrivateKey.generate()
    if group in _EC_CURVES:
        return ec.generate_private_key(_EC_CURVES[group]())
    raise UnrenderableTemplate(f"no key generator for group {group}")


def public_bytes(key) -> bytes:
    if isinstance(key, ec.EllipticCurvePrivateKey):
        return key.public_key().public_bytes(serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint)
    return key.public_key().public_bytes_raw()


def shared_secret(group: int, key, peer: bytes) -> bytes:
    if group == C.GROUP_X25519:
        return key.exchange(x25519.X25519PublicKey.from_public_bytes(peer))
    if group == C.GROUP_X448:
        return key.exchange(x448.X448PublicKey.from_public_bytes(peer))
    pub = ec.EllipticCurvePublicKey.from_encoded_point(_EC_CURVES[group](), peer)
    return key.exchange(ec.ECDH(), pub)


# --------------------------------------------------------------------------
# Key log (NSS key log format)

_keylog_lock = threading.Lock()


def _keylog(path: str | None, label: str, client_random: bytes, secret: bytes) -> None:
    if not path:
        return
    with _keylog_lock, open(path, "a") as fh:
        fh.write(f"{label} {client_random.hex()} {secret.hex()}\n")


# --------------------------------------------------------------------------
# Transport


class _TransportClosed(Exception):
    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


class _Conn:
    def __init__(self, sock: socket.socket, deadline: float, cap: int, capture: bool):
        self.sock = sock
        self.deadline = deadline
        self.cap = cap
        self.records = RecordBuffer()
        self.received = 0
        self.raw = bytearray() if capture else None

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def read_record(self):
        while True:
            rec = self.records.next_record()
            if rec is not None:
                return rec
            remaining = self.deadline - time.monotonic()
            if remaining <= 0:
                raise _TransportClosed("timeout")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise _TransportClosed("timeout") from None
            except ConnectionResetError:
                raise _TransportClosed("reset") from None
            except OSError as exc:
                raise _TransportClosed(f"error:{exc.errno}") from None
            if not chunk:
                raise _TransportClosed("closed")
            self.received += len(chunk)
            if self.raw is not None:
                self.raw += chunk
            if self.received > self.cap:
                raise _TransportClosed("cap")
            self.records.feed(chunk)


def _connect(target: Target, timeout: float) -> socket.socket | str:
    try:
        return socket.create_connection((target.ip, target.port), timeout=timeout)
    except ConnectionRefusedError:
        return "refused"
    except ConnectionResetError:
        return "reset"
    except socket.timeout:
        return "timeout"
    except socket.gaierror:
        return "resolve"
    except OSError as exc:
        return f"unreachable:{exc.errno}"


# --------------------------------------------------------------------------
# Established session


class TLSSession:
    """Application-data channel over a completed handshake."""

    def __init__(self, conn: _Conn, write, read, tls13: bool, server_name: str):
        self.conn = conn
        self.write = write
        self.read = read
        self.tls13 = tls13
        self.server_name = server_name
        self.closed = False

    def send(self, data: bytes) -> None:
        for i in range(0, len(data), 1 << 14):
            self.conn.send(self.write.seal(C.CT_APPLICATION_DATA, data[i : i + (1 << 14)]))

    def recv(self, timeout: float) -> bytes:
        """Next chunk of application data; b"" on close, alert or timeout."""
        if self.closed:
            return b""
        self.conn.deadline = time.monotonic() + timeout
        self.conn.cap = float("inf")
        while True:
            try:
                rec = self.conn.read_record()
            except (_TransportClosed, MalformedRecordHeader):
                self.closed = True
                return b""
            try:
                if self.tls13:
                    if rec.content_type != C.CT_APPLICATION_DATA:
                        continue
                    ctype, data = self.read.open(rec.payload)
                else:
                    ctype = rec.content_type
                    data = self.read.open(ctype, rec.payload, rec.version)
            except Exception:
                self.closed = True
                return b""
            if ctype == C.CT_APPLICATION_DATA:
                if data:
                    return data
            elif ctype == C.CT_ALERT:
                self.closed = True
                return b""

    def close(self) -> None:
        try:
            if not self.closed:
                self.conn.send(self.write.seal(C.CT_ALERT, b"\x01\x00"))
        except OSError:
            pass
        self.closed = True
        self.conn.sock.close()


def fetch_http_server_header(session: TLSSession, read_timeout: float = 5.0) -> str | None:
    """Send ``GET /`` and return the Server response header, if any."""
    request = (
        f"GET / HTTP/1.1\r\nHost: {session.server_name}\r\nUser-Agent: tlsfp\r\n"
        "Accept: */*\r\nConnection: close\r\n\r\n"
    ).encode()
    try:
        session.send(request)
    except OSError:
        return None
    deadline = time.monotonic() + read_timeout
    buf = b""
    while b"\r\n\r\n" not in buf and len(buf) < 65536:
        left = deadline - time.monotonic()
        if left <= 0:
            break
        chunk = session.recv(left)
        if not chunk:
            break
        buf += chunk
    head, sep, _ = buf.partition(b"\r\n\r\n")
    if not sep:
        return None
    lines = head.decode("latin-1").split("\r\n")
    if not lines[0].startswith("HTTP/1."):
        return None
    for line in lines[1:]:
        name, colon, value = line.partition(":")
        if colon and name.strip().lower() == "server":
            return value.strip()
    return None


# --------------------------------------------------------------------------
# Handshake driver


class _Stop(Exception):
    pass


class _Handshake:
    def __init__(self, target: Target, spec: ClientHelloSpec, config: EngineConfig, ctx, keys):
        self.target = target
        self.spec = spec
        self.config = config
        self.ctx = ctx
        self.keys = keys
        self.messages: list[ServerMessage] = []
        self.transcript = b""
        self.first_client_hello = b""
        self.reasm = HandshakeReassembler()
        self.tls13 = False
        self.version = None
        self.cipher = None
        self.server_random = b""
        self.retried = False
        self.hs_keys = None
        self.read13 = None
        self.read12 = None
        self.session: TLSSession | None = None
        self.server_exts: list = []
        # TLS 1.2 state
        self.ske = None
        self.cert_chain: list[bytes] = []
        self.cert_requested = False
        self.client_finished12 = None
        self.master12 = None
        self.suite12 = None
        self.write12 = None

    # -- helpers
    def mark(self, kind: MessageKind) -> None:
        self.messages.append(ServerMessage(kind))

    def send_client_hello(self, conn: _Conn, spec: ClientHelloSpec) -> bytes:
        ch = encode_client_hello(spec, self.ctx)
        rec_version = C.SSL3 if spec.legacy_version <= C.SSL3 else C.TLS10
        conn.send(frame_record(C.CT_HANDSHAKE, ch, rec_version))
        return ch

    # -- main loop
    def run(self, conn: _Conn) -> None:
        self.first_client_hello = self.send_client_hello(conn, self.spec)
        self.transcript = self.first_client_hello
        while True:
            rec = conn.read_record()
            if rec.content_type == C.CT_CHANGE_CIPHER_SPEC:
                if self.write12 is not None and self.read12 is None:
                    self._enable_read12()
                continue
            if rec.content_type == C.CT_APPLICATION_DATA and self.read13 is not None:
                try:
                    ctype, payload = self.read13.open(rec.payload)
                except Exception:
                    self.mark(MessageKind.UNDECRYPTABLE)
                    raise _Stop
                self.dispatch(conn, ctype, payload)
                continue
            if self.read12 is not None and rec.content_type in (C.CT_HANDSHAKE, C.CT_ALERT):
                try:
                    payload = self.read12.open(rec.content_type, rec.payload, rec.version)
                except Exception:
                    self.mark(MessageKind.UNDECRYPTABLE)
                    raise _Stop
                self.dispatch(conn, rec.content_type, payload)
                continue
            if rec.content_type == C.CT_APPLICATION_DATA:
                self.mark(MessageKind.UNDECRYPTABLE)
                raise _Stop
            self.dispatch(conn, rec.content_type, rec.payload)

    def dispatch(self, conn: _Conn, ctype: int, payload: bytes) -> None:
        if ctype == C.CT_ALERT:
            self.messages.extend(parse_alerts(payload))
            raise _Stop
        if ctype != C.CT_HANDSHAKE:
            return
        for htype, body, raw in self.reasm.feed(payload):
            self.on_message(conn, htype, body, raw)

    def on_message(self, conn: _Conn, htype: int, body: bytes, raw: bytes) -> None:
        if htype == C.HT_SERVER_HELLO:
            self.on_server_hello(conn, body, raw)
            return
        if self.version is None:
            # anything before a ServerHello is recorded but ends collection
            self.messages.append(safe_parse_handshake_message(htype, body))
            raise _Stop
        if self.tls13:
            self.on_message13(conn, htype, body, raw)
        else:
            self.on_message12(conn, htype, body, raw)

    def on_server_hello(self, conn: _Conn, body: bytes, raw: bytes) -> None:
        msg = safe_parse_handshake_message(C.HT_SERVER_HELLO, body)
        self.messages.append(msg)
        if msg.malformed:
            raise _Stop
        if msg.kind == MessageKind.HELLO_RETRY_REQUEST:
            self.version = msg.selected_version()
            if not self.config.follow_hrr or self.retried:
                raise _Stop
            self.retry(conn, msg, raw)
            return
        self.version = msg.selected_version()
        self.cipher = msg.cipher
        self.server_random = msg.random
        self.server_exts = msg.extensions
        self.transcript += raw
        self.tls13 = self.version == C.TLS13
        if self.tls13:
            self.setup13(msg)

    def retry(self, conn: _Conn, hrr: ServerMessage, raw: bytes) -> None:
        self.retried = True
        ks = hrr.extension(C.EXT_KEY_SHARE)
        group = int.from_bytes(ks, "big") if ks and len(ks) == 2 else None
        templates = []
        for ext in self.spec.extensions:
            if ext.kind == "key_share" and group is not None:
                ext = replace(ext, values=(group,))
            templates.append(ext)
            if ext.kind == "key_share" and hrr.extension(C.EXT_COOKIE) is not None:
                templates.append(ExtensionTemplate(C.EXT_COOKIE, "literal", literal=hrr.extension(C.EXT_COOKIE)))
        spec2 = replace(self.spec, extensions=tuple(templates))
        if group is not None and group not in self.keys:
            if group not in SUPPORTED_GROUPS:
                self.mark(MessageKind.UNDECRYPTABLE)
                raise _Stop
            self.keys[group] = generate_key(group)
            self.ctx.key_shares[group] = public_bytes(self.keys[group])
        try:
            hash_name = tls13_suite(hrr.cipher).hash_name
        except UnsupportedCipher:
            self.mark(MessageKind.UNDECRYPTABLE)
            raise _Stop from None
        ch2 = self.send_client_hello(conn, spec2)
        self.transcript = message_hash(self.first_client_hello, hash_name) + raw + ch2

    # -- TLS 1.3
    def setup13(self, sh: ServerMessage) -> None:
        ks = sh.extension(C.EXT_KEY_SHARE)
        try:
            r = Reader(ks or b"")
            group = r.u16()
            peer = r.vec16()
            key = self.keys[group]
            secret = shared_secret(group, key, peer)
            self.hs_keys = derive_handshake_keys(self.transcript, secret, sh.cipher)
        except (MalformedMessage, KeyError, ValueError, UnsupportedCipher):
            self.mark(MessageKind.UNDECRYPTABLE)
            raise _Stop from None
        k = self.hs_keys
        self.read13 = RecordProtection13(k.suite, k.server_key, k.server_iv)
        _keylog(self.config.keylog_path, "CLIENT_HANDSHAKE_TRAFFIC_SECRET", self.ctx.client_random, k.client_secret)
        _keylog(self.config.keylog_path, "SERVER_HANDSHAKE_TRAFFIC_SECRET", self.ctx.client_random, k.server_secret)

    def on_message13(self, conn: _Conn, htype: int, body: bytes, raw: bytes) -> None:
        if htype in (C.HT_ENCRYPTED_EXTENSIONS, C.HT_CERTIFICATE_REQUEST, C.HT_CERTIFICATE):
            msg = safe_parse_handshake_message(htype, body, tls13=True)
            self.messages.append(msg)
            if htype == C.HT_CERTIFICATE_REQUEST:
                self.cert_requested = True
                self.cert_request_context = body[1 : 1 + body[0]] if body else b""
            if htype == C.HT_CERTIFICATE and not msg.malformed:
                self.cert_chain = msg.cert_chain
        elif htype == C.HT_FINISHED:
            h = self.hs_keys.suite.hash_name
            expected = finished_verify_data(self.hs_keys.server_secret, self.transcript, h)
            self.transcript += raw
            if body == expected and self.config.complete_handshake:
                self.finish13(conn)
            raise _Stop
        elif htype != C.HT_CERTIFICATE_VERIFY:
            self.messages.append(ServerMessage(MessageKind.OTHER, type_code=htype))
        self.transcript += raw

    def finish13(self, conn: _Conn) -> None:
        k = self.hs_keys
        h = k.suite.hash_name
        app = derive_application_secrets(k, self.transcript)
        write = RecordProtection13(k.suite, k.client_key, k.client_iv)
        flight = b""
        if self.cert_requested:
            cert = handshake_message(C.HT_CERTIFICATE, bytes([len(self.cert_request_context)]) + self.cert_request_context + b"\x00\x00\x00")
            self.transcript += cert
            flight += write.seal(C.CT_HANDSHAKE, cert)
        fin = handshake_message(C.HT_FINISHED, finished_verify_data(k.client_secret, self.transcript, h))
        self.transcript += fin
        flight += write.seal(C.CT_HANDSHAKE, fin)
        conn.send(frame_record(C.CT_CHANGE_CIPHER_SPEC, b"\x01", C.TLS12) + flight)
        ck, civ = traffic_key_iv(app.client_secret, k.suite)
        sk, siv = traffic_key_iv(app.server_secret, k.suite)
        _keylog(self.config.keylog_path, "CLIENT_TRAFFIC_SECRET_0", self.ctx.client_random, app.client_secret)
        _keylog(self.config.keylog_path, "SERVER_TRAFFIC_SECRET_0", self.ctx.client_random, app.server_secret)
        self.session = TLSSession(
            conn,
            RecordProtection13(k.suite, ck, civ),
            RecordProtection13(k.suite, sk, siv),
            True,
            self.target.domain or self.target.ip,
        )

    # -- TLS <= 1.2
    def on_message12(self, conn: _Conn, htype: int, body: bytes, raw: bytes) -> None:
        if self.client_finished12 is not None:
            # only a session ticket and the server Finished are expected now
            if htype == C.HT_NEW_SESSION_TICKET:
                self.transcript += raw
                return
            if htype == C.HT_FINISHED:
                h = self.suite12.hash_name
                expected = prf12(self.master12, b"server finished", hashlib.new(h, self.transcript).digest(), 12, h)
                if body == expected:
                    self.session = TLSSession(conn, self.write12, self.read12, False, self.target.domain or self.target.ip)
            raise _Stop
        if htype in (C.HT_CERTIFICATE, C.HT_CERTIFICATE_REQUEST):
            msg = safe_parse_handshake_message(htype, body, tls13=False)
            self.messages.append(msg)
            if htype == C.HT_CERTIFICATE and not msg.malformed:
                self.cert_chain = msg.cert_chain
            if htype == C.HT_CERTIFICATE_REQUEST:
                self.cert_requested = True
        elif htype == C.HT_SERVER_KEY_EXCHANGE:
            self.ske = body
        elif htype != C.HT_SERVER_HELLO_DONE:
            self.messages.append(ServerMessage(MessageKind.OTHER, type_code=htype))
        self.transcript += raw
        if htype == C.HT_SERVER_HELLO_DONE:
            if not (self.config.complete_handshake and self.version == C.TLS12 and self.finish12(conn)):
                raise _Stop

    def finish12(self, conn: _Conn) -> bool:
        try:
            suite = tls12_suite(self.cipher)
            pre_master, cke_body = self._key_exchange12(suite)
        except (UnsupportedCipher, MalformedMessage, ValueError, KeyError, TypeError):
            return False
        flight_plain = b""
        if self.cert_requested:
            cert = handshake_message(C.HT_CERTIFICATE, b"\x00\x00\x00")
            self.transcript += cert
            flight_plain += cert
        cke = handshake_message(C.HT_CLIENT_KEY_EXCHANGE, cke_body)
        self.transcript += cke
        flight_plain += cke
        ems = any(i == C.EXT_EXTENDED_MASTER_SECRET for i, _ in self.server_exts)
        session_hash = hashlib.new(suite.hash_name, self.transcript).digest() if ems else None
        master = master_secret12(pre_master, self.ctx.client_random, self.server_random, suite, session_hash)
        ck, sk, civ, siv = key_block12(master, self.ctx.client_random, self.server_random, suite)
        self.suite12, self.master12 = suite, master
        self.write12 = RecordProtection12(suite, ck, civ)
        self._read12_keys = (sk, siv)
        vd = prf12(master, b"client finished", hashlib.new(suite.hash_name, self.transcript).digest(), 12, suite.hash_name)
        fin = handshake_message(C.HT_FINISHED, vd)
        self.transcript += fin
        self.client_finished12 = fin
        _keylog(self.config.keylog_path, "CLIENT_RANDOM", self.ctx.client_random, master)
        conn.send(
            frame_record(C.CT_HANDSHAKE, flight_plain, C.TLS12)
            + frame_record(C.CT_CHANGE_CIPHER_SPEC, b"\x01", C.TLS12)
            + self.write12.seal(C.CT_HANDSHAKE, fin)
        )
        return True

    def _enable_read12(self) -> None:
        sk, siv = self._read12_keys
        self.read12 = RecordProtection12(self.suite12, sk, siv)

    def _key_exchange12(self, suite):
        if suite.kx == "ecdhe":
            r = Reader(self.ske or b"")
            if r.u8() != 3:
                raise MalformedMessage("only named curves are supported")
            group = r.u16()
            peer = r.vec8()
            if group not in SUPPORTED_GROUPS:
                raise KeyError(group)
            key = self.keys.get(group) or generate_key(group)
            return shared_secret(group, key, peer), bytes([len(public_bytes(key))]) + public_bytes(key)
        if suite.kx == "dhe":
            r = Reader(self.ske or b"")
            p = int.from_bytes(r.vec16(), "big")
            g = int.from_bytes(r.vec16(), "big")
            ys = int.from_bytes(r.vec16(), "big")
            params = dh.DHParameterNumbers(p, g).parameters()
            priv = params.generate_private_key()
            peer = dh.DHPublicNumbers(ys, dh.DHParameterNumbers(p, g)).public_key()
            secret = priv.exchange(peer).lstrip(b"\x00")
            yc = priv.public_key().public_numbers().y
            yc_bytes = yc.to_bytes((yc.bit_length() + 7) // 8, "big")
            return secret, struct.pack("!H", len(yc_bytes)) + yc_bytes
        if suite.kx == "rsa":
            leaf = x509.load_der_x509_certificate(self.cert_chain[0])
            pub = leaf.public_key()
            if not isinstance(pub, rsa.RSAPublicKey):
                raise TypeError("RSA key exchange needs an RSA certificate")
            pre_master = struct.pack("!H", self.spec.legacy_version if self.spec.legacy_version <= C.TLS12 else C.TLS12) + os.urandom(46)
            enc = pub.encrypt(pre_master, padding.PKCS1v15())
            return pre_master, struct.pack("!H", len(enc)) + enc
        raise UnsupportedCipher(suite.kx)


def render_context(spec: ClientHelloSpec, sni: str | None):
    """Fresh ephemeral keys and randoms for one connection."""
    keys = {g: generate_key(g) for g in spec.key_share_groups()}
    ctx = RenderContext.fresh(spec, sni=sni, key_shares={g: public_bytes(k) for g, k in keys.items()})
    return ctx, keys


def perform_handshake(target: Target, spec: ClientHelloSpec, config: EngineConfig | None = None,
                      *, keep_session: bool = False) -> HandshakeObservation | tuple:
    """Probe ``target`` with ``spec``.

    Never raises for network or protocol problems: TCP-level failures come
    back as ``Outcome.TRANSPORT_ERROR`` and everything else as an
    observation.  With ``keep_session`` the established :class:`TLSSession`
    (or None) is returned alongside the observation and the caller owns it.
    """
    config = config or EngineConfig()
    ctx, keys = render_context(spec, target.domain)
    started = time.time()
    sock = _connect(target, config.connect_timeout)
    if isinstance(sock, str):
        obs = HandshakeObservation.transport_error(spec.id, target, sock)
        obs.timestamp = started
        return (obs, None) if keep_session else obs
    conn = _Conn(sock, time.monotonic() + config.read_timeout, config.max_transcript_bytes, config.capture_raw)
    hs = _Handshake(target, spec, config, ctx, keys)
    try:
        hs.run(conn)
    except _Stop:
        pass
    except _TransportClosed as exc:
        if conn.received == 0:
            sock.close()
            obs = HandshakeObservation.transport_error(spec.id, target, exc.kind)
            obs.timestamp = started
            return (obs, None) if keep_session else obs
        if exc.kind == "timeout":
            hs.mark(MessageKind.TIMEOUT)
        elif exc.kind == "cap" or conn.records.pending() or hs.reasm.pending():
            hs.mark(MessageKind.TRUNCATED)
    except MalformedRecordHeader:
        hs.mark(MessageKind.MALFORMED_RECORD)
    except (BrokenPipeError, ConnectionResetError):
        if conn.received == 0:
            sock.close()
            obs = HandshakeObservation.transport_error(spec.id, target, "reset")
            return (obs, None) if keep_session else obs

    obs = HandshakeObservation(
        probe_id=spec.id,
        target=target,
        outcome=classify_outcome(hs.messages),
        messages=hs.messages,
        alerts=[m.alert for m in hs.messages if m.kind == MessageKind.ALERT and m.alert is not None],
        negotiated_version=hs.version,
        timestamp=started,
    )
    if config.capture_raw:
        obs.raw_server_bytes = bytes(conn.raw)
    if hs.cert_chain:
        obs.cert_validity = verify_certificate_chain(hs.cert_chain, target.domain, config.trust_store)
    session = hs.session
    if session is not None and config.fetch_http_header:
        obs.http_server_header = fetch_http_server_header(session, config.read_timeout)
    if keep_session:
        return obs, session
    if session is not None:
        session.close()
    else:
        sock.close()
    return obs
