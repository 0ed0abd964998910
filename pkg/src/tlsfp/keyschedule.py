"""TLS 1.3 key schedule, TLS 1.2 PRF and AEAD record protection."""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers.aead import AESCCM, AESGCM, ChaCha20Poly1305


class UnsupportedCipher(Exception):
    pass


@dataclass(frozen=True)
class AeadSuite:
    code: int
    hash_name: str
    key_len: int
    aead: str  # "gcm" | "chacha" | "ccm" | "ccm8"
    # TLS 1.2 only: how the server key exchange works ("ecdhe" | "dhe" | "rsa")
    kx: str | None = None

    @property
    def hash_len(self) -> int:
        return hashlib.new(self.hash_name).digest_size

    def new_aead(self, key: bytes):
        if self.aead == "gcm":
            return AESGCM(key)
        if self.aead == "chacha":
            return ChaCha20Poly1305(key)
        if self.aead == "ccm":
            return AESCCM(key)
        if self.aead == "ccm8":
            return AESCCM(key, tag_length=8)
        raise UnsupportedCipher(self.aead)  # pragma: no cover


TLS13_SUITES = {
    0x1301: AeadSuite(0x1301, "sha256", 16, "gcm"),
    0x1302: AeadSuite(0x1302, "sha384", 32, "gcm"),
    0x1303: AeadSuite(0x1303, "sha256", 32, "chacha"),
    0x1304: AeadSuite(0x1304, "sha256", 16, "ccm"),
    0x1305: AeadSuite(0x1305, "sha256", 16, "ccm8"),
}

TLS12_SUITES = {
    0xC02B: AeadSuite(0xC02B, "sha256", 16, "gcm", "ecdhe"),
    0xC02F: AeadSuite(0xC02F, "sha256", 16, "gcm", "ecdhe"),
    0xC02C: AeadSuite(0xC02C, "sha384", 32, "gcm", "ecdhe"),
    0xC030: AeadSuite(0xC030, "sha384", 32, "gcm", "ecdhe"),
    0xCCA8: AeadSuite(0xCCA8, "sha256", 32, "chacha", "ecdhe"),
    0xCCA9: AeadSuite(0xCCA9, "sha256", 32, "chacha", "ecdhe"),
    0x009E: AeadSuite(0x009E, "sha256", 16, "gcm", "dhe"),
    0x009F: AeadSuite(0x009F, "sha384", 32, "gcm", "dhe"),
    0xCCAA: AeadSuite(0xCCAA, "sha256", 32, "chacha", "dhe"),
    0x009C: AeadSuite(0x009C, "sha256", 16, "gcm", "rsa"),
    0x009D: AeadSuite(0x009D, "sha384", 32, "gcm", "rsa"),
}


def tls13_suite(code: int) -> AeadSuite:
    try:
        return TLS13_SUITES[code]
    except KeyError:
        raise UnsupportedCipher(f"cipher {code:#06x} is not a supported TLS 1.3 suite") from None


def tls12_suite(code: int) -> AeadSuite:
    try:
        return TLS12_SUITES[code]
    except KeyError:
        raise UnsupportedCipher(f"cipher {code:#06x} is not a supported TLS 1.2 AEAD suite") from None


# --------------------------------------------------------------------------
# HKDF (RFC 5869) and the TLS 1.3 labels


def hkdf_extract(salt: bytes, ikm: bytes, hash_name: str = "sha256") -> bytes:
    if not salt:
        salt = bytes(hashlib.new(hash_name).digest_size)
    return hmac.new(salt, ikm, hash_name).digest()


def hkdf_expand(prk: bytes, info: bytes, length: int, hash_name: str = "sha256") -> bytes:
    out, block, counter = b"", b"", 1
    while len(out) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hash_name).digest()
        out += block
        counter += 1
    return out[:length]


def hkdf_expand_label(secret: bytes, label: bytes, context: bytes, length: int, hash_name: str = "sha256") -> bytes:
    full = b"tls13 " + label
    info = struct.pack("!HB", length, len(full)) + full + bytes([len(context)]) + context
    return hkdf_expand(secret, info, length, hash_name)


def derive_secret(secret: bytes, label: bytes, transcript: bytes, hash_name: str = "sha256") -> bytes:
    digest = hashlib.new(hash_name, transcript).digest()
    return hkdf_expand_label(secret, label, digest, len(digest), hash_name)


def traffic_key_iv(secret: bytes, suite: AeadSuite) -> tuple[bytes, bytes]:
    key = hkdf_expand_label(secret, b"key", b"", suite.key_len, suite.hash_name)
    iv = hkdf_expand_label(secret, b"iv", b"", 12, suite.hash_name)
    return key, iv


@dataclass(frozen=True)
class HandshakeKeys:
    suite: AeadSuite
    handshake_secret: bytes
    client_secret: bytes
    server_secret: bytes
    client_key: bytes
    client_iv: bytes
    server_key: bytes
    server_iv: bytes


@dataclass(frozen=True)
class ApplicationKeys:
    master_secret: bytes
    client_secret: bytes
    server_secret: bytes


def message_hash(first_client_hello: bytes, hash_name: str) -> bytes:
    """Synthetic transcript entry that replaces ClientHello1 after a HelloRetryRequest."""
    digest = hashlib.new(hash_name, first_client_hello).digest()
    return bytes([254, 0, 0, len(digest)]) + digest


def derive_handshake_keys(transcript: bytes, shared_secret: bytes, cipher_suite: int) -> HandshakeKeys:
    """Handshake traffic secrets and keys.

    ``transcript`` is the concatenation of handshake messages from
    ClientHello up to and including ServerHello.
    """
    if not transcript:
        raise ValueError("empty handshake transcript")
    if not shared_secret:
        raise ValueError("empty shared secret")
    suite = tls13_suite(cipher_suite)
    h = suite.hash_name
    zeros = bytes(suite.hash_len)
    early = hkdf_extract(zeros, zeros, h)
    salt = derive_secret(early, b"derived", b"", h)
    hs = hkdf_extract(salt, shared_secret, h)
    c = derive_secret(hs, b"c hs traffic", transcript, h)
    s = derive_secret(hs, b"s hs traffic", transcript, h)
    ck, civ = traffic_key_iv(c, suite)
    sk, siv = traffic_key_iv(s, suite)
    return HandshakeKeys(suite, hs, c, s, ck, civ, sk, siv)


def derive_application_secrets(keys: HandshakeKeys, transcript: bytes) -> ApplicationKeys:
    """``transcript`` runs from ClientHello through the server Finished."""
    h = keys.suite.hash_name
    zeros = bytes(keys.suite.hash_len)
    salt = derive_secret(keys.handshake_secret, b"derived", b"", h)
    master = hkdf_extract(salt, zeros, h)
    return ApplicationKeys(
        master,
        derive_secret(master, b"c ap traffic", transcript, h),
        derive_secret(master, b"s ap traffic", transcript, h),
    )


def finished_verify_data(base_secret: bytes, transcript: bytes, hash_name: str) -> bytes:
    size = hashlib.new(hash_name).digest_size
    finished_key = hkdf_expand_label(base_secret, b"finished", b"", size, hash_name)
    return hmac.new(finished_key, hashlib.new(hash_name, transcript).digest(), hash_name).digest()


# --------------------------------------------------------------------------
# TLS 1.2 PRF


def prf12(secret: bytes, label: bytes, seed: bytes, length: int, hash_name: str = "sha256") -> bytes:
    seed = label + seed
    out, a = b"", seed
    while len(out) < length:
        a = hmac.new(secret, a, hash_name).digest()
        out += hmac.new(secret, a + seed, hash_name).digest()
    return out[:length]


def master_secret12(pre_master: bytes, client_random: bytes, server_random: bytes, suite: AeadSuite,
                    session_hash: bytes | None = None) -> bytes:
    if session_hash is not None:
        return prf12(pre_master, b"extended master secret", session_hash, 48, suite.hash_name)
    return prf12(pre_master, b"master secret", client_random + server_random, 48, suite.hash_name)


def key_block12(master: bytes, client_random: bytes, server_random: bytes, suite: AeadSuite):
    """Returns (client_key, server_key, client_iv, server_iv) for an AEAD suite."""
    iv_len = 12 if suite.aead == "chacha" else 4
    size = 2 * suite.key_len + 2 * iv_len
    block = prf12(master, b"key expansion", server_random + client_random, size, suite.hash_name)
    k = suite.key_len
    return block[:k], block[k : 2 * k], block[2 * k : 2 * k + iv_len], block[2 * k + iv_len :]


# --------------------------------------------------------------------------
# Record protection


def _xor_nonce(iv: bytes, seq: int) -> bytes:
    padded = seq.to_bytes(len(iv), "big")
    return bytes(a ^ b for a, b in zip(iv, padded))


class RecordProtection13:
    """Protects one direction of a TLS 1.3 connection."""

    def __init__(self, suite: AeadSuite, key: bytes, iv: bytes):
        self.aead = suite.new_aead(key)
        self.iv = iv
        self.seq = 0
        self.tag_len = 8 if suite.aead == "ccm8" else 16

    def seal(self, content_type: int, plaintext: bytes) -> bytes:
        inner = plaintext + bytes([content_type])
        header = struct.pack("!BHH", 23, 0x0303, len(inner) + self.tag_len)
        ct = self.aead.encrypt(_xor_nonce(self.iv, self.seq), inner, header)
        self.seq += 1
        return header + ct

    def open(self, payload: bytes) -> tuple[int, bytes]:
        header = struct.pack("!BHH", 23, 0x0303, len(payload))
        inner = self.aead.decrypt(_xor_nonce(self.iv, self.seq), payload, header)
        self.seq += 1
        stripped = inner.rstrip(b"\x00")
        if not stripped:
            raise ValueError("record has no content type")
        return stripped[-1], stripped[:-1]


class RecordProtection12:
    """AEAD record protection for TLS 1.2 (GCM with explicit nonce, or ChaCha20)."""

    def __init__(self, suite: AeadSuite, key: bytes, iv: bytes):
        self.suite = suite
        self.aead = suite.new_aead(key)
        self.iv = iv
        self.seq = 0

    def _nonce(self, explicit: bytes) -> bytes:
        if self.suite.aead == "chacha":
            return _xor_nonce(self.iv, self.seq)
        return self.iv + explicit

    def seal(self, content_type: int, plaintext: bytes, version: int = 0x0303) -> bytes:
        explicit = b"" if self.suite.aead == "chacha" else self.seq.to_bytes(8, "big")
        aad = struct.pack("!QBHH", self.seq, content_type, version, len(plaintext))
        ct = self.aead.encrypt(self._nonce(explicit), plaintext, aad)
        self.seq += 1
        body = explicit + ct
        return struct.pack("!BHH", content_type, version, len(body)) + body

    def open(self, content_type: int, payload: bytes, version: int = 0x0303) -> bytes:
        if self.suite.aead == "chacha":
            explicit, ct = b"", payload
        else:
            explicit, ct = payload[:8], payload[8:]
        aad = struct.pack("!QBHH", self.seq, content_type, version, len(ct) - 16)
        pt = self.aead.decrypt(self._nonce(explicit), ct, aad)
        self.seq += 1
        return pt
