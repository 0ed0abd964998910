"""Independent decoders used as oracles against the codec."""

import os
import struct
from pathlib import Path

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDFExpand

from tlsfp import constants as C
from tlsfp.codec import RenderContext, encode_client_hello, parse_client_hello


def u16s(data: bytes) -> list[int]:
    assert len(data) % 2 == 0
    return [v for (v,) in struct.iter_unpack("!H", data)]


def decode_body(kind: str, body: bytes):
    """Template values recovered from a rendered extension body."""
    if kind in ("literal",):
        return body
    if kind == "empty":
        assert body == b""
        return ()
    if kind == "supported_versions":
        assert body[0] == len(body) - 1
        return tuple(u16s(body[1:]))
    if kind in ("signature_algorithms", "supported_groups"):
        assert struct.unpack("!H", body[:2])[0] == len(body) - 2
        return tuple(u16s(body[2:]))
    if kind == "ec_point_formats":
        assert body[0] == len(body) - 1
        return tuple(body[1:])
    if kind == "alpn":
        assert struct.unpack("!H", body[:2])[0] == len(body) - 2
        out, i = [], 2
        while i < len(body):
            n = body[i]
            out.append(body[i + 1 : i + 1 + n].decode())
            i += 1 + n
        assert i == len(body)
        return tuple(out)
    if kind == "key_share":
        assert struct.unpack("!H", body[:2])[0] == len(body) - 2
        groups, i = [], 2
        while i < len(body):
            g, n = struct.unpack("!HH", body[i : i + 4])
            groups.append(g)
            i += 4 + n
        assert i == len(body)
        return tuple(groups)
    if kind == "sni":
        (total,) = struct.unpack("!H", body[:2])
        assert total == len(body) - 2 and body[2] == 0
        (n,) = struct.unpack("!H", body[3:5])
        return body[5 : 5 + n].decode()
    raise AssertionError(kind)


def fake_key_shares(groups) -> dict[int, bytes]:
    sizes = {29: 32, 30: 56, 23: 65, 24: 97, 25: 133}
    return {g: bytes([g & 0xFF]) * sizes.get(g, 32) for g in groups}


def ctx_for(spec, sni="example.com"):
    return RenderContext(
        sni=sni,
        key_shares=fake_key_shares(spec.key_share_groups()),
        client_random=os.urandom(32),
        session_id=os.urandom(32) if spec.session_id_policy == "random-32" else b"",
    )


def check_round_trip(spec, ctx):
    parsed = parse_client_hello(encode_client_hello(spec, ctx))
    assert parsed.legacy_version == spec.legacy_version
    assert parsed.random == ctx.client_random
    assert parsed.session_id == ctx.session_id
    assert parsed.cipher_suites == spec.effective_ciphers()
    assert parsed.compression_methods == list(spec.compression_methods)
    expected = [t for t in spec.extensions if not (t.kind == "sni" and not ctx.sni)]
    got = parsed.extensions
    if spec.grease_policy == "fixed-values":
        assert got[0] == (C.GREASE_VALUE, b"")
        got = got[1:]
    assert [i for i, _ in got] == [t.ext_id for t in expected]
    for t, (_, body) in zip(expected, got):
        value = decode_body(t.kind, body)
        if t.kind == "literal":
            assert value == t.literal
        elif t.kind == "sni":
            assert value == ctx.sni
        elif t.kind != "empty":
            assert value == t.values


def keylog_lines(path):
    return [l for l in Path(path).read_text().splitlines() if l and not l.startswith("#")]


def decrypt_first_encrypted_extensions(raw: bytes, keylog_path) -> list[tuple[int, bytes]]:
    """Decrypt the first protected server record with the server's own keylog
    (TLS_AES_128_GCM_SHA256 only) and return the EncryptedExtensions list."""
    secrets = {}
    for line in keylog_lines(keylog_path):
        label, _, secret = line.split()
        secrets[label] = bytes.fromhex(secret)
    server_secret = secrets["SERVER_HANDSHAKE_TRAFFIC_SECRET"]

    def expand(label, length):
        full = b"tls13 " + label
        info = struct.pack("!HB", length, len(full)) + full + b"\x00"
        return HKDFExpand(hashes.SHA256(), length, info).derive(server_secret)

    key, iv = expand(b"key", 16), expand(b"iv", 12)
    i = 0
    while True:
        ctype, _, length = struct.unpack("!BHH", raw[i : i + 5])
        if ctype == 23:
            break
        i += 5 + length
    header, body = raw[i : i + 5], raw[i + 5 : i + 5 + length]
    inner = AESGCM(key).decrypt(iv, body, header).rstrip(b"\x00")[:-1]
    assert inner[0] == C.HT_ENCRYPTED_EXTENSIONS
    n = int.from_bytes(inner[1:4], "big")
    ee_body = inner[4 : 4 + n]
    exts, j = [], 2
    while j < len(ee_body):
        eid, elen = struct.unpack("!HH", ee_body[j : j + 4])
        exts.append((eid, ee_body[j + 4 : j + 4 + elen]))
        j += 4 + elen
    return exts
