"""Offline server behaviour models.

A :class:`BehaviorModel` answers a :class:`ClientHelloSpec` with the same
:class:`HandshakeObservation` shape the live engine produces, so every
downstream step runs unchanged on simulated data.  Randomness is limited to
the per-handshake status_request coin, seeded per (target, probe, repetition).
"""

from __future__ import annotations

import functools
import hashlib
import json
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import constants as C
from .certs import CertValidity, builtin_ca, simulated_chain, verify_certificate_chain
from .codec import ClientHelloSpec, MessageKind, ServerMessage
from .features import DEFAULT_POLICY, ExtractionPolicy, extract_features
from .observation import HandshakeObservation, Outcome, Target, classify_outcome
from .probes import ResponseMatrix


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big")


# Conditions an alert policy can react to.  A value of None means the server
# ignores the condition, "timeout" means it stops answering.
ALERT_CONDITIONS = (
    "no_version_overlap",
    "no_cipher_overlap",
    "no_group_overlap",
    "alpn_mismatch",
    "missing_sni",
    "legacy_version_tls13",
    "missing_signature_algorithms",
)

DEFAULT_ALERTS = {
    "no_version_overlap": C.ALERT_PROTOCOL_VERSION,
    "no_cipher_overlap": C.ALERT_HANDSHAKE_FAILURE,
    "no_group_overlap": C.ALERT_HANDSHAKE_FAILURE,
    "alpn_mismatch": None,
    "missing_sni": None,
    "legacy_version_tls13": None,
    "missing_signature_algorithms": C.ALERT_MISSING_EXTENSION,
}

# Extensions whose value the model computes from the negotiation.
COMPUTED = frozenset({0, 1, 10, 11, 16, 28, 43, 51, C.EXT_RENEGOTIATION_INFO})
# Where TLS 1.3 puts extensions; the rest go to EncryptedExtensions.
SH_EXTENSIONS_13 = frozenset({C.EXT_SUPPORTED_VERSIONS, C.EXT_KEY_SHARE, C.EXT_PRE_SHARED_KEY})
CERT_EXTENSIONS_13 = frozenset({C.EXT_STATUS_REQUEST, C.EXT_SCT})
TLS12_ONLY = frozenset({C.EXT_EC_POINT_FORMATS, C.EXT_RENEGOTIATION_INFO, C.EXT_EXTENDED_MASTER_SECRET,
                        C.EXT_SESSION_TICKET, C.EXT_ENCRYPT_THEN_MAC})
TLS13_ONLY = frozenset({C.EXT_SUPPORTED_VERSIONS, C.EXT_KEY_SHARE, C.EXT_SUPPORTED_GROUPS})

_OCSP_STAPLE = b"\x01\x00\x00\x08simulate"
_SCT_LIST = b"\x00\x06\x00\x04sct!"


@dataclass(frozen=True)
class ServerExtension:
    ext_id: int
    value: bytes | None = None  # None: computed, or empty for unknown ids
    when: str = "offered"  # "offered" | "always"

    def __post_init__(self):
        if self.when not in ("offered", "always"):
            raise ValueError(f"bad extension condition {self.when!r}")


@dataclass(frozen=True)
class BehaviorModel:
    behavior_id: str
    supported_versions: tuple[int, ...] = (C.TLS13, C.TLS12)
    cipher_preference: tuple[int, ...] = (0x1301, 0x1302, 0x1303, 0xC02F, 0xC030, 0xC02B, 0xC02C)
    prefer_client_order: bool = False
    server_extension_order: tuple[ServerExtension, ...] = (
        ServerExtension(C.EXT_SUPPORTED_VERSIONS),
        ServerExtension(C.EXT_KEY_SHARE),
        ServerExtension(C.EXT_SERVER_NAME),
        ServerExtension(C.EXT_ALPN),
        ServerExtension(C.EXT_RENEGOTIATION_INFO),
        ServerExtension(C.EXT_EC_POINT_FORMATS),
        ServerExtension(C.EXT_EXTENDED_MASTER_SECRET),
        ServerExtension(C.EXT_STATUS_REQUEST),
    )
    alpn_preference: tuple[str, ...] = ("h2", "http/1.1")
    alert_policy: dict = field(default_factory=lambda: dict(DEFAULT_ALERTS))
    hrr_policy: str = "client-shares"  # "client-shares" | "server-preference" | "never"
    hrr_cookie: bool = False
    status_request_presence: str = "always"  # "always" | "never" | "bernoulli"
    status_request_p: float = 0.5
    selected_group_preference: tuple[int, ...] = (C.GROUP_X25519, C.GROUP_SECP256R1, C.GROUP_SECP384R1)
    request_client_cert: bool = False
    cert_names: tuple[str, ...] = ()  # empty: whatever SNI asks for
    cert_trusted: bool = True
    cert_expired: bool = False
    http_server_header: str | None = None
    unreachable: bool = False

    def __post_init__(self):
        if self.hrr_policy not in ("client-shares", "server-preference", "never"):
            raise ValueError(f"bad hrr policy {self.hrr_policy!r}")
        if self.status_request_presence not in ("always", "never", "bernoulli"):
            raise ValueError(f"bad status_request presence {self.status_request_presence!r}")
        unknown = set(self.alert_policy) - set(ALERT_CONDITIONS)
        if unknown:
            raise ValueError(f"unknown alert conditions {sorted(unknown)}")

    def alert_for(self, condition: str):
        return self.alert_policy.get(condition, DEFAULT_ALERTS[condition])

    # JSON

    def to_dict(self) -> dict:
        d = asdict(self)
        d["server_extension_order"] = [
            {"ext_id": e.ext_id, "value": None if e.value is None else e.value.hex(), "when": e.when}
            for e in self.server_extension_order
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BehaviorModel:
        d = dict(d)
        d["server_extension_order"] = tuple(
            ServerExtension(e["ext_id"], None if e.get("value") is None else bytes.fromhex(e["value"]), e.get("when", "offered"))
            for e in d.get("server_extension_order", ())
        )
        for key in ("supported_versions", "cipher_preference", "alpn_preference", "selected_group_preference", "cert_names"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def dump_population(models: Iterable[BehaviorModel], path) -> None:
    Path(path).write_text(json.dumps([m.to_dict() for m in models], indent=1))


def load_population(path) -> list[BehaviorModel]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError("population file must hold a JSON list")
    return [BehaviorModel.from_dict(d) for d in data]


# --------------------------------------------------------------------------
# Negotiation


def _cipher_versions(code: int) -> tuple[int, int]:
    """(min, max) protocol version able to use a cipher suite."""
    if code in C.TLS13_CIPHERS:
        return C.TLS13, C.TLS13
    if 0x009C <= code <= 0x00A7 or 0xC02B <= code <= 0xC032 or 0xCCA8 <= code <= 0xCCAE or 0xC09C <= code <= 0xC0AF:
        return C.TLS12, C.TLS12
    return C.SSL3, C.TLS12


def _is_ecdhe(code: int) -> bool:
    return 0xC000 <= code <= 0xC0FF or code in (0xCCA8, 0xCCA9, 0xCCAC)


def _u16_list(values: Sequence[int]) -> bytes:
    body = b"".join(v.to_bytes(2, "big") for v in values)
    return len(body).to_bytes(2, "big") + body


def _alpn_body(proto: str) -> bytes:
    p = proto.encode()
    item = bytes([len(p)]) + p
    return len(item).to_bytes(2, "big") + item


@dataclass
class _Offer:
    spec: ClientHelloSpec
    versions: list[int]
    ciphers: list[int]
    groups: list[int] | None
    key_shares: list[int]
    alpn: list[str] | None
    ext_ids: set[int]

    @classmethod
    def of(cls, spec: ClientHelloSpec) -> _Offer:
        ext = {t.ext_id: t for t in spec.extensions}
        sv = ext.get(C.EXT_SUPPORTED_VERSIONS)
        if sv is not None and sv.kind == "supported_versions":
            versions = list(sv.values)
        else:
            top = min(spec.legacy_version, C.TLS12)
            versions = [v for v in (C.TLS12, C.TLS11, C.TLS10, C.SSL3) if v <= top]
        sg = ext.get(C.EXT_SUPPORTED_GROUPS)
        ks = ext.get(C.EXT_KEY_SHARE)
        alpn = ext.get(C.EXT_ALPN)
        return cls(
            spec,
            versions,
            [c for c in spec.cipher_suites if c != C.GREASE_VALUE],
            list(sg.values) if sg is not None and sg.kind == "supported_groups" else None,
            list(ks.values) if ks is not None and ks.kind == "key_share" else [],
            list(alpn.values) if alpn is not None and alpn.kind == "alpn" else None,
            set(ext),
        )


class _Refuse(Exception):
    def __init__(self, alert):
        self.alert = alert


def _check(model: BehaviorModel, condition: str, failed: bool) -> None:
    if failed:
        action = model.alert_for(condition)
        if action is not None:
            raise _Refuse(action)


def _pick(preference: Sequence, offered: Sequence, client_order: bool):
    if client_order:
        return next((x for x in offered if x in preference), None)
    return next((x for x in preference if x in offered), None)


def _status_request_present(model: BehaviorModel, seed) -> bool:
    if model.status_request_presence == "always":
        return True
    if model.status_request_presence == "never":
        return False
    return random.Random(derive_seed(seed, "status_request")).random() < model.status_request_p


@functools.lru_cache(maxsize=8192)
def _validity(names: tuple[str, ...], trusted: bool, expired: bool, sni: str | None) -> CertValidity:
    chain = simulated_chain(names, trusted, expired)
    return verify_certificate_chain(chain, sni, [builtin_ca().cert])


def respond(
    model: BehaviorModel,
    spec: ClientHelloSpec,
    seed,
    sni: str | None = None,
    target: Target | None = None,
    fetch_http: bool = True,
) -> HandshakeObservation:
    """What ``model`` would send back to ``spec``."""
    target = target or Target(None, 443, sni)
    if target.domain is not None and sni is None:
        sni = target.domain
    if model.unreachable:
        return HandshakeObservation.transport_error(spec.id, target, "refused")
    offer = _Offer.of(spec)
    messages: list[ServerMessage] = []

    def alerted(action) -> HandshakeObservation:
        if action == "timeout":
            messages.append(ServerMessage(MessageKind.TIMEOUT))
            return HandshakeObservation(spec.id, target, classify_outcome(messages), messages)
        messages.append(ServerMessage(MessageKind.ALERT, alert=(2, int(action))))
        return HandshakeObservation(spec.id, target, classify_outcome(messages), messages, alerts=[(2, int(action))])

    try:
        _check(model, "legacy_version_tls13", spec.legacy_version > C.TLS12)
        version = next((v for v in model.supported_versions if v in offer.versions), None)
        _check(model, "no_version_overlap", version is None)
        if version is None:
            version = model.supported_versions[-1]
        tls13 = version == C.TLS13
        _check(model, "missing_sni", C.EXT_SERVER_NAME not in offer.ext_ids)
        if tls13:
            _check(model, "missing_signature_algorithms", C.EXT_SIGNATURE_ALGORITHMS not in offer.ext_ids)

        client_groups = offer.groups if offer.groups is not None else [C.GROUP_SECP256R1, C.GROUP_SECP384R1]
        mutual_groups = [g for g in model.selected_group_preference if g in client_groups]
        usable = [
            c for c in model.cipher_preference
            if _cipher_versions(c)[0] <= version <= _cipher_versions(c)[1]
            and (tls13 or not _is_ecdhe(c) or mutual_groups)
        ]
        cipher = _pick(usable, offer.ciphers, model.prefer_client_order)
        _check(model, "no_cipher_overlap", cipher is None)
        if cipher is None:
            raise _Refuse(C.ALERT_HANDSHAKE_FAILURE)

        group, hrr_group = None, None
        if tls13:
            _check(model, "no_group_overlap", not mutual_groups)
            if not mutual_groups:
                raise _Refuse(C.ALERT_HANDSHAKE_FAILURE)
            shared = [g for g in mutual_groups if g in offer.key_shares]
            if model.hrr_policy == "server-preference":
                group = mutual_groups[0] if mutual_groups[0] in offer.key_shares else None
            else:
                group = shared[0] if shared else None
            if group is None:
                if model.hrr_policy == "never":
                    raise _Refuse(C.ALERT_HANDSHAKE_FAILURE)
                hrr_group = mutual_groups[0]

        alpn = None
        if offer.alpn is not None:
            alpn = _pick(model.alpn_preference, offer.alpn, False)
            _check(model, "alpn_mismatch", alpn is None)
    except _Refuse as refusal:
        return alerted(refusal.alert)

    rng = random.Random(derive_seed(seed, "bytes"))
    server_random = rng.randbytes(32)

    if hrr_group is not None:
        exts = [(C.EXT_SUPPORTED_VERSIONS, C.TLS13.to_bytes(2, "big")), (C.EXT_KEY_SHARE, hrr_group.to_bytes(2, "big"))]
        if model.hrr_cookie:
            exts.append((C.EXT_COOKIE, b"\x00\x10" + rng.randbytes(16)))
        messages.append(ServerMessage(MessageKind.HELLO_RETRY_REQUEST, C.HT_SERVER_HELLO, C.TLS12, cipher,
                                      C.HRR_RANDOM, b"", exts))
        return HandshakeObservation(spec.id, target, classify_outcome(messages), messages, negotiated_version=C.TLS13)

    def value(ext: ServerExtension) -> bytes | None:
        """Raw body, or None when the extension is not sent."""
        i = ext.ext_id
        offered = i in offer.ext_ids
        if ext.when == "offered" and not offered:
            return None
        if (i in TLS12_ONLY) if tls13 else (i in TLS13_ONLY):
            return None
        if i == C.EXT_STATUS_REQUEST:
            if not _status_request_present(model, seed):
                return None
            return _OCSP_STAPLE if tls13 else b""
        if ext.value is not None or i not in COMPUTED:
            return ext.value or (_SCT_LIST if i == C.EXT_SCT and tls13 else b"")
        if i == C.EXT_SUPPORTED_VERSIONS:
            return version.to_bytes(2, "big")
        if i == C.EXT_KEY_SHARE:
            key = rng.randbytes(32)
            return group.to_bytes(2, "big") + len(key).to_bytes(2, "big") + key
        if i == C.EXT_ALPN:
            return None if alpn is None else _alpn_body(alpn)
        if i == C.EXT_SUPPORTED_GROUPS:
            return _u16_list(model.selected_group_preference) if tls13 else None
        if i == C.EXT_EC_POINT_FORMATS:
            return b"\x01\x00"
        if i == C.EXT_RENEGOTIATION_INFO:
            return b"\x00"
        if i in (C.EXT_MAX_FRAGMENT_LENGTH, C.EXT_RECORD_SIZE_LIMIT):
            tmpl = next(t for t in spec.extensions if t.ext_id == i)
            return tmpl.literal if tmpl.kind == "literal" else b""
        return b""  # server_name acknowledgement

    sh_exts, ee_exts, cert_exts = [], [], []
    for ext in model.server_extension_order:
        raw = value(ext)
        if raw is None:
            continue
        if not tls13 or ext.ext_id in SH_EXTENSIONS_13:
            sh_exts.append((ext.ext_id, raw))
        elif ext.ext_id in CERT_EXTENSIONS_13:
            cert_exts.append((ext.ext_id, raw))
        else:
            ee_exts.append((ext.ext_id, raw))
    if tls13:
        # mandatory regardless of the configured order
        for must in (C.EXT_SUPPORTED_VERSIONS, C.EXT_KEY_SHARE):
            if all(i != must for i, _ in sh_exts):
                sh_exts.append((must, value(ServerExtension(must, when="always"))))

    legacy = C.TLS12 if tls13 else version
    messages.append(ServerMessage(MessageKind.SERVER_HELLO, C.HT_SERVER_HELLO, legacy, cipher, server_random, b"", sh_exts))
    names = model.cert_names or ((sni,) if sni else ("server.invalid",))
    chain = list(simulated_chain(tuple(names), model.cert_trusted, model.cert_expired))
    sigalgs = _u16_list((0x0403, 0x0804, 0x0401))
    if tls13:
        messages.append(ServerMessage(MessageKind.ENCRYPTED_EXTENSIONS, C.HT_ENCRYPTED_EXTENSIONS, extensions=ee_exts))
        if model.request_client_cert:
            messages.append(ServerMessage(MessageKind.CERTIFICATE_REQUEST, C.HT_CERTIFICATE_REQUEST,
                                          extensions=[(C.EXT_SIGNATURE_ALGORITHMS, sigalgs)]))
        messages.append(ServerMessage(MessageKind.CERTIFICATE, C.HT_CERTIFICATE, extensions=list(cert_exts),
                                      cert_chain=chain, cert_entry_extensions=[list(cert_exts)] + [[] for _ in chain[1:]]))
    else:
        messages.append(ServerMessage(MessageKind.CERTIFICATE, C.HT_CERTIFICATE, cert_chain=chain))
        if model.request_client_cert:
            messages.append(ServerMessage(MessageKind.CERTIFICATE_REQUEST, C.HT_CERTIFICATE_REQUEST))

    obs = HandshakeObservation(spec.id, target, Outcome.COMPLETED, messages, negotiated_version=version)
    obs.cert_validity = _validity(tuple(names), model.cert_trusted, model.cert_expired, sni)
    if fetch_http:
        obs.http_server_header = model.http_server_header
    return obs


# --------------------------------------------------------------------------
# Populations


@dataclass(frozen=True)
class PopulationKnobs:
    tls13_fraction: float = 0.6
    tls10_fraction: float = 0.15
    shuffle_extensions: float = 0.5  # chance a model reorders its extensions
    alpn_support: float = 0.7
    strict_alerts: float = 0.3  # chance of non-default alert codes
    hrr_server_preference: float = 0.2
    client_cert: float = 0.05
    status_request_bernoulli: float = 0.0  # fraction of models with the coin-flip staple
    status_request_p: float = 0.5
    alpn_twins: int = 0  # pairs that differ only in ALPN support
    headers: tuple[str, ...] = ("nginx", "Apache", "cloudflare", "Microsoft-IIS/10.0", "")


_CIPHER_POOL = (0xC02F, 0xC030, 0xC02B, 0xC02C, 0xCCA8, 0xCCA9, 0x009C, 0x009D, 0x009E, 0xC013, 0xC014, 0x002F, 0x0035, 0x000A)
_EXTRA_EXTS = (C.EXT_SESSION_TICKET, C.EXT_MAX_FRAGMENT_LENGTH, C.EXT_RECORD_SIZE_LIMIT, C.EXT_HEARTBEAT,
               C.EXT_ENCRYPT_THEN_MAC, C.EXT_SCT)


def random_model(rng: random.Random, behavior_id: str, knobs: PopulationKnobs = PopulationKnobs()) -> BehaviorModel:
    versions = [C.TLS12]
    if rng.random() < knobs.tls13_fraction:
        versions.insert(0, C.TLS13)
    if rng.random() < knobs.tls10_fraction:
        versions += [C.TLS11, C.TLS10]
    ciphers = rng.sample(C.TLS13_CIPHERS[:3], rng.randint(1, 3)) if C.TLS13 in versions else []
    ciphers += rng.sample(_CIPHER_POOL, rng.randint(2, 8))
    exts = list(BehaviorModel.server_extension_order) + [ServerExtension(e) for e in rng.sample(_EXTRA_EXTS, rng.randint(0, 3))]
    if rng.random() < 0.3:
        exts.append(ServerExtension(C.EXT_SUPPORTED_GROUPS, when="always"))
    if rng.random() < knobs.shuffle_extensions:
        rng.shuffle(exts)
    alerts = dict(DEFAULT_ALERTS)
    if rng.random() < knobs.strict_alerts:
        alerts["no_cipher_overlap"] = rng.choice((C.ALERT_HANDSHAKE_FAILURE, C.ALERT_INSUFFICIENT_SECURITY, C.ALERT_ILLEGAL_PARAMETER))
        alerts["no_version_overlap"] = rng.choice((C.ALERT_PROTOCOL_VERSION, C.ALERT_HANDSHAKE_FAILURE, "timeout"))
        alerts["legacy_version_tls13"] = rng.choice((None, C.ALERT_PROTOCOL_VERSION))
        alerts["missing_sni"] = rng.choice((None, C.ALERT_UNRECOGNIZED_NAME))
    alpn = ()
    if rng.random() < knobs.alpn_support:
        alpn = rng.choice((("h2", "http/1.1"), ("http/1.1",), ("http/1.1", "h2"), ("h2",)))
        if rng.random() < knobs.strict_alerts:
            alerts["alpn_mismatch"] = C.ALERT_NO_APPLICATION_PROTOCOL
    groups = [C.GROUP_X25519, C.GROUP_SECP256R1, C.GROUP_SECP384R1, C.GROUP_X448, C.GROUP_SECP521R1]
    groups = groups[: rng.randint(2, 5)]
    if rng.random() < 0.3:
        rng.shuffle(groups)
    bern = rng.random() < knobs.status_request_bernoulli
    return BehaviorModel(
        behavior_id=behavior_id,
        supported_versions=tuple(versions),
        cipher_preference=tuple(ciphers),
        prefer_client_order=rng.random() < 0.2,
        server_extension_order=tuple(exts),
        alpn_preference=alpn,
        alert_policy=alerts,
        hrr_policy="server-preference" if rng.random() < knobs.hrr_server_preference else "client-shares",
        hrr_cookie=rng.random() < 0.2,
        status_request_presence="bernoulli" if bern else rng.choice(("always", "never")),
        status_request_p=knobs.status_request_p,
        selected_group_preference=tuple(groups),
        request_client_cert=rng.random() < knobs.client_cert,
        http_server_header=rng.choice(knobs.headers) or None,
    )


def generate_population(seed, n: int, knobs: PopulationKnobs = PopulationKnobs()) -> list[BehaviorModel]:
    """``n`` models; the first ``2 * knobs.alpn_twins`` form ALPN-only twin pairs."""
    if n <= 0:
        raise ValueError("population size must be positive")
    if 2 * knobs.alpn_twins > n:
        raise ValueError("not enough models for the requested ALPN twins")
    rng = random.Random(derive_seed("population", seed))
    models: list[BehaviorModel] = []
    for t in range(knobs.alpn_twins):
        base = random_model(rng, f"m{len(models):05d}", knobs)
        base = replace(base, alpn_preference=("h2", "http/1.1"), alert_policy={**base.alert_policy, "alpn_mismatch": None})
        models.append(base)
        models.append(replace(base, behavior_id=f"m{len(models):05d}", alpn_preference=("http/1.1",)))
    while len(models) < n:
        models.append(random_model(rng, f"m{len(models):05d}", knobs))
    return models


def build_matrix(
    population: Sequence[BehaviorModel],
    pool: Sequence[ClientHelloSpec],
    policy: ExtractionPolicy = DEFAULT_POLICY,
    seed=0,
    sni: str = "sim.example",
) -> ResponseMatrix:
    """Rows are behaviour ids, columns probe ids; transport errors leave holes."""
    matrix = ResponseMatrix([m.behavior_id for m in population], [p.id for p in pool])
    for m in population:
        for p in pool:
            obs = respond(m, p, derive_seed(seed, m.behavior_id, p.id), sni=sni)
            if obs.outcome != Outcome.TRANSPORT_ERROR:
                matrix.set(m.behavior_id, p.id, extract_features(obs, policy).text)
    return matrix


# --------------------------------------------------------------------------
# Simulated network


class SimulatedNetwork:
    """Maps addresses to models and answers probes like the live engine.

    Unknown addresses are unreachable.  ``repetition`` (a snapshot id in
    practice) feeds the per-handshake seed so repeated scans draw fresh
    status_request coins.
    """

    def __init__(self, hosts: dict[str, BehaviorModel], seed=0, fetch_http: bool = True):
        self.hosts = dict(hosts)
        self.seed = seed
        self.fetch_http = fetch_http

    def __call__(self, target: Target, spec: ClientHelloSpec, repetition="") -> HandshakeObservation:
        model = self.hosts.get(target.ip or "")
        if model is None:
            return HandshakeObservation.transport_error(spec.id, target, "unreachable")
        seed = derive_seed(self.seed, target.ip, target.port, target.domain, spec.id, repetition)
        return respond(model, spec, seed, sni=target.domain, target=target, fetch_http=self.fetch_http)


def assign_hosts(population: Sequence[BehaviorModel], n_targets: int, seed, skew: float = 1.0) -> dict[str, BehaviorModel]:
    """Spread ``n_targets`` addresses over models with Zipf-like popularity."""
    rng = random.Random(derive_seed("hosts", seed))
    weights = [1.0 / (i + 1) ** skew for i in range(len(population))]
    order = list(population)
    rng.shuffle(order)
    hosts = {}
    for i in range(n_targets):
        ip = f"10.{(i >> 16) & 255}.{(i >> 8) & 255}.{i & 255}"
        hosts[ip] = order[i] if i < len(order) else rng.choices(order, weights)[0]
    return hosts
