"""Random Client Hello generation and greedy probe selection.

Probe design is empirical: draw many random Client Hellos, observe which
ones split a server population into the most distinct behaviours, and keep
a small set chosen greedily by that count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import constants as C
from .codec import ClientHelloSpec, ExtensionTemplate, spec_to_dict


class EmptySpace(ValueError):
    pass


class KTooLarge(ValueError):
    pass


class UnknownColumn(KeyError):
    pass


# --------------------------------------------------------------------------
# Feature space


@dataclass(frozen=True)
class ExtensionCandidate:
    ext_id: int
    kind: str
    pool: tuple = ()
    length: tuple[int, int] = (1, 1)
    mandatory: bool = False
    literals: tuple[bytes, ...] = ()


@dataclass(frozen=True)
class FeatureSpace:
    legacy_versions: tuple[int, ...]
    supported_versions: tuple[int, ...]
    ciphers: tuple[int, ...]
    extensions: tuple[ExtensionCandidate, ...]
    cipher_count: tuple[int, int] = (1, 12)
    # field name -> banned code points; fields: cipher, version, group,
    # key_share, signature_algorithm, alpn, ec_point_format
    exclusions: dict = field(default_factory=lambda: {"key_share": frozenset({C.GROUP_SECP521R1})})
    session_id_policies: tuple[str, ...] = ("empty", "random-32")
    grease_policies: tuple[str, ...] = ("none",)

    def allowed(self, name: str, pool: Iterable) -> list:
        banned = self.exclusions.get(name, ())
        return [v for v in pool if v not in banned]


_POOL_FIELD = {
    "supported_versions": "version",
    "supported_groups": "group",
    "key_share": "key_share",
    "signature_algorithms": "signature_algorithm",
    "alpn": "alpn",
    "ec_point_formats": "ec_point_format",
}

# Groups for which the engine can produce key material.
KEYABLE_GROUPS = (C.GROUP_X25519, C.GROUP_SECP256R1, C.GROUP_SECP384R1, C.GROUP_SECP521R1, C.GROUP_X448)

_COMMON_LITERALS = (
    ExtensionCandidate(C.EXT_STATUS_REQUEST, "literal", literals=(bytes.fromhex("0100000000"),)),
    ExtensionCandidate(C.EXT_EXTENDED_MASTER_SECRET, "empty"),
    ExtensionCandidate(C.EXT_SESSION_TICKET, "empty"),
    ExtensionCandidate(C.EXT_RENEGOTIATION_INFO, "literal", literals=(b"\x00",)),
    ExtensionCandidate(C.EXT_PSK_KEY_EXCHANGE_MODES, "literal", literals=(b"\x01\x01", b"\x01\x00", b"\x02\x00\x01")),
    ExtensionCandidate(C.EXT_HEARTBEAT, "literal", literals=(b"\x01", b"\x02")),
    ExtensionCandidate(C.EXT_MAX_FRAGMENT_LENGTH, "literal", literals=(b"\x01", b"\x02", b"\x03", b"\x04")),
    ExtensionCandidate(C.EXT_RECORD_SIZE_LIMIT, "literal", literals=(b"\x40\x01", b"\x02\x00")),
    ExtensionCandidate(C.EXT_SCT, "empty"),
    ExtensionCandidate(C.EXT_ENCRYPT_THEN_MAC, "empty"),
    ExtensionCandidate(C.EXT_COMPRESS_CERTIFICATE, "literal", literals=(b"\x02\x00\x02", b"\x02\x00\x01", b"\x04\x00\x01\x00\x02")),
    ExtensionCandidate(C.EXT_PADDING, "literal", literals=(bytes(16), bytes(64))),
)


def scanner_space() -> FeatureSpace:
    """Code points the live engine understands end to end."""
    from .keyschedule import TLS12_SUITES

    return FeatureSpace(
        legacy_versions=(C.TLS10, C.TLS11, C.TLS12, C.TLS13),
        supported_versions=(C.TLS10, C.TLS11, C.TLS12, C.TLS13),
        ciphers=C.TLS13_CIPHERS + tuple(TLS12_SUITES) + (0x002F, 0x0035, 0xC013, 0xC014, 0x000A),
        extensions=(
            ExtensionCandidate(C.EXT_SERVER_NAME, "sni"),
            ExtensionCandidate(C.EXT_SUPPORTED_VERSIONS, "supported_versions", (C.TLS10, C.TLS11, C.TLS12, C.TLS13), (1, 4)),
            ExtensionCandidate(C.EXT_SUPPORTED_GROUPS, "supported_groups", KEYABLE_GROUPS, (1, 5)),
            ExtensionCandidate(C.EXT_KEY_SHARE, "key_share", KEYABLE_GROUPS, (1, 2)),
            ExtensionCandidate(C.EXT_SIGNATURE_ALGORITHMS, "signature_algorithms", C.SIGNATURE_ALGORITHMS, (1, 12)),
            ExtensionCandidate(C.EXT_ALPN, "alpn", ("h2", "http/1.1", "http/1.0", "spdy/3", "h3"), (1, 3)),
            ExtensionCandidate(C.EXT_EC_POINT_FORMATS, "ec_point_formats", (0, 1, 2), (1, 3)),
            *_COMMON_LITERALS,
        ),
    )


def iana_space() -> FeatureSpace:
    """The registry-wide space: every assigned code point may be offered."""
    return FeatureSpace(
        legacy_versions=(C.SSL3, C.TLS10, C.TLS11, C.TLS12, C.TLS13),
        supported_versions=(C.SSL3, C.TLS10, C.TLS11, C.TLS12, C.TLS13),
        ciphers=C.TLS13_CIPHERS + C.TLS12_CIPHERS + (C.TLS_EMPTY_RENEGOTIATION_INFO_SCSV, C.TLS_FALLBACK_SCSV),
        cipher_count=(1, 30),
        extensions=(
            ExtensionCandidate(C.EXT_SERVER_NAME, "sni"),
            ExtensionCandidate(C.EXT_SUPPORTED_VERSIONS, "supported_versions", (C.SSL3, C.TLS10, C.TLS11, C.TLS12, C.TLS13), (1, 5)),
            ExtensionCandidate(C.EXT_SUPPORTED_GROUPS, "supported_groups", C.ALL_GROUPS, (1, 12)),
            ExtensionCandidate(C.EXT_KEY_SHARE, "key_share", KEYABLE_GROUPS, (1, 2)),
            ExtensionCandidate(C.EXT_SIGNATURE_ALGORITHMS, "signature_algorithms", C.SIGNATURE_ALGORITHMS, (1, 23)),
            ExtensionCandidate(C.EXT_SIGNATURE_ALGORITHMS_CERT, "signature_algorithms", C.SIGNATURE_ALGORITHMS, (1, 8)),
            ExtensionCandidate(C.EXT_ALPN, "alpn", C.ALPN_PROTOCOLS, (1, 5)),
            ExtensionCandidate(C.EXT_EC_POINT_FORMATS, "ec_point_formats", (0, 1, 2), (1, 3)),
            ExtensionCandidate(C.EXT_POST_HANDSHAKE_AUTH, "empty"),
            ExtensionCandidate(19, "literal", literals=(b"\x01\x00", b"\x01\x02")),
            ExtensionCandidate(20, "literal", literals=(b"\x01\x00", b"\x01\x02")),
            ExtensionCandidate(24, "literal", literals=(b"\x00\x10\x01\x02",)),
            *_COMMON_LITERALS,
        ),
        grease_policies=("none", "fixed-values"),
    )


SPACES = {"scanner": scanner_space, "iana": iana_space}


def _spec_id(spec_fields: dict) -> str:
    blob = json.dumps(spec_fields, sort_keys=True).encode()
    return "r" + hashlib.sha1(blob).hexdigest()[:10]


def _draw(rng: random.Random, pool: Sequence, length: tuple[int, int]) -> list:
    if not pool:
        return []
    lo, hi = length
    n = rng.randint(min(lo, len(pool)), min(hi, len(pool)))
    return rng.sample(list(pool), n)


def random_client_hello(space: FeatureSpace, seed) -> ClientHelloSpec:
    """One Client Hello drawn from ``space``; deterministic per (space, seed)."""
    rng = random.Random(str(seed))
    ciphers = space.allowed("cipher", space.ciphers)
    legacy = space.allowed("version", space.legacy_versions)
    if not ciphers or not legacy:
        raise EmptySpace("no ciphers or versions left after exclusions")
    for cand in space.extensions:
        if cand.mandatory and cand.kind not in ("sni", "empty", "literal") and not space.allowed(_POOL_FIELD[cand.kind], cand.pool):
            raise EmptySpace(f"mandatory extension {cand.ext_id} has an empty pool")
        if cand.kind == "literal" and not cand.literals:
            raise EmptySpace(f"literal extension {cand.ext_id} has no values")

    chosen = [c for c in space.extensions if c.mandatory or rng.random() < 0.5]
    rng.shuffle(chosen)
    groups_offered = None
    templates = []
    drawn: dict[int, list] = {}
    for cand in chosen:
        if cand.kind == "key_share":
            continue
        if cand.kind in ("sni", "empty"):
            drawn[id(cand)] = []
        elif cand.kind == "literal":
            drawn[id(cand)] = [rng.choice(cand.literals)]
        else:
            drawn[id(cand)] = _draw(rng, space.allowed(_POOL_FIELD[cand.kind], cand.pool), cand.length)
            if cand.kind == "supported_groups":
                groups_offered = drawn[id(cand)]
    for cand in chosen:
        if cand.kind == "key_share":
            pool = space.allowed("key_share", cand.pool)
            if groups_offered is not None:
                pool = [g for g in groups_offered if g in pool] or pool
            drawn[id(cand)] = _draw(rng, pool, cand.length)
    for cand in chosen:
        vals = drawn[id(cand)]
        if cand.kind == "literal":
            templates.append(ExtensionTemplate(cand.ext_id, "literal", literal=vals[0]))
        elif cand.kind in ("sni", "empty"):
            templates.append(ExtensionTemplate(cand.ext_id, cand.kind))
        else:
            templates.append(ExtensionTemplate(cand.ext_id, cand.kind, tuple(vals)))

    spec = ClientHelloSpec(
        id="pending",
        legacy_version=rng.choice(legacy),
        cipher_suites=tuple(_draw(rng, ciphers, space.cipher_count)),
        compression_methods=(0,),
        extensions=tuple(templates),
        session_id_policy=rng.choice(space.session_id_policies),
        grease_policy=rng.choice(space.grease_policies),
    )
    fields = spec_to_dict(spec)
    del fields["id"]
    return ClientHelloSpec(**{**spec.__dict__, "id": _spec_id(fields)})


def generate_pool(space: FeatureSpace, count: int, seed) -> list[ClientHelloSpec]:
    """``count`` random probes with distinct ids (duplicates are redrawn)."""
    out, seen, i = [], set(), 0
    while len(out) < count:
        spec = random_client_hello(space, f"{seed}/{i}")
        i += 1
        if spec.id not in seen:
            seen.add(spec.id)
            out.append(spec)
        if i > 20 * count + 100:
            raise EmptySpace(f"space too small for {count} distinct probes")
    return out


def _ext(ext_id, kind="empty", *values, literal=b""):
    return ExtensionTemplate(ext_id, kind, tuple(values), literal)


_SIGALGS = (0x0403, 0x0804, 0x0401, 0x0503, 0x0805, 0x0501, 0x0806, 0x0601)


def baseline_pool() -> list[ClientHelloSpec]:
    """Ten hand-written, deliberately varied probes usable without a design run."""
    sni = _ext(0, "sni")
    return [
        ClientHelloSpec(
            "b01", C.TLS12,
            (0x1301, 0x1302, 0x1303, 0xC02B, 0xC02F, 0xC02C, 0xC030, 0xCCA9, 0xCCA8),
            extensions=(
                sni, _ext(11, "ec_point_formats", 0), _ext(10, "supported_groups", 29, 23, 24),
                _ext(13, "signature_algorithms", *_SIGALGS), _ext(16, "alpn", "h2", "http/1.1"),
                _ext(5, "literal", literal=bytes.fromhex("0100000000")), _ext(23), _ext(35),
                _ext(43, "supported_versions", C.TLS13, C.TLS12), _ext(45, "literal", literal=b"\x01\x01"),
                _ext(51, "key_share", 29), _ext(0xFF01, "literal", literal=b"\x00"),
            ),
        ),
        ClientHelloSpec(
            "b02", C.TLS12,
            (0x009F, 0x009E, 0xC030, 0xC02F, 0x009D, 0x009C, 0xCCAA, 0xC014, 0x0035),
            extensions=(
                sni, _ext(10, "supported_groups", 23, 24, 29), _ext(11, "ec_point_formats", 0, 1, 2),
                _ext(13, "signature_algorithms", 0x0401, 0x0501, 0x0601, 0x0804, 0x0403), _ext(16, "alpn", "http/1.1"),
                _ext(23),
            ),
        ),
        ClientHelloSpec(
            "b03", C.TLS12, (0x1303, 0x1302, 0x1301),
            extensions=(
                _ext(43, "supported_versions", C.TLS13), _ext(51, "key_share", 23), sni,
                _ext(10, "supported_groups", 29, 23), _ext(13, "signature_algorithms", *_SIGALGS),
                _ext(16, "alpn", "http/1.1", "h2"),
            ),
        ),
        ClientHelloSpec(
            "b04", C.TLS13, (0x1302, 0x1301),
            extensions=(
                sni, _ext(10, "supported_groups", 29), _ext(51, "key_share", 29),
                _ext(43, "supported_versions", C.TLS13), _ext(13, "signature_algorithms", 0x0804, 0x0403),
                _ext(16, "alpn", "h3", "h2"),
            ),
        ),
        ClientHelloSpec(
            "b05", C.TLS12, (0xCCA8, 0xCCA9, 0x1303),
            extensions=(
                _ext(10, "supported_groups", 30, 29), _ext(51, "key_share", 30), sni,
                _ext(43, "supported_versions", C.TLS12, C.TLS13), _ext(13, "signature_algorithms", *reversed(_SIGALGS)),
                _ext(11, "ec_point_formats", 0),
            ),
        ),
        ClientHelloSpec(
            "b06", C.TLS12, (0xC02C, 0xC030, 0x1302, 0x1301, 0x009D),
            extensions=(
                sni, _ext(16, "alpn", "xmpp-client", "spdy/3"), _ext(10, "supported_groups", 24, 23, 29),
                _ext(51, "key_share", 24), _ext(43, "supported_versions", C.TLS13, C.TLS12, C.TLS11),
                _ext(13, "signature_algorithms", 0x0503, 0x0403, 0x0804, 0x0401), _ext(22),
            ),
        ),
        ClientHelloSpec(
            "b07", C.TLS11, (0xC013, 0xC014, 0x002F, 0x0035),
            extensions=(sni, _ext(10, "supported_groups", 23, 24), _ext(11, "ec_point_formats", 0), _ext(0xFF01, "literal", literal=b"\x00")),
        ),
        ClientHelloSpec("b08", C.TLS10, (0x002F, 0x000A, 0x0005), extensions=(sni,)),
        ClientHelloSpec(
            "b09", C.TLS12, (0x1301, 0xC02B, 0xC02F),
            extensions=(
                _ext(43, "supported_versions", C.TLS13, C.TLS12), _ext(10, "supported_groups", 24, 25, 23),
                _ext(51, "key_share", 24), _ext(13, "signature_algorithms", 0x0804, 0x0403),
                _ext(15, "literal", literal=b"\x01"), _ext(28, "literal", literal=b"\x40\x01"),
                _ext(1, "literal", literal=b"\x02"), _ext(16, "alpn", "http/1.1"),
            ),
        ),
        ClientHelloSpec(
            "b10", C.TLS12, (0x1301, 0xC02F, 0x009C),
            extensions=(
                sni, _ext(10, "supported_groups", 29, 23), _ext(51, "key_share", 29, 23),
                _ext(43, "supported_versions", C.TLS13, C.TLS12), _ext(13, "signature_algorithms", *_SIGALGS),
                _ext(16, "alpn", "h2"), _ext(27, "literal", literal=b"\x02\x00\x02"), _ext(45, "literal", literal=b"\x01\x01"),
            ),
            grease_policy="fixed-values",
        ),
    ]


# --------------------------------------------------------------------------
# Probe assignment


def assign_round_robin(targets: Sequence, pool: Sequence, k: int = 13) -> list[tuple]:
    """Give target i the probes at pool indices (i*k + j) mod |pool|, j < k."""
    if k > len(pool):
        raise KTooLarge(f"k={k} exceeds pool size {len(pool)}")
    if k < 0:
        raise ValueError("k must be non-negative")
    ids = [p.id if isinstance(p, ClientHelloSpec) else p for p in pool]
    n = len(ids)
    return [(t, ids[(i * k + j) % n]) for i, t in enumerate(targets) for j in range(k)]


# --------------------------------------------------------------------------
# Response matrix


@dataclass
class ResponseMatrix:
    rows: list[str]
    columns: list[str]
    cells: dict[str, dict[str, str]] = field(default_factory=dict)

    def cell(self, row: str, col: str) -> str | None:
        return self.cells.get(row, {}).get(col)

    def set(self, row: str, col: str, value: str | None) -> None:
        if value is not None:
            self.cells.setdefault(row, {})[col] = value

    def is_complete(self, row: str) -> bool:
        present = self.cells.get(row, {})
        return all(c in present for c in self.columns)

    def complete_rows(self) -> list[str]:
        return [r for r in self.rows if self.is_complete(r)]

    def incomplete_rows(self) -> list[str]:
        return [r for r in self.rows if not self.is_complete(r)]

    def codes(self, rows: Sequence[str] | None = None) -> np.ndarray:
        """Integer-coded cells (rows x columns); -1 marks an absent cell."""
        rows = self.complete_rows() if rows is None else rows
        out = np.full((len(rows), len(self.columns)), -1, dtype=np.int64)
        for j, col in enumerate(self.columns):
            seen: dict[str, int] = {}
            for i, r in enumerate(rows):
                v = self.cell(r, col)
                if v is not None:
                    out[i, j] = seen.setdefault(v, len(seen))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row_id", *self.columns])
            for r in self.rows:
                w.writerow([r, *(self.cell(r, c) or "" for c in self.columns)])

    @classmethod
    def from_csv(cls, path) -> ResponseMatrix:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0] != "row_id":
                raise ValueError("matrix CSV must start with a row_id column")
            m = cls([], header[1:])
            for line in reader:
                if not line:
                    continue
                m.rows.append(line[0])
                for col, val in zip(m.columns, line[1:]):
                    m.set(line[0], col, val or None)
        return m


def _check_columns(matrix: ResponseMatrix, subset: Iterable[str]) -> list[int]:
    index = {c: j for j, c in enumerate(matrix.columns)}
    out = []
    for c in subset:
        if c not in index:
            raise UnknownColumn(c)
        out.append(index[c])
    return out


def _partition_size(codes: np.ndarray, cols: Sequence[int]) -> int:
    if codes.shape[0] == 0:
        return 0
    if not cols:
        return 1
    return len(np.unique(codes[:, list(cols)], axis=0))


def distinct_behavior_count(matrix: ResponseMatrix, subset: Iterable[str]) -> int:
    """Number of distinct response tuples under ``subset`` over complete rows."""
    cols = _check_columns(matrix, subset)
    return _partition_size(matrix.codes(), cols)


def greedy_select(matrix: ResponseMatrix, k: int) -> list[str]:
    """Pick ``k`` columns, each maximising the distinct count given the earlier picks.

    Ties go to the lexicographically smallest probe id.
    """
    if k > len(matrix.columns):
        raise KTooLarge(f"k={k} exceeds {len(matrix.columns)} columns")
    codes = matrix.codes()
    n = codes.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    chosen: list[str] = []
    remaining = sorted(range(len(matrix.columns)), key=lambda j: matrix.columns[j])
    for _ in range(k):
        best_j, best_count, best_labels = None, -1, None
        for j in remaining:
            if n:
                pairs = labels * (int(codes[:, j].max()) + 1) + codes[:, j]
                uniq, inv = np.unique(pairs, return_inverse=True)
                count = len(uniq)
            else:
                count, inv = 0, labels
            if count > best_count:
                best_j, best_count, best_labels = j, count, inv
        chosen.append(matrix.columns[best_j])
        remaining.remove(best_j)
        labels = np.asarray(best_labels, dtype=np.int64).reshape(-1)
    return chosen


def selection_curve(matrix: ResponseMatrix, order: Sequence[str]) -> list[int]:
    """Distinct counts for every prefix of ``order`` (index 0 is the empty set)."""
    cols = _check_columns(matrix, order)
    codes = matrix.codes()
    return [_partition_size(codes, cols[:i]) for i in range(len(cols) + 1)]


def rank_singletons(matrix: ResponseMatrix) -> list[tuple[str, int]]:
    """Columns by how many distinct values they show over the rows where they are present."""
    scores = []
    for col in matrix.columns:
        values = {matrix.cell(r, col) for r in matrix.rows} - {None}
        scores.append((col, len(values)))
    return sorted(scores, key=lambda s: (-s[1], s[0]))


# --------------------------------------------------------------------------
# Two-phase design workflow


@dataclass
class DesignResult:
    shortlist: list[str]
    selection: list[str]
    curve: list[int]
    phase1: ResponseMatrix
    phase2: ResponseMatrix


Responder = Callable[[object, ClientHelloSpec], "str | None"]


def design_probes(
    pool: Sequence[ClientHelloSpec],
    targets: Sequence,
    respond: Responder,
    per_target: int = 13,
    shortlist: int = 50,
    final: int = 10,
    target_id: Callable[[object], str] = str,
) -> DesignResult:
    """Scan with a round-robin slice of the pool, shortlist the most
    distinctive probes, rescan every target with the shortlist and pick
    ``final`` probes greedily."""
    by_id = {p.id: p for p in pool}
    ids = [target_id(t) for t in targets]
    phase1 = ResponseMatrix(ids, [p.id for p in pool])
    for t, pid in assign_round_robin(targets, pool, min(per_target, len(pool))):
        phase1.set(target_id(t), pid, respond(t, by_id[pid]))
    short = [c for c, _ in rank_singletons(phase1)[: min(shortlist, len(pool))]]
    phase2 = ResponseMatrix(ids, short)
    for t in targets:
        for pid in short:
            phase2.set(target_id(t), pid, respond(t, by_id[pid]))
    selection = greedy_select(phase2, min(final, len(short)))
    return DesignResult(short, selection, selection_curve(phase2, selection), phase1, phase2)
