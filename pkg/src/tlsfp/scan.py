"""Target ingestion, DNS resolution, scan planning and execution.

Scheduling works in rounds: targets are shuffled once, each target gets its
own shuffled probe order, and round ``r`` sends every target its ``r``-th
probe.  Dispatch slots are spaced evenly so the whole pass fills the window,
which keeps consecutive probes to a target ``window / |pool|`` apart and
keeps the global rate at or below the limit.
"""

from __future__ import annotations

import csv
import hashlib
import ipaddress
import json
import logging
import math
import random
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .codec import ClientHelloSpec, spec_to_dict
from .features import RETENTION_POLICY, ExtractionPolicy, extract_features
from .observation import HandshakeObservation, Outcome, Target

log = logging.getLogger(__name__)

MISSING = {"", "-", "—", "–"}


class MalformedRow(ValueError):
    def __init__(self, line: int, reason: str, path: str = ""):
        super().__init__(f"{path}:{line}: {reason}" if path else f"line {line}: {reason}")
        self.line = line
        self.path = path


class ResolverUnavailable(RuntimeError):
    def __init__(self, message: str, resolved=(), skipped=()):
        super().__init__(message)
        self.resolved = list(resolved)
        self.skipped = list(skipped)


class ResolutionFailed(Exception):
    """A single name did not resolve (NXDOMAIN, no data)."""


class StoreFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Ingestion


def _parse_row(row: list[str], line: int, path: str) -> Target:
    if len(row) < 4:
        raise MalformedRow(line, f"expected at least 4 columns, got {len(row)}", path)
    ip, port, domain, source = (c.strip() for c in row[:4])
    ip = None if ip in MISSING else ip
    domain = None if domain in MISSING else domain.rstrip(".").lower()
    if ip is not None:
        try:
            ip = str(ipaddress.ip_address(ip))
        except ValueError:
            raise MalformedRow(line, f"bad ip address {ip!r}", path) from None
    if ip is None and domain is None:
        raise MalformedRow(line, "row has neither ip nor domain", path)
    try:
        port_num = int(port)
    except ValueError:
        raise MalformedRow(line, f"bad port {port!r}", path) from None
    if not 0 < port_num < 65536:
        raise MalformedRow(line, f"port out of range {port_num}", path)
    labels = {}
    for cell in row[4:]:
        cell = cell.strip()
        if not cell:
            continue
        key, eq, value = cell.partition("=")
        if not eq or not key:
            raise MalformedRow(line, f"label {cell!r} is not key=value", path)
        labels[key.strip()] = value.strip()
    return Target(ip, port_num, domain, "" if source in MISSING else source, labels)


def ingest_targets(files: Iterable, fmt: str = "csv") -> list[Target]:
    """Read header-less target CSVs: ip, port, domain, source, then key=value labels.

    ``-`` or an empty cell marks a missing ip or domain.  Rows sharing an
    identity collapse into the first one; later rows win on labels and source.
    """
    if fmt != "csv":
        raise ValueError(f"unsupported target format {fmt!r}")
    merged: dict[tuple, Target] = {}
    for path in files:
        with open(path, newline="") as fh:
            for line, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                t = _parse_row(row, line, str(path))
                prev = merged.get(t.identity)
                if prev is None:
                    merged[t.identity] = t
                else:
                    prev.labels.update(t.labels)
                    prev.source_list = t.source_list or prev.source_list
    return list(merged.values())


# --------------------------------------------------------------------------
# Resolution


class DnsResolver:
    """A and AAAA lookups against one nameserver (``host`` or ``host:port``)."""

    def __init__(self, endpoint: str | None = None, timeout: float = 3.0):
        import dns.resolver

        self._dns = dns
        self.resolver = dns.resolver.Resolver(configure=endpoint is None)
        if endpoint:
            host, _, port = endpoint.rpartition(":") if endpoint.count(":") == 1 else (endpoint, "", "")
            self.resolver.nameservers = [host]
            if port:
                self.resolver.port = int(port)
        self.resolver.lifetime = timeout

    def __call__(self, domain: str) -> list[str]:
        dns = self._dns
        out, failures = [], []
        for rdtype in ("A", "AAAA"):
            try:
                answer = self.resolver.resolve(domain, rdtype)
                out.extend(r.to_text() for r in answer)
            except dns.resolver.NXDOMAIN:
                raise ResolutionFailed("nxdomain") from None
            except dns.resolver.NoAnswer:
                failures.append(rdtype)
            except (dns.resolver.NoNameservers, dns.exception.Timeout) as exc:
                raise ResolverUnavailable(f"resolver failed for {domain}: {exc}") from exc
        if not out:
            raise ResolutionFailed("no address records")
        return out


def resolve_targets(targets: Sequence[Target], resolver) -> tuple[list[Target], list[dict]]:
    """Fan domain-only targets out to one target per resolved address.

    ``resolver`` is a callable ``domain -> [address]`` or a nameserver
    endpoint string.  Returns the resolved list and a skip report.
    """
    if resolver is None or isinstance(resolver, str):
        resolver = DnsResolver(resolver)
    out: list[Target] = []
    skipped: list[dict] = []
    seen: set[tuple] = set()

    def add(t: Target):
        if t.identity not in seen:
            seen.add(t.identity)
            out.append(t)

    for t in targets:
        if t.ip is not None:
            add(t)
            continue
        try:
            addresses = resolver(t.domain)
        except ResolutionFailed as exc:
            skipped.append({"domain": t.domain, "port": t.port, "reason": str(exc) or "unresolved"})
            continue
        except ResolverUnavailable as exc:
            raise ResolverUnavailable(str(exc), out, skipped) from exc
        for addr in dict.fromkeys(addresses):
            add(Target(str(ipaddress.ip_address(addr)), t.port, t.domain, t.source_list, dict(t.labels)))
    return out, skipped


# --------------------------------------------------------------------------
# Planning


def load_excludelist(path) -> list:
    nets = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            nets.append(ipaddress.ip_network(line, strict=False))
    return nets


def is_excluded(ip: str | None, nets: Sequence) -> bool:
    if ip is None:
        return False
    addr = ipaddress.ip_address(ip)
    return any(addr.version == n.version and addr in n for n in nets)


@dataclass(frozen=True)
class WorkItem:
    index: int
    target: Target
    probe_id: str
    offset_us: int  # earliest dispatch time relative to scan start


@dataclass
class ScanPlan:
    items: list[WorkItem]
    window_s: float
    rate: float
    spacing_us: int
    seed: object
    excluded: list[Target] = field(default_factory=list)

    def __len__(self):
        return len(self.items)


def plan_scan(
    targets: Sequence[Target],
    pool: Sequence[ClientHelloSpec | str],
    window: float,
    rate: float,
    excludelist: Sequence = (),
    seed=0,
) -> ScanPlan:
    """Shuffled target x probe cross product with pacing offsets."""
    if window <= 0:
        raise ValueError("window must be positive")
    if rate <= 0:
        raise ValueError("rate must be positive")
    nets = [ipaddress.ip_network(n, strict=False) if isinstance(n, str) else n for n in excludelist]
    kept = [t for t in targets if not is_excluded(t.ip, nets)]
    excluded = [t for t in targets if is_excluded(t.ip, nets)]
    ids = [p.id if isinstance(p, ClientHelloSpec) else p for p in pool]
    rng = random.Random(f"plan/{seed}")
    order = list(kept)
    rng.shuffle(order)
    probe_orders = [rng.sample(ids, len(ids)) for _ in order]
    total = len(order) * len(ids)
    spacing = 0
    if total:
        # same budget as RateLimiter: floor(rate) per second, or one per 1/rate s
        min_gap = math.ceil(1e6 / math.floor(rate)) if rate >= 1 else math.ceil(1e6 / rate)
        spacing = max(-(-math.ceil(window * 1e6) // total), min_gap, 1)
    items = []
    for r in range(len(ids)):
        for t, probes in zip(order, probe_orders):
            i = len(items)
            items.append(WorkItem(i, t, probes[r], i * spacing))
    return ScanPlan(items, window, rate, spacing, seed, excluded)


# --------------------------------------------------------------------------
# Execution


class SimClock:
    """Virtual time kept in integer microseconds; sleeping just advances it."""

    def __init__(self, start: float = 0.0, epoch: float = 1_700_000_000.0):
        self._us = round(start * 1e6)
        self.epoch = epoch
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._us / 1e6

    def wall(self) -> float:
        return self.epoch + self._us / 1e6

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            with self._lock:
                self._us += max(1, math.ceil(seconds * 1e6 - 1e-6))


class RealClock:
    def now(self) -> float:
        return time.monotonic()

    def wall(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class RateLimiter:
    """At most ``rate`` acquisitions in any half-open one-second window."""

    def __init__(self, rate: float, clock):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.capacity = max(1, math.floor(rate))
        self.period_us = 1_000_000 if rate >= 1 else math.ceil(1e6 / rate)
        self.clock = clock
        self.events: deque[int] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            while True:
                now = round(self.clock.now() * 1e6)
                while self.events and self.events[0] <= now - self.period_us:
                    self.events.popleft()
                if len(self.events) < self.capacity:
                    self.events.append(now)
                    return now / 1e6
                self.clock.sleep((self.events[0] + self.period_us - now) / 1e6)


@dataclass
class ScanRecord:
    snapshot_id: str
    ip: str | None
    port: int
    domain: str | None
    probe_id: str
    timestamp: float
    outcome: str
    feature: str | None = None
    cert_validity: str | None = None
    http_server_header: str | None = None
    error: str | None = None
    source: str = ""
    labels: dict = field(default_factory=dict)

    @property
    def identity(self) -> tuple:
        return (self.ip, self.port, self.domain)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> ScanRecord:
        return cls(**json.loads(line))

    @classmethod
    def from_observation(cls, obs: HandshakeObservation, snapshot_id: str, timestamp: float,
                         policy: ExtractionPolicy = RETENTION_POLICY) -> ScanRecord:
        t = obs.target
        feature = None if obs.outcome == Outcome.TRANSPORT_ERROR else extract_features(obs, policy).text
        return cls(
            snapshot_id, t.ip, t.port, t.domain, obs.probe_id, timestamp, obs.outcome.value, feature,
            None if obs.cert_validity is None else str(obs.cert_validity),
            obs.http_server_header, obs.error, t.source_list, dict(t.labels),
        )


class JsonlStore:
    """Append-only JSON-lines record log; writes land in plan order."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._pending: dict[int, ScanRecord] = {}
        self._next = 0
        self.written = 0
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a")
        except OSError as exc:
            raise StoreFailure(f"cannot open {self.path}: {exc}") from exc

    def put(self, index: int, record: ScanRecord) -> None:
        with self._lock:
            self._pending[index] = record
            try:
                while self._next in self._pending:
                    self._fh.write(self._pending.pop(self._next).to_json() + "\n")
                    self._next += 1
                    self.written += 1
                self._fh.flush()
            except (OSError, ValueError) as exc:
                raise StoreFailure(f"write to {self.path} failed: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            if self._pending:
                log.warning("%d records never became contiguous and were dropped", len(self._pending))
            self._fh.close()


def read_records(paths) -> list[ScanRecord]:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    out = []
    for path in paths:
        with open(path) as fh:
            out.extend(ScanRecord.from_json(line) for line in fh if line.strip())
    return out


@dataclass
class ScanSummary:
    snapshot_id: str
    attempted: int = 0
    succeeded: int = 0
    transport_errors: int = 0
    dispatch_times: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"snapshot_id": self.snapshot_id, "attempted": self.attempted,
                "succeeded": self.succeeded, "transport_errors": self.transport_errors}


Prober = Callable[[Target, ClientHelloSpec, str], HandshakeObservation]


def live_prober(config) -> Prober:
    from .engine import perform_handshake

    def probe(target: Target, spec: ClientHelloSpec, repetition: str) -> HandshakeObservation:
        return perform_handshake(target, spec, config)

    return probe


def run_scan(
    plan: ScanPlan,
    pool: Sequence[ClientHelloSpec],
    prober: Prober,
    store: JsonlStore,
    snapshot_id: str,
    concurrency: int = 16,
    clock=None,
    policy: ExtractionPolicy = RETENTION_POLICY,
) -> ScanSummary:
    """Run every work item once and store one record per item."""
    if concurrency < 1:
        raise ValueError("concurrency must be at least 1")
    clock = clock or RealClock()
    specs = {p.id: p for p in pool}
    missing = {w.probe_id for w in plan.items} - set(specs)
    if missing:
        raise ValueError(f"plan references unknown probes {sorted(missing)}")
    limiter = RateLimiter(plan.rate, clock)
    summary = ScanSummary(snapshot_id)
    slots = threading.BoundedSemaphore(concurrency)
    counts_lock = threading.Lock()
    failure: list[BaseException] = []

    def work(item: WorkItem, stamp: float):
        try:
            try:
                obs = prober(item.target, specs[item.probe_id], snapshot_id)
            except Exception as exc:  # a broken probe must still yield a record
                log.exception("probe %s -> %s crashed", item.probe_id, item.target)
                obs = HandshakeObservation.transport_error(item.probe_id, item.target, f"crash:{type(exc).__name__}")
            record = ScanRecord.from_observation(obs, snapshot_id, stamp, policy)
            store.put(item.index, record)
            with counts_lock:
                if obs.outcome == Outcome.TRANSPORT_ERROR:
                    summary.transport_errors += 1
                else:
                    summary.succeeded += 1
        except StoreFailure as exc:
            failure.append(exc)
        finally:
            slots.release()

    start = clock.now()
    with ThreadPoolExecutor(max_workers=concurrency) as pool_exec:
        for item in plan.items:
            if failure:
                break
            clock.sleep(start + item.offset_us / 1e6 - clock.now())
            slots.acquire()
            t = limiter.acquire()
            summary.dispatch_times.append(t - start)
            summary.attempted += 1
            pool_exec.submit(work, item, round(clock.wall(), 6))
    if failure:
        raise failure[0]
    return summary


def max_rate_observed(times: Sequence[float], period: float = 1.0) -> int:
    """Largest number of events inside any half-open window of ``period`` seconds.

    Compared in whole microseconds, the resolution clocks are audited at, so
    float subtraction cannot pull an event back into the window.
    """
    ts = sorted(round(t * 1e6) for t in times)
    span = round(period * 1e6)
    best, lo = 0, 0
    for hi, t in enumerate(ts):
        while ts[lo] <= t - span:
            lo += 1
        best = max(best, hi - lo + 1)
    return best


def per_target_spans(plan: ScanPlan) -> dict[tuple, float]:
    """Planned first-to-last probe span per target, in seconds."""
    first: dict[tuple, int] = {}
    last: dict[tuple, int] = {}
    for w in plan.items:
        k = w.target.identity
        first.setdefault(k, w.offset_us)
        last[k] = w.offset_us
    return {k: (last[k] - first[k]) / 1e6 for k in first}


# --------------------------------------------------------------------------
# Manifests


def pool_digest(pool_path=None, pool: Sequence[ClientHelloSpec] = ()) -> str:
    if pool_path is not None:
        return hashlib.sha256(Path(pool_path).read_bytes()).hexdigest()
    blob = json.dumps([spec_to_dict(p) for p in pool], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, snapshot_id: str, record_files: Sequence, probe_digest: str, summary: ScanSummary | None = None) -> None:
    manifest = {
        "snapshot_id": snapshot_id,
        "record_files": [str(p) for p in record_files],
        "probe_pool_sha256": probe_digest,
    }
    if summary is not None:
        manifest["summary"] = summary.as_dict()
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
