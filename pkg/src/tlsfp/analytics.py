"""Stability, CDN and C2 classification, evaluation and configuration comparison.

All analyses work on :class:`FingerprintSnapshot` objects assembled from
stored scan records.  Records keep every extension (the retention policy),
so an analysis may narrow them to any stricter extraction policy.
"""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .features import (
    DEFAULT_POLICY,
    RETENTION_POLICY,
    ExtractionPolicy,
    FeatureString,
    ServerFingerprint,
    project_jarm,
    reapply_policy,
)
from .probes import ResponseMatrix, greedy_select
from .scan import ScanRecord


class NoOverlap(ValueError):
    pass


class NoLabels(ValueError):
    pass


class EmptyScope(ValueError):
    pass


class MissingProbeData(ValueError):
    pass


# --------------------------------------------------------------------------
# Snapshots


@dataclass
class TargetView:
    identity: tuple
    fingerprint: ServerFingerprint
    http_server_header: str | None = None
    labels: dict = field(default_factory=dict)
    source: str = ""
    cert_valid: bool = False


@dataclass
class FingerprintSnapshot:
    snapshot_id: str
    probe_ids: tuple[str, ...]
    targets: dict[tuple, TargetView]

    def complete(self) -> dict[tuple, TargetView]:
        return {k: v for k, v in self.targets.items() if v.fingerprint.complete}

    def map(self, fn: Callable[[ServerFingerprint], ServerFingerprint]) -> FingerprintSnapshot:
        targets = {
            k: TargetView(v.identity, fn(v.fingerprint), v.http_server_header, v.labels, v.source, v.cert_valid)
            for k, v in self.targets.items()
        }
        return FingerprintSnapshot(self.snapshot_id, self.probe_ids, targets)

    def restrict(self, probe_ids: Sequence[str]) -> FingerprintSnapshot:
        snap = self.map(lambda fp: fp.restrict(probe_ids))
        snap.probe_ids = tuple(probe_ids)
        return snap

    def narrow(self, policy: ExtractionPolicy) -> FingerprintSnapshot:
        return self.map(lambda fp: fp.map(lambda fs: reapply_policy(fs, policy)))


def build_snapshot(
    records: Iterable[ScanRecord],
    probe_ids: Sequence[str],
    policy: ExtractionPolicy = DEFAULT_POLICY,
    snapshot_id: str | None = None,
) -> FingerprintSnapshot:
    """Group one snapshot's records by target and assemble fingerprints.

    When ``snapshot_id`` is None the records must all share one id.  A later
    record for the same (target, probe) replaces the earlier one.
    """
    records = list(records)
    ids = {r.snapshot_id for r in records}
    if snapshot_id is None:
        if len(ids) > 1:
            raise ValueError(f"records span several snapshots: {sorted(ids)}")
        snapshot_id = next(iter(ids), "")
    else:
        records = [r for r in records if r.snapshot_id == snapshot_id]
    features: dict[tuple, dict[str, FeatureString | None]] = defaultdict(dict)
    meta: dict[tuple, dict] = {}
    for r in records:
        features[r.identity][r.probe_id] = None if r.feature is None else reapply_policy(FeatureString.parse(r.feature), policy)
        m = meta.setdefault(r.identity, {"header": None, "labels": {}, "source": r.source, "validity": []})
        if r.http_server_header is not None and m["header"] is None:
            m["header"] = r.http_server_header
        m["labels"].update(r.labels)
        m["source"] = r.source or m["source"]
        if r.cert_validity is not None:
            m["validity"].append(r.cert_validity)
    targets = {}
    for ident, feats in features.items():
        m = meta[ident]
        fp = ServerFingerprint.from_features(feats, probe_ids)
        valid = bool(m["validity"]) and all(v == "valid" for v in m["validity"])
        targets[ident] = TargetView(ident, fp, m["header"], m["labels"], m["source"], valid)
    return FingerprintSnapshot(snapshot_id, tuple(probe_ids), targets)


def snapshots_from_records(records: Iterable[ScanRecord], probe_ids: Sequence[str],
                           policy: ExtractionPolicy = DEFAULT_POLICY) -> list[FingerprintSnapshot]:
    """One snapshot per snapshot id, in first-seen order."""
    grouped: dict[str, list[ScanRecord]] = {}
    for r in records:
        grouped.setdefault(r.snapshot_id, []).append(r)
    return [build_snapshot(rs, probe_ids, policy, sid) for sid, rs in grouped.items()]


# --------------------------------------------------------------------------
# Stability


@dataclass(frozen=True)
class StabilityReport:
    shared_targets: int
    identical: int

    @property
    def ratio(self) -> float:
        return self.identical / self.shared_targets


def stability_report(prev: FingerprintSnapshot, curr: FingerprintSnapshot,
                     policy: ExtractionPolicy | None = None) -> StabilityReport:
    """Share of targets with a complete fingerprint in both snapshots whose
    fingerprints are equal, optionally after narrowing to ``policy``."""
    if not prev.targets or not curr.targets:
        raise ValueError("snapshots must be nonempty")
    a, b = prev.complete(), curr.complete()
    shared = a.keys() & b.keys()
    if not shared:
        raise NoOverlap(f"{prev.snapshot_id} and {curr.snapshot_id} share no fingerprinted targets")

    def fp(view):
        f = view.fingerprint
        return f if policy is None else f.map(lambda fs: reapply_policy(fs, policy))

    same = sum(1 for k in shared if fp(a[k]) == fp(b[k]))
    return StabilityReport(len(shared), same)


def stability_comparison(prev: FingerprintSnapshot, curr: FingerprintSnapshot) -> dict[str, StabilityReport]:
    """The default policy next to one that keeps status_request.

    Both snapshots should have been built with the retention policy.
    """
    return {
        "default": stability_report(prev, curr, DEFAULT_POLICY),
        "with_status_request": stability_report(prev, curr, RETENTION_POLICY),
    }


# --------------------------------------------------------------------------
# CDN


@dataclass
class CdnModel:
    mapping: dict[str, str]
    min_count: int
    conflicts: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.mapping)


def train_cdn(snapshots: Sequence[FingerprintSnapshot], min_count: int = 10, label_key: str = "cdn") -> CdnModel:
    """Keep fingerprints seen at least ``min_count`` times, with a valid
    certificate, from exactly one CDN."""
    counts: Counter = Counter()
    labelled = False
    for snap in snapshots:
        for view in snap.complete().values():
            label = view.labels.get(label_key)
            if not label:
                continue
            labelled = True
            if view.cert_valid:
                counts[(view.fingerprint.key, label)] += 1
    if not labelled:
        raise NoLabels(f"no target carries a {label_key!r} label")
    # overlap is judged on every valid observation, not only those above the
    # threshold, so raising min_count can never resolve a conflict into a new entry
    by_fp: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for (key, label), n in sorted(counts.items()):
        by_fp[key].append((label, n))
    mapping, conflicts = {}, []
    for key, claims in by_fp.items():
        if len(claims) > 1:
            if any(n >= min_count for _, n in claims):
                who = ", ".join(f"{label} x{n}" for label, n in claims)
                conflicts.append(f"fingerprint seen from {who} (excluded): {key[:80]}")
        elif claims[0][1] >= min_count:
            mapping[key] = claims[0][0]
    return CdnModel(mapping, min_count, conflicts)


def predict_cdn(model: CdnModel, fingerprint: ServerFingerprint) -> str | None:
    return model.mapping.get(fingerprint.key)


# --------------------------------------------------------------------------
# C2

_TRUE = {"1", "true", "yes", "c2"}


def is_c2(view: TargetView) -> bool:
    """C2 ground truth: a truthy ``c2`` label or a ``blocklist`` source."""
    return view.labels.get("c2", "").lower() in _TRUE or view.source == "blocklist"


@dataclass
class C2RateTable:
    counts: dict = field(default_factory=dict)  # key -> [c2_count, total_count]
    augment_http: bool = False

    def key_for(self, view: TargetView):
        if self.augment_http:
            return (view.fingerprint.key, view.http_server_header or "")
        return view.fingerprint.key

    def rate(self, key) -> float | None:
        c = self.counts.get(key)
        return None if c is None else c[0] / c[1]


def train_c2(snapshots: Sequence[FingerprintSnapshot], augment_http: bool = False,
             label: Callable[[TargetView], bool] = is_c2) -> C2RateTable:
    table = C2RateTable({}, augment_http)
    for snap in snapshots:
        for view in snap.complete().values():
            c = table.counts.setdefault(table.key_for(view), [0, 0])
            c[0] += bool(label(view))
            c[1] += 1
    return table


def classify_c2(table: C2RateTable, key, t: float) -> bool:
    """True iff the key's C2 rate is strictly above ``t``."""
    if not 0 <= t <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    c = table.counts.get(key)
    return c is not None and c[0] / c[1] > t


# --------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class LabelCounts:
    tp: int
    fp: int
    pp: int

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return None if d == 0 else self.tp / d

    @property
    def recall(self) -> float | None:
        return None if self.pp == 0 else self.tp / self.pp


@dataclass(frozen=True)
class EvalReport(LabelCounts):
    per_label: dict = field(default_factory=dict)


def evaluate(predictions: Mapping, truth: Mapping, scope: Iterable | None = None) -> EvalReport:
    """Precision TP/(TP+FP) and recall TP/PP over ``scope``.

    Values are labels; None (or False) means negative.  A prediction is a
    true positive when it equals the true label.
    """
    ids = list(truth if scope is None else scope)
    if not ids:
        raise EmptyScope("nothing to evaluate")

    def norm(v):
        return None if v is None or v is False else v

    tp = fp = pp = 0
    per: dict = defaultdict(lambda: [0, 0, 0])
    for i in ids:
        p, t = norm(predictions.get(i)), norm(truth.get(i))
        if t is not None:
            pp += 1
            per[t][2] += 1
        if p is not None:
            if p == t:
                tp += 1
                per[p][0] += 1
            else:
                fp += 1
                per[p][1] += 1
    return EvalReport(tp, fp, pp, {k: LabelCounts(*v) for k, v in sorted(per.items(), key=lambda kv: str(kv[0]))})


@dataclass
class WeekResult:
    week: str
    report: EvalReport
    scope: int


def new_targets(train: Sequence[FingerprintSnapshot], test: FingerprintSnapshot) -> dict[tuple, TargetView]:
    """Complete targets of ``test`` whose identity never appeared in training."""
    seen = set()
    for snap in train:
        seen.update(snap.targets)
    return {k: v for k, v in test.complete().items() if k not in seen}


def weekly_c2(snapshots: Sequence[FingerprintSnapshot], t: float = 0.8, augment_http: bool = False,
              label: Callable[[TargetView], bool] = is_c2) -> list[WeekResult]:
    """Train on weeks [1..n], evaluate on new targets of week n+1, for every n."""
    out = []
    for n in range(1, len(snapshots)):
        table = train_c2(snapshots[:n], augment_http, label)
        scope = new_targets(snapshots[:n], snapshots[n])
        if not scope:
            continue
        preds = {k: classify_c2(table, table.key_for(v), t) for k, v in scope.items()}
        truth = {k: label(v) for k, v in scope.items()}
        out.append(WeekResult(snapshots[n].snapshot_id, evaluate(preds, truth), len(scope)))
    return out


def weekly_cdn(snapshots: Sequence[FingerprintSnapshot], min_count: int = 10, label_key: str = "cdn") -> list[WeekResult]:
    out = []
    for n in range(1, len(snapshots)):
        model = train_cdn(snapshots[:n], min_count, label_key)
        scope = new_targets(snapshots[:n], snapshots[n])
        if not scope:
            continue
        preds = {k: predict_cdn(model, v.fingerprint) for k, v in scope.items()}
        truth = {k: v.labels.get(label_key) or None for k, v in scope.items()}
        out.append(WeekResult(snapshots[n].snapshot_id, evaluate(preds, truth), len(scope)))
    return out


def _fmt(x) -> str:
    return "" if x is None else f"{x:.4f}"


def series_csv(results: Sequence[WeekResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["week", "scope", "tp", "fp", "pp", "precision", "recall"])
    for r in results:
        rep = r.report
        w.writerow([r.week, r.scope, rep.tp, rep.fp, rep.pp, _fmt(rep.precision), _fmt(rep.recall)])
    return buf.getvalue()


def summary_text(title: str, results: Sequence[WeekResult]) -> str:
    lines = [title]
    for r in results:
        rep = r.report
        lines.append(
            f"  {r.week}: scope={r.scope} tp={rep.tp} fp={rep.fp} pp={rep.pp} "
            f"precision={_fmt(rep.precision) or 'n/a'} recall={_fmt(rep.recall) or 'n/a'}"
        )
    if not results:
        lines.append("  no evaluable weeks")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Configuration comparison


@dataclass(frozen=True)
class Config:
    name: str
    mode: str = "full"  # "full" | "jarm"
    probe_ids: tuple[str, ...] | None = None  # None: every probe of the dataset

    def __post_init__(self):
        if self.mode not in ("full", "jarm"):
            raise ValueError(f"unknown feature mode {self.mode!r}")


@dataclass
class ConfigResult:
    name: str
    unique_fingerprints: int
    unique_c2_only: int
    c2_targets_identified: int
    sweep: list[tuple[int, float | None, float | None]] = field(default_factory=list)


def apply_config(snap: FingerprintSnapshot, config: Config) -> FingerprintSnapshot:
    ids = config.probe_ids or snap.probe_ids
    missing = set(ids) - set(snap.probe_ids)
    if missing:
        raise MissingProbeData(f"{config.name}: probes {sorted(missing)} absent from snapshot {snap.snapshot_id}")
    out = snap.restrict(ids)
    if config.mode == "jarm":
        out = out.map(lambda fp: fp.map(project_jarm))
    return out


def count_unique(snapshots: Sequence[FingerprintSnapshot], label: Callable[[TargetView], bool] = is_c2) -> tuple[int, int, int]:
    """(distinct fingerprints, fingerprints seen only on C2 targets, C2 targets carrying one)."""
    kinds: dict[str, set] = defaultdict(set)
    c2_targets: dict[str, set] = defaultdict(set)
    for snap in snapshots:
        for ident, view in snap.complete().items():
            key = view.fingerprint.key
            c2 = bool(label(view))
            kinds[key].add(c2)
            if c2:
                c2_targets[key].add(ident)
    only = [k for k, v in kinds.items() if v == {True}]
    return len(kinds), len(only), len({i for k in only for i in c2_targets[k]})


def classification_matrix(snapshots: Sequence[FingerprintSnapshot]) -> ResponseMatrix:
    """Targets x probes matrix over every complete target of the snapshots."""
    if not snapshots:
        raise MissingProbeData("no snapshots")
    cols = list(snapshots[0].probe_ids)
    m = ResponseMatrix([], cols)
    for snap in snapshots:
        for ident, view in snap.complete().items():
            row = f"{snap.snapshot_id}|{ident}"
            m.rows.append(row)
            for pid, fs in view.fingerprint.entries.items():
                m.set(row, pid, fs.text)
    return m


def probe_count_sweep(snapshots: Sequence[FingerprintSnapshot], order: Sequence[str], t: float = 0.8,
                      augment_http: bool = False, label: Callable[[TargetView], bool] = is_c2,
                      mode: str = "full") -> list[tuple[int, float | None, float | None]]:
    """C2 precision and recall on the last snapshot when using the first k
    probes of ``order``, for every k.  Earlier snapshots are the training set."""
    if len(snapshots) < 2:
        raise MissingProbeData("a sweep needs at least one training and one test snapshot")
    out = []
    for k in range(1, len(order) + 1):
        cfg = Config(f"k={k}", mode, tuple(order[:k]))
        snaps = [apply_config(s, cfg) for s in snapshots]
        table = train_c2(snaps[:-1], augment_http, label)
        scope = new_targets(snaps[:-1], snaps[-1])
        if not scope:
            raise MissingProbeData("test snapshot holds no new targets")
        preds = {i: classify_c2(table, table.key_for(v), t) for i, v in scope.items()}
        rep = evaluate(preds, {i: label(v) for i, v in scope.items()})
        out.append((k, rep.precision, rep.recall))
    return out


def compare_configs(snapshots: Sequence[FingerprintSnapshot], configs: Sequence[Config],
                    threshold: float | None = None, label: Callable[[TargetView], bool] = is_c2) -> list[ConfigResult]:
    """Per config: distinct fingerprints, C2-only fingerprints and the C2
    targets they cover; with a threshold, also a probe-count sweep in greedy
    order over the training snapshots."""
    if not snapshots or not any(s.complete() for s in snapshots):
        raise MissingProbeData("dataset holds no complete fingerprints")
    results = []
    for cfg in configs:
        snaps = [apply_config(s, cfg) for s in snapshots]
        if not any(s.complete() for s in snaps):
            raise MissingProbeData(f"{cfg.name}: no target has data for every probe")
        uniq, c2_only, c2_targets = count_unique(snaps, label)
        res = ConfigResult(cfg.name, uniq, c2_only, c2_targets)
        # the sweep needs new targets in the last snapshot to evaluate on
        if threshold is not None and len(snaps) >= 2 and new_targets(snaps[:-1], snaps[-1]):
            matrix = classification_matrix(snaps[:-1])
            order = greedy_select(matrix, len(matrix.columns))
            res.sweep = probe_count_sweep(snapshots, order, threshold, label=label, mode=cfg.mode)
        results.append(res)
    return results


def comparison_text(results: Sequence[ConfigResult]) -> str:
    lines = [f"{'config':<20} {'unique fps':>10} {'C2-only fps':>12} {'C2 targets':>11}"]
    for r in results:
        lines.append(f"{r.name:<20} {r.unique_fingerprints:>10} {r.unique_c2_only:>12} {r.c2_targets_identified:>11}")
        for k, p, rc in r.sweep:
            lines.append(f"    k={k:<3} precision={_fmt(p) or 'n/a'} recall={_fmt(rc) or 'n/a'}")
    return "\n".join(lines)
