"""Command line entry point.  Exit codes: 0 ok, 1 operational error, 2 usage error."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import analytics as A
from . import probes as P
from . import scan as S
from . import sim
from .codec import dump_pool, load_pool
from .features import DEFAULT_POLICY, RETENTION_POLICY


class OperationalError(Exception):
    pass


def _out(args, name: str) -> Path:
    d = Path(args.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _records(args):
    return S.read_records(args.records)


def _probe_ids(args) -> list[str]:
    return [p.id for p in load_pool(args.probes)]


def _snapshots(args, policy=DEFAULT_POLICY):
    snaps = A.snapshots_from_records(_records(args), _probe_ids(args), policy)
    if not snaps:
        raise OperationalError("no records found")
    return snaps


# --------------------------------------------------------------------------
# Subcommands


def cmd_probes_gen(args) -> int:
    if args.baseline:
        pool = P.baseline_pool()
    else:
        space = P.SPACES[args.space]()
        pool = P.generate_pool(space, args.count, args.seed)
    dump_pool(pool, args.out)
    print(f"wrote {len(pool)} probes to {args.out}")
    return 0


def cmd_probes_select(args) -> int:
    pool = load_pool(args.pool)
    if args.matrix:
        matrix = P.ResponseMatrix.from_csv(args.matrix)
    elif args.records:
        snap = A.build_snapshot(S.read_records(args.records), [p.id for p in pool], RETENTION_POLICY)
        matrix = A.classification_matrix([snap])
    elif args.population:
        population = sim.load_population(args.population)
        if args.per_target and args.per_target < len(pool):
            models = {m.behavior_id: m for m in population}

            def respond(bid, spec):
                obs = sim.respond(models[bid], spec, sim.derive_seed(args.seed, bid, spec.id), sni="sim.example")
                return _feature_text(obs)

            result = P.design_probes(pool, list(models), respond, per_target=args.per_target,
                                     shortlist=args.shortlist, final=args.k)
            return _finish_selection(args, pool, result.selection, result.curve, result.phase2)
        matrix = sim.build_matrix(population, pool, DEFAULT_POLICY, args.seed)
    else:
        raise OperationalError("one of --matrix, --records or --population is required")
    lost = len(matrix.incomplete_rows())
    if lost:
        print(f"{lost} incomplete rows excluded from counting", file=sys.stderr)
    order = P.greedy_select(matrix, args.k)
    return _finish_selection(args, pool, order, P.selection_curve(matrix, order), matrix)


def _feature_text(obs):
    from .features import extract_features
    from .observation import Outcome

    return None if obs.outcome == Outcome.TRANSPORT_ERROR else extract_features(obs).text


def _finish_selection(args, pool, order, curve, matrix) -> int:
    by_id = {p.id: p for p in pool}
    dump_pool([by_id[i] for i in order], args.out)
    if args.matrix_out:
        matrix.to_csv(args.matrix_out)
    print("k,probe_id,distinct_behaviors")
    for k, (pid, n) in enumerate(zip(order, curve[1:]), start=1):
        print(f"{k},{pid},{n}")
    return 0


def cmd_simulate(args) -> int:
    knobs = sim.PopulationKnobs(
        alpn_twins=args.alpn_twins,
        status_request_bernoulli=args.status_bernoulli,
        status_request_p=args.status_p,
    )
    population = sim.generate_population(args.seed, args.count, knobs)
    sim.dump_population(population, args.out)
    print(f"wrote {len(population)} behaviour models to {args.out}")
    if args.probes and args.matrix_out:
        matrix = sim.build_matrix(population, load_pool(args.probes), DEFAULT_POLICY, args.seed)
        matrix.to_csv(args.matrix_out)
        print(f"wrote {len(matrix.rows)}x{len(matrix.columns)} matrix to {args.matrix_out}")
    return 0


def cmd_scan(args) -> int:
    pool = load_pool(args.probes)
    targets = S.ingest_targets(args.targets)
    skipped = []
    if any(t.ip is None for t in targets) and not args.simulate:
        targets, skipped = S.resolve_targets(targets, args.resolver)
    exclude = S.load_excludelist(args.exclude) if args.exclude else []
    plan = S.plan_scan(targets, pool, args.window, args.rate, exclude, args.seed)
    records = _out(args, f"records-{args.snapshot_id}.jsonl")
    if records.exists() and records.stat().st_size:
        raise OperationalError(f"{records} already holds records; pick a new snapshot id")
    if args.simulate:
        population = sim.load_population(args.simulate)
        hosts = {}
        for t in targets:
            if t.ip is not None:
                hosts[t.ip] = population[sim.derive_seed(args.seed, t.ip) % len(population)]
        prober = sim.SimulatedNetwork(hosts, args.seed, args.fetch_http_header)
        clock = S.SimClock()
    else:
        from .certs import load_trust_store
        from .engine import EngineConfig

        config = EngineConfig(
            connect_timeout=args.timeout,
            read_timeout=args.timeout,
            fetch_http_header=args.fetch_http_header,
            trust_store=load_trust_store(args.trust_store) if args.trust_store else [],
            keylog_path=args.keylog,
        )
        prober = S.live_prober(config)
        clock = S.RealClock()
    store = S.JsonlStore(records)
    try:
        summary = S.run_scan(plan, pool, prober, store, args.snapshot_id, args.concurrency, clock)
    finally:
        store.close()
    S.write_manifest(_out(args, f"manifest-{args.snapshot_id}.json"), args.snapshot_id, [records],
                     S.pool_digest(args.probes), summary)
    if skipped:
        _out(args, f"skipped-{args.snapshot_id}.json").write_text(json.dumps(skipped, indent=1))
    print(json.dumps({**summary.as_dict(), "excluded_targets": len(plan.excluded), "unresolved": len(skipped)}))
    return 0


def cmd_stability(args) -> int:
    snaps = _snapshots(args, RETENTION_POLICY)
    rows = []
    for prev, curr in zip(snaps, snaps[1:]):
        try:
            cmp = A.stability_comparison(prev, curr)
        except A.NoOverlap as exc:
            print(f"{curr.snapshot_id}: {exc}", file=sys.stderr)
            continue
        d, s = cmp["default"], cmp["with_status_request"]
        rows.append([curr.snapshot_id, d.shared_targets, d.identical, f"{d.ratio:.4f}", s.identical, f"{s.ratio:.4f}"])
    header = ["snapshot", "shared_targets", "identical", "ratio", "identical_with_ext5", "ratio_with_ext5"]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if args.plot_data:
        with open(_out(args, "stability.csv"), "w", newline="") as fh:
            csv.writer(fh).writerows([header, *rows])
    return 0


def _emit_series(args, name, title, results) -> int:
    print(A.summary_text(title, results))
    if args.plot_data:
        _out(args, f"{name}.csv").write_text(A.series_csv(results))
    return 0


def cmd_classify_cdn(args) -> int:
    snaps = _snapshots(args)
    model = A.train_cdn(snaps, args.min_count)
    for c in model.conflicts:
        print(f"conflict: {c}", file=sys.stderr)
    return _emit_series(args, "cdn", f"CDN model: {len(model)} fingerprints (min count {args.min_count})",
                        A.weekly_cdn(snaps, args.min_count))


def cmd_classify_c2(args) -> int:
    snaps = _snapshots(args)
    title = f"C2 classification, threshold {args.threshold}" + (" with HTTP Server header" if args.augment_http else "")
    return _emit_series(args, "c2", title, A.weekly_c2(snaps, args.threshold, args.augment_http))


def _parse_config(text: str) -> A.Config:
    name, _, rest = text.partition(":")
    mode, _, ids = rest.partition(":")
    return A.Config(name, mode or "full", tuple(i for i in ids.split(",") if i) or None)


def cmd_compare(args) -> int:
    snaps = _snapshots(args)
    configs = [_parse_config(c) for c in args.config] or [A.Config("full", "full"), A.Config("jarm", "jarm")]
    results = A.compare_configs(snaps, configs, args.threshold)
    print(A.comparison_text(results))
    if args.plot_data:
        rows = [["config", "k", "precision", "recall"]]
        rows += [[r.name, k, p, rc] for r in results for k, p, rc in r.sweep]
        with open(_out(args, "compare.csv"), "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return 0


def _read_labels(path) -> dict:
    with open(path, newline="") as fh:
        return {row[0]: (row[1] or None) if len(row) > 1 else None for row in csv.reader(fh) if row}


def cmd_eval(args) -> int:
    rep = A.evaluate(_read_labels(args.predictions), _read_labels(args.truth))
    out = {"tp": rep.tp, "fp": rep.fp, "pp": rep.pp, "precision": rep.precision, "recall": rep.recall,
           "per_label": {k: {"tp": v.tp, "fp": v.fp, "pp": v.pp, "precision": v.precision, "recall": v.recall}
                         for k, v in rep.per_label.items()}}
    print(json.dumps(out, indent=2))
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def globals_(default):
        g = argparse.ArgumentParser(add_help=False, argument_default=default)
        g.add_argument("--seed", type=int)
        g.add_argument("--verbose", "-v", action="store_true")
        g.add_argument("--output-dir")
        return g

    # Global flags work before or after the subcommand; the subcommand copy
    # must not clobber values given earlier, hence SUPPRESS there.
    common = globals_(argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="tlsfp", description="Active TLS server fingerprinting", parents=[globals_(None)])
    parser.set_defaults(seed=0, verbose=False, output_dir=".")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=fn)
        return p

    p = add("probes-gen", cmd_probes_gen, "generate random Client Hello probes")
    p.add_argument("--space", choices=sorted(P.SPACES), default="scanner")
    p.add_argument("--count", type=int, default=5000)
    p.add_argument("--baseline", action="store_true", default=False, help="write the built-in 10-probe pool instead")
    p.add_argument("--out", required=True)

    p = add("probes-select", cmd_probes_select, "greedy probe selection over a response matrix")
    p.add_argument("--pool", required=True)
    p.add_argument("--matrix", default=None)
    p.add_argument("--records", nargs="+", default=None)
    p.add_argument("--population", default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--per-target", type=int, default=0, help="two-phase design: probes per target in phase one")
    p.add_argument("--shortlist", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--matrix-out", default=None)

    p = add("scan", cmd_scan, "probe every target with every probe")
    p.add_argument("--targets", nargs="+", required=True)
    p.add_argument("--probes", required=True)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--window", type=float, default=60.0, help="seconds to spread the snapshot over")
    p.add_argument("--exclude", default=None)
    p.add_argument("--snapshot-id", required=True)
    p.add_argument("--resolver", default=None)
    p.add_argument("--concurrency", type=int, default=16)
    p.add_argument("--fetch-http-header", action="store_true", default=False)
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("--trust-store", default=None)
    p.add_argument("--keylog", default=None)
    p.add_argument("--simulate", default=None, metavar="POPULATION", help="answer from a simulated population")

    p = add("simulate", cmd_simulate, "generate a simulated server population")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--alpn-twins", type=int, default=0)
    p.add_argument("--status-bernoulli", type=float, default=0.0)
    p.add_argument("--status-p", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--probes", default=None)
    p.add_argument("--matrix-out", default=None)

    for name, fn, help_ in (
        ("stability", cmd_stability, "week-over-week fingerprint stability"),
        ("classify-cdn", cmd_classify_cdn, "CDN classification per week"),
        ("classify-c2", cmd_classify_c2, "C2 classification per week"),
        ("compare", cmd_compare, "full vs JARM-style features and probe-count sweeps"),
    ):
        p = add(name, fn, help_)
        p.add_argument("--records", nargs="+", required=True)
        p.add_argument("--probes", required=True)
        p.add_argument("--plot-data", action="store_true", default=False)
        if name == "classify-cdn":
            p.add_argument("--min-count", type=int, default=10)
        if name == "classify-c2":
            p.add_argument("--threshold", type=float, default=0.8)
            p.add_argument("--augment-http", action="store_true", default=False)
        if name == "compare":
            p.add_argument("--threshold", type=float, default=None)
            p.add_argument("--config", action="append", default=[], help="name:mode[:probe,ids]")

    p = add("eval", cmd_eval, "precision and recall of predictions against truth")
    p.add_argument("--predictions", required=True, help="CSV: id,label (empty label = negative)")
    p.add_argument("--truth", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OperationalError, OSError, ValueError, KeyError, S.StoreFailure, S.ResolverUnavailable) as exc:
        print(f"tlsfp {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
