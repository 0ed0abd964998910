import json

import pytest

from tlsfp.cli import main
from tlsfp.codec import load_pool
from tlsfp.scan import read_records


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "probes-gen", "--bogus")
    assert code == 2 and "usage" in err


def test_missing_subcommand_is_usage_error(capsys):
    assert run(capsys)[0] == 2


def test_unreadable_targets_is_operational_error(workdir, capsys):
    assert run(capsys, "probes-gen", "--baseline", "--out", "pool.json")[0] == 0
    code, _, err = run(capsys, "scan", "--targets", "missing.csv", "--probes", "pool.json", "--snapshot-id", "w1")
    assert code == 1 and "missing.csv" in err


def test_probes_gen_5000(workdir, capsys):
    code, out, _ = run(capsys, "probes-gen", "--space", "iana", "--count", "5000", "--seed", "7", "--out", "pool.json")
    assert code == 0 and "5000" in out
    pool = load_pool("pool.json")
    assert len(pool) == 5000
    run(capsys, "probes-gen", "--space", "iana", "--count", "5000", "--seed", "7", "--out", "again.json")
    assert (workdir / "pool.json").read_bytes() == (workdir / "again.json").read_bytes()


def test_eval(workdir, capsys):
    (workdir / "pred.csv").write_text("a,c2\nb,c2\nc,c2\nd,c2\n")
    (workdir / "truth.csv").write_text("a,c2\nb,c2\nc,c2\nd,\ne,c2\nf,c2\ng,c2\n")
    code, out, _ = run(capsys, "eval", "--predictions", "pred.csv", "--truth", "truth.csv")
    assert code == 0
    rep = json.loads(out)
    assert (rep["tp"], rep["fp"], rep["pp"]) == (3, 1, 6)
    assert rep["precision"] == 0.75 and rep["recall"] == 0.5


def test_eval_empty_scope(workdir, capsys):
    (workdir / "empty.csv").write_text("")
    assert run(capsys, "eval", "--predictions", "empty.csv", "--truth", "empty.csv")[0] == 1


def test_simulated_workflow(workdir, capsys):
    assert run(capsys, "probes-gen", "--baseline", "--out", "pool.json")[0] == 0
    code, _, _ = run(capsys, "simulate", "--seed", "3", "--count", "30", "--out", "pop.json",
                     "--probes", "pool.json", "--matrix-out", "m.csv")
    assert code == 0 and (workdir / "m.csv").exists()

    code, out, _ = run(capsys, "probes-select", "--pool", "pool.json", "--population", "pop.json", "--k", "4",
                       "--seed", "3", "--out", "sel.json")
    assert code == 0 and len(load_pool("sel.json")) == 4
    assert out.splitlines()[0] == "k,probe_id,distinct_behaviors"
    code, out2, _ = run(capsys, "probes-select", "--pool", "pool.json", "--matrix", "m.csv", "--k", "4", "--out", "sel2.json")
    assert code == 0 and out2 == out

    rows = []
    for i in range(40):
        src = "blocklist" if i % 4 == 0 else "toplist"
        rows.append(f"10.0.{i // 20}.{i % 20 + 1},443,host{i}.test,{src},cdn={'akamai' if i % 3 == 0 else ''}")
    (workdir / "w1.csv").write_text("\n".join(rows[:30]) + "\n")
    (workdir / "w2.csv").write_text("\n".join(rows[10:]) + "\n")
    for week, targets in (("w1", "w1.csv"), ("w2", "w2.csv")):
        code, out, err = run(capsys, "--output-dir", "out", "scan", "--targets", targets, "--probes", "pool.json",
                             "--snapshot-id", week, "--simulate", "pop.json", "--seed", "5", "--rate", "1000",
                             "--window", "1")
        assert code == 0, err
        assert json.loads(out)["attempted"] == 300
    assert len(read_records([workdir / "out" / "records-w1.jsonl"])) == 300
    assert (workdir / "out" / "manifest-w2.json").exists()

    # rerunning into a used snapshot id is refused
    code, _, err = run(capsys, "--output-dir", "out", "scan", "--targets", "w1.csv", "--probes", "pool.json",
                       "--snapshot-id", "w1", "--simulate", "pop.json")
    assert code == 1 and "already" in err

    recs = ["--records", "out/records-w1.jsonl", "out/records-w2.jsonl", "--probes", "pool.json"]
    code, out, _ = run(capsys, "stability", *recs)
    assert code == 0
    header, row = out.splitlines()
    assert header.startswith("snapshot,shared_targets") and row.startswith("w2,20,20,1.0000")

    code, out, _ = run(capsys, "--output-dir", "out", "classify-c2", *recs, "--plot-data")
    assert code == 0 and "w2" in out and (workdir / "out" / "c2.csv").exists()
    code, out, _ = run(capsys, "classify-c2", *recs, "--augment-http", "--threshold", "0.5")
    assert code == 0 and "HTTP Server header" in out

    code, out, _ = run(capsys, "classify-cdn", *recs, "--min-count", "2")
    assert code == 0 and "CDN model" in out

    code, out, _ = run(capsys, "--output-dir", "out", "compare", *recs, "--threshold", "0.8", "--plot-data")
    assert code == 0 and "full" in out and "jarm" in out
    assert (workdir / "out" / "compare.csv").exists()
    code, _, err = run(capsys, "compare", *recs, "--config", "x:full:nope")
    assert code == 1 and "nope" in err


def test_scan_reproducible(workdir, capsys):
    run(capsys, "probes-gen", "--baseline", "--out", "pool.json")
    run(capsys, "simulate", "--seed", "1", "--count", "10", "--out", "pop.json")
    (workdir / "t.csv").write_text("".join(f"10.1.0.{i},443,,toplist\n" for i in range(1, 6)))
    outs = []
    for d in ("a", "b"):
        assert run(capsys, "--output-dir", d, "scan", "--targets", "t.csv", "--probes", "pool.json",
                   "--snapshot-id", "w1", "--simulate", "pop.json", "--seed", "9")[0] == 0
        recs = read_records([workdir / d / "records-w1.jsonl"])
        outs.append(sorted((r.ip, r.probe_id, r.feature) for r in recs))
    assert outs[0] == outs[1]
