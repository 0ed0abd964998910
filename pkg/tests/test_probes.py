import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tlsfp import constants as C
from tlsfp.codec import encode_client_hello, parse_client_hello
from tlsfp.engine import render_context
from tlsfp.probes import (
    EmptySpace,
    ExtensionCandidate,
    FeatureSpace,
    KTooLarge,
    ResponseMatrix,
    UnknownColumn,
    assign_round_robin,
    baseline_pool,
    design_probes,
    distinct_behavior_count,
    generate_pool,
    greedy_select,
    iana_space,
    rank_singletons,
    random_client_hello,
    scanner_space,
    selection_curve,
)


# ------------------------------------------------------------ oracles


def oracle_count(matrix, subset):
    rows = [r for r in matrix.rows if all(matrix.cell(r, c) is not None for c in matrix.columns)]
    return len({tuple(matrix.cell(r, c) for c in subset) for r in rows})


def oracle_best(matrix, k):
    return max(oracle_count(matrix, s) for s in itertools.combinations(matrix.columns, k))


@st.composite
def matrices(draw, max_rows=20, max_cols=6, absent=True):
    ncols = draw(st.integers(1, max_cols))
    nrows = draw(st.integers(0, max_rows))
    cols = [f"c{j}" for j in range(ncols)]
    m = ResponseMatrix([f"s{i}" for i in range(nrows)], cols)
    values = st.sampled_from(["a", "b", "c", "d"])
    for r in m.rows:
        for c in cols:
            if absent and draw(st.integers(0, 14)) == 0:
                continue
            m.set(r, c, draw(values))
    return m


# ---------------------------------------------------------- generation


@pytest.mark.parametrize("space", [scanner_space(), iana_space()])
def test_deterministic(space):
    assert random_client_hello(space, 7) == random_client_hello(space, 7)
    assert random_client_hello(space, 7) != random_client_hello(space, 8)


def test_exclusion_honoured_over_5000_samples():
    space = iana_space()
    for spec in generate_pool(space, 5000, "excl"):
        assert C.GROUP_SECP521R1 not in spec.key_share_groups()


def test_custom_exclusions():
    space = FeatureSpace(
        legacy_versions=(C.TLS12,), supported_versions=(C.TLS12,), ciphers=(1, 2, 3),
        extensions=(ExtensionCandidate(16, "alpn", ("h2", "x"), (1, 2), mandatory=True),),
        exclusions={"cipher": frozenset({2}), "alpn": frozenset({"x"})},
    )
    for i in range(200):
        spec = random_client_hello(space, i)
        assert 2 not in spec.cipher_suites
        assert spec.extensions[0].values == ("h2",)


def test_singleton_space():
    space = FeatureSpace(
        legacy_versions=(C.TLS12,), supported_versions=(C.TLS13,), ciphers=(0x1301,), cipher_count=(1, 1),
        extensions=(ExtensionCandidate(43, "supported_versions", (C.TLS13,), mandatory=True),),
        exclusions={}, session_id_policies=("empty",),
    )
    specs = {random_client_hello(space, s) for s in range(20)}
    assert len(specs) == 1
    (spec,) = specs
    assert spec.cipher_suites == (0x1301,) and [t.values for t in spec.extensions] == [(C.TLS13,)]


def test_empty_space():
    space = FeatureSpace((C.TLS12,), (C.TLS12,), (5,), (), exclusions={"cipher": frozenset({5})})
    with pytest.raises(EmptySpace):
        random_client_hello(space, 0)
    mandatory = FeatureSpace((C.TLS12,), (), (5,), (ExtensionCandidate(10, "supported_groups", (), mandatory=True),))
    with pytest.raises(EmptySpace):
        random_client_hello(mandatory, 0)


@pytest.mark.parametrize("space", [scanner_space(), iana_space()])
def test_generated_specs_render(space):
    for spec in generate_pool(space, 200, "render"):
        ctx, _ = render_context(spec, "example.com")
        parsed = parse_client_hello(encode_client_hello(spec, ctx))
        assert parsed.cipher_suites == spec.effective_ciphers()


def test_key_share_within_offered_groups():
    for spec in generate_pool(scanner_space(), 500, "ks"):
        groups = next((t.values for t in spec.extensions if t.kind == "supported_groups"), None)
        if groups and set(groups) - {C.GROUP_SECP521R1}:
            assert set(spec.key_share_groups()) <= set(groups)
        else:
            # nothing shareable was offered: fall back to any allowed group
            assert C.GROUP_SECP521R1 not in spec.key_share_groups()


def test_no_duplicate_extensions_generated():
    for spec in generate_pool(iana_space(), 500, "dup"):
        ids = [t.ext_id for t in spec.extensions]
        assert len(ids) == len(set(ids))


def test_pool_ids_distinct():
    pool = generate_pool(scanner_space(), 1000, 1)
    assert len({p.id for p in pool}) == 1000


def test_baseline_pool_renders():
    pool = baseline_pool()
    assert len(pool) == 10 and len({p.id for p in pool}) == 10
    for spec in pool:
        ctx, _ = render_context(spec, "example.com")
        encode_client_hello(spec, ctx)


# ----------------------------------------------------------- round robin


def test_round_robin_example():
    pairs = assign_round_robin(["t0", "t1", "t2"], list(range(5)), 2)
    by_target = {}
    for t, p in pairs:
        by_target.setdefault(t, []).append(p)
    assert by_target == {"t0": [0, 1], "t1": [2, 3], "t2": [4, 0]}


def test_round_robin_whole_pool():
    pairs = assign_round_robin(["a", "b"], list("xyz"), 3)
    assert [p for t, p in pairs if t == "b"] == list("xyz")


def test_round_robin_default_k():
    pool = [f"p{i}" for i in range(5000)]
    pairs = assign_round_robin(range(50), pool)
    for t in range(50):
        assert len({p for tt, p in pairs if tt == t}) == 13


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 80))
def test_round_robin_balance(n, k, extra):
    if k > n:
        with pytest.raises(KTooLarge):
            assign_round_robin(["t"], list(range(n)), k)
        return
    if math.gcd(k, n) != 1:
        return
    targets = list(range(n + extra))[:n]
    counts = {}
    for t, p in assign_round_robin(targets, list(range(n)), k):
        counts[p] = counts.get(p, 0) + 1
    assert max(counts.values()) - min(counts.values()) <= 1


# --------------------------------------------------------------- counting


def test_count_examples():
    m = ResponseMatrix(["r1", "r2"], ["col1", "col2"])
    for r, (a, b) in zip(m.rows, [("a", "b"), ("a", "c")]):
        m.set(r, "col1", a)
        m.set(r, "col2", b)
    assert distinct_behavior_count(m, ["col1"]) == 1
    assert distinct_behavior_count(m, ["col1", "col2"]) == 2
    assert distinct_behavior_count(m, []) == 1
    assert distinct_behavior_count(ResponseMatrix([], ["x"]), []) == 0


def test_incomplete_rows_ignored():
    m = ResponseMatrix(["r1", "r2"], ["a", "b"])
    m.set("r1", "a", "x")
    m.set("r1", "b", "y")
    m.set("r2", "a", "z")
    assert m.incomplete_rows() == ["r2"]
    assert distinct_behavior_count(m, ["a"]) == 1


def test_unknown_column():
    with pytest.raises(UnknownColumn):
        distinct_behavior_count(ResponseMatrix(["r"], ["a"]), ["b"])


@given(matrices(), st.data())
def test_count_matches_oracle_and_is_monotone(m, data):
    order = data.draw(st.permutations(m.columns))
    prev = -1
    for i in range(len(order) + 1):
        c = distinct_behavior_count(m, order[:i])
        assert c == oracle_count(m, order[:i])
        assert c >= prev
        prev = c


# --------------------------------------------------------------- greedy


def test_greedy_picks_argmax():
    m = ResponseMatrix([f"r{i}" for i in range(4)], ["A", "B"])
    for i, r in enumerate(m.rows):
        m.set(r, "A", str(i))
        m.set(r, "B", str(i % 2))
    assert greedy_select(m, 1) == ["A"]


def test_greedy_tie_break_smallest_id():
    m = ResponseMatrix(["r1", "r2"], ["zz", "mm", "aa"])
    for r, v in zip(m.rows, "xy"):
        for c in m.columns:
            m.set(r, c, v)
    assert greedy_select(m, 3) == ["aa", "mm", "zz"]


@given(matrices())
def test_greedy_k1_is_optimal(m):
    assert oracle_count(m, greedy_select(m, 1)) == oracle_best(m, 1)


@given(matrices(), st.integers(1, 3))
def test_greedy_bounded_by_exhaustive(m, k):
    k = min(k, len(m.columns))
    assert oracle_count(m, greedy_select(m, k)) <= oracle_best(m, k)


@given(matrices())
def test_greedy_prefix_property(m):
    full = greedy_select(m, len(m.columns))
    for j in range(len(full) + 1):
        assert greedy_select(m, j) == full[:j]


def test_greedy_k_too_large():
    with pytest.raises(KTooLarge):
        greedy_select(ResponseMatrix(["r"], ["a"]), 2)


def test_selection_curve():
    m = ResponseMatrix(["r1", "r2", "r3"], ["a", "b"])
    for r, (x, y) in zip(m.rows, [("1", "1"), ("1", "2"), ("2", "2")]):
        m.set(r, "a", x)
        m.set(r, "b", y)
    assert selection_curve(m, ["a", "b"]) == [1, 2, 3]


@given(matrices())
def test_csv_round_trip(tmp_path_factory, m):
    path = tmp_path_factory.mktemp("m") / "m.csv"
    m.to_csv(path)
    back = ResponseMatrix.from_csv(path)
    assert back.rows == m.rows and back.columns == m.columns
    assert all(back.cell(r, c) == m.cell(r, c) for r in m.rows for c in m.columns)


def test_csv_requires_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,a\nx,1\n")
    with pytest.raises(ValueError):
        ResponseMatrix.from_csv(p)


def test_rank_singletons():
    m = ResponseMatrix(["r1", "r2"], ["b", "a", "c"])
    for r, v in zip(m.rows, "xy"):
        m.set(r, "a", v)
        m.set(r, "b", v)
        m.set(r, "c", "same")
    assert rank_singletons(m) == [("a", 2), ("b", 2), ("c", 1)]


def test_design_workflow():
    pool = generate_pool(scanner_space(), 30, "design")
    targets = [f"t{i}" for i in range(40)]

    def respond(t, spec):
        # a server "behaviour" keyed on a few spec features
        return f"{hash((t[-1], spec.cipher_suites[0] % 3)) % 5}"

    result = design_probes(pool, targets, respond, per_target=13, shortlist=8, final=4)
    assert len(result.shortlist) == 8 and len(result.selection) == 4
    assert set(result.selection) <= set(result.shortlist)
    assert result.curve == selection_curve(result.phase2, result.selection)
    assert all(len(result.phase1.cells.get(t, {})) == 13 for t in targets)
