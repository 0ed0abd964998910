import pytest
from hypothesis import given
from hypothesis import strategies as st

from tlsfp import constants as C
from tlsfp.codec import ClientHelloSpec, ExtensionTemplate, MessageKind
from tlsfp.features import RETENTION_POLICY, FeatureString, extract_features
from tlsfp.observation import Outcome, Target
from tlsfp.probes import baseline_pool, distinct_behavior_count, greedy_select
from tlsfp.sim import (
    BehaviorModel,
    PopulationKnobs,
    ServerExtension,
    SimulatedNetwork,
    assign_hosts,
    build_matrix,
    dump_population,
    generate_population,
    load_population,
    respond,
)

ALL_CIPHERS = (0x1301, 0x1302, 0x1303, 0xC02F, 0xC030, 0xC02B, 0xC02C, 0xCCA8, 0xCCA9, 0x009C, 0x009D, 0x009E,
               0xC013, 0xC014, 0x002F, 0x0035, 0x000A)


def wide_probe(pid="wide", alpn=True, ciphers=ALL_CIPHERS, status=False, share=29, versions=(C.TLS13, C.TLS12, C.TLS11, C.TLS10)):
    exts = [
        ExtensionTemplate(0, "sni"),
        ExtensionTemplate(10, "supported_groups", (29, 23, 24, 30, 25)),
        ExtensionTemplate(13, "signature_algorithms", (0x0403, 0x0804)),
        ExtensionTemplate(43, "supported_versions", versions),
        ExtensionTemplate(51, "key_share", (share,)),
    ]
    if alpn:
        exts.append(ExtensionTemplate(16, "alpn", ("h2", "http/1.1")))
    if status:
        exts.append(ExtensionTemplate(5, "literal", literal=bytes.fromhex("0100000000")))
    return ClientHelloSpec(pid, C.TLS12, tuple(ciphers), extensions=tuple(exts))


def test_cipher_preference():
    model = BehaviorModel("m", cipher_preference=(0x1302, 0x1301))
    obs = respond(model, wide_probe(ciphers=(0x1301, 0x1302)), 0)
    assert obs.first(MessageKind.SERVER_HELLO).cipher == 0x1302
    client = BehaviorModel("c", cipher_preference=(0x1302, 0x1301), prefer_client_order=True)
    assert respond(client, wide_probe(ciphers=(0x1301, 0x1302)), 0).first(MessageKind.SERVER_HELLO).cipher == 0x1301


def test_no_cipher_overlap_alerts_40():
    obs = respond(BehaviorModel("m"), wide_probe(ciphers=(0x0005,)), 0)
    assert obs.outcome == Outcome.ALERTED_ONLY
    assert obs.alerts == [(2, 40)]
    assert extract_features(obs).text == "_______<40"


def test_extension_order_is_a_feature():
    order = BehaviorModel.server_extension_order
    swapped = (order[1], order[0]) + order[2:]
    a = respond(BehaviorModel("a", supported_versions=(C.TLS13,)), wide_probe(), 0)
    b = respond(BehaviorModel("b", supported_versions=(C.TLS13,), server_extension_order=swapped), wide_probe(), 0)
    assert extract_features(a) != extract_features(b)


def test_tls13_layout():
    model = BehaviorModel("m", status_request_presence="always")
    obs = respond(model, wide_probe(status=True), 0, sni="x.test")
    assert [m.kind for m in obs.messages] == [MessageKind.SERVER_HELLO, MessageKind.ENCRYPTED_EXTENSIONS, MessageKind.CERTIFICATE]
    sh, ee, cert = obs.messages
    assert [i for i, _ in sh.extensions] == [43, 51]
    assert [i for i, _ in ee.extensions] == [0, 16]
    assert [i for i, _ in cert.extensions] == [5]
    assert obs.cert_validity.valid


def test_tls12_layout():
    model = BehaviorModel("m", supported_versions=(C.TLS12,))
    obs = respond(model, wide_probe(), 0, sni="x.test")
    assert [m.kind for m in obs.messages] == [MessageKind.SERVER_HELLO, MessageKind.CERTIFICATE]
    assert obs.messages[1].extensions == []
    assert 43 not in [i for i, _ in obs.messages[0].extensions]


def test_hello_retry_when_no_share():
    probe = wide_probe()
    probe = ClientHelloSpec("hrr", probe.legacy_version, probe.cipher_suites,
                            extensions=tuple(t if t.ext_id != 51 else ExtensionTemplate(51, "key_share", ()) for t in probe.extensions))
    obs = respond(BehaviorModel("m", supported_versions=(C.TLS13,)), probe, 0)
    assert [m.kind for m in obs.messages] == [MessageKind.HELLO_RETRY_REQUEST]
    never = respond(BehaviorModel("n", supported_versions=(C.TLS13,), hrr_policy="never"), probe, 0)
    assert never.outcome == Outcome.ALERTED_ONLY


def test_timeout_policy():
    model = BehaviorModel("m", supported_versions=(C.TLS13,), alert_policy={"no_version_overlap": "timeout"})
    obs = respond(model, baseline_pool()[7], 0)  # TLS 1.0 only
    assert extract_features(obs).text == "_______!timeout"


def test_unreachable():
    obs = respond(BehaviorModel("m", unreachable=True), wide_probe(), 0)
    assert obs.outcome == Outcome.TRANSPORT_ERROR and obs.messages == []


def test_untrusted_and_expired_certs():
    assert respond(BehaviorModel("u", cert_trusted=False), wide_probe(), 0, sni="a.test").cert_validity.reason == "untrusted-root"
    assert respond(BehaviorModel("e", cert_expired=True), wide_probe(), 0, sni="a.test").cert_validity.reason == "expired"
    assert respond(BehaviorModel("n", cert_names=("b.test",)), wide_probe(), 0, sni="a.test").cert_validity.reason == "name-mismatch"


def test_status_request_only_when_offered():
    model = BehaviorModel("m", status_request_presence="always")
    ids = lambda o: [i for m in o.messages for i, _ in m.extensions]
    assert 5 not in ids(respond(model, wide_probe(status=False), 0))
    assert 5 in ids(respond(model, wide_probe(status=True), 0))


def test_bernoulli_seeded():
    model = BehaviorModel("m", status_request_presence="bernoulli", status_request_p=0.5)
    probe = wide_probe(status=True)
    texts = [extract_features(respond(model, probe, s), RETENTION_POLICY).text for s in range(200)]
    assert texts == [extract_features(respond(model, probe, s), RETENTION_POLICY).text for s in range(200)]
    present = sum(5 in FeatureString.parse(t).extension_ids("cert") for t in texts)
    assert 60 < present < 140
    # the default policy hides the coin entirely
    assert len({extract_features(respond(model, probe, s)).text for s in range(200)}) == 1


@given(st.integers(0, 2**32))
def test_respond_is_deterministic(seed):
    model = generate_population(seed, 1)[0]
    for probe in baseline_pool():
        a, b = respond(model, probe, seed), respond(model, probe, seed)
        assert a.outcome == b.outcome
        if a.outcome != Outcome.TRANSPORT_ERROR:
            assert extract_features(a, RETENTION_POLICY) == extract_features(b, RETENTION_POLICY)


def test_population_basics():
    assert len(generate_population(1, 1)) == 1
    assert generate_population(5, 40) == generate_population(5, 40)
    assert generate_population(5, 40) != generate_population(6, 40)
    with pytest.raises(ValueError):
        generate_population(1, 0)


def test_alpn_twins_need_an_alpn_probe():
    pop = generate_population(3, 40, PopulationKnobs(alpn_twins=10))
    variants = [dict(share=g) for g in (29, 23, 24)] + [dict(versions=(C.TLS12,))]
    with_alpn = [wide_probe(f"with{i}", **v) for i, v in enumerate(variants)]
    without = [wide_probe(f"without{i}", alpn=False, **v) for i, v in enumerate(variants)]
    m = build_matrix(pop[:20], with_alpn + without)
    for i in range(0, 20, 2):
        a, b = pop[i].behavior_id, pop[i + 1].behavior_id
        assert all(m.cell(a, p.id) == m.cell(b, p.id) for p in without)
        assert any(m.cell(a, p.id) != m.cell(b, p.id) for p in with_alpn)
    no_alpn_ids = [p.id for p in without]
    assert distinct_behavior_count(m, no_alpn_ids) < distinct_behavior_count(m, m.columns)


def test_matrix_shape_and_determinism():
    pop = generate_population(9, 10)
    pool = baseline_pool()[:5]
    m = build_matrix(pop, pool, seed=4)
    assert sum(len(v) for v in m.cells.values()) == 50
    assert build_matrix(pop, pool, seed=4).cells == m.cells
    assert len(greedy_select(m, 3)) == 3


def test_population_json_round_trip(tmp_path):
    pop = generate_population(2, 25, PopulationKnobs(status_request_bernoulli=0.5, alpn_twins=2))
    dump_population(pop, tmp_path / "pop.json")
    assert load_population(tmp_path / "pop.json") == pop


def test_model_validation():
    with pytest.raises(ValueError):
        BehaviorModel("m", hrr_policy="sometimes")
    with pytest.raises(ValueError):
        BehaviorModel("m", alert_policy={"bogus": 40})
    with pytest.raises(ValueError):
        ServerExtension(1, when="maybe")


def test_simulated_network():
    pop = generate_population(1, 5)
    hosts = assign_hosts(pop, 20, 1)
    assert len(hosts) == 20 and {m.behavior_id for m in hosts.values()} <= {m.behavior_id for m in pop}
    net = SimulatedNetwork(hosts, seed=1)
    probe = baseline_pool()[0]
    ip = next(iter(hosts))
    assert net(Target(ip, 443, "a.test"), probe).target.ip == ip
    assert net(Target("192.0.2.1", 443), probe).outcome == Outcome.TRANSPORT_ERROR
