import base64

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tlsfp import constants as C
from tlsfp.codec import MessageKind, ServerMessage
from tlsfp.features import (
    DEFAULT_POLICY,
    RETENTION_POLICY,
    ExtractionPolicy,
    FeatureParseError,
    FeatureString,
    RefusedTransportError,
    ServerFingerprint,
    assemble_fingerprint,
    extract_features,
    project_jarm,
    reapply_policy,
)
from tlsfp.observation import HandshakeObservation, Outcome, Target

T = Target("192.0.2.1", 443, "example.com")
GROUPS_BODY = bytes.fromhex("000a001d00170018001900")  # includes an odd tail on purpose


def obs(messages, probe="p1", outcome=Outcome.COMPLETED):
    alerts = [m.alert for m in messages if m.kind == MessageKind.ALERT]
    return HandshakeObservation(probe, T, outcome, messages=messages, alerts=alerts)


def alert(desc, level=2):
    return ServerMessage(MessageKind.ALERT, alert=(level, desc))


def sample_observation(status_request=False):
    sh_ext = [(43, b"\x03\x04"), (51, b"\x00\x17\x00\x41" + b"\x04" * 65)]
    cert_ext = [(18, b"\x00\x10sct-bytes")]
    if status_request:
        cert_ext.insert(0, (5, b"\x01\x00\x00\x03abc"))
    return obs([
        ServerMessage(MessageKind.SERVER_HELLO, version=0x0303, cipher=0x1301, extensions=sh_ext),
        ServerMessage(MessageKind.ENCRYPTED_EXTENSIONS, extensions=[(0, b""), (10, GROUPS_BODY)]),
        ServerMessage(MessageKind.CERTIFICATE, extensions=cert_ext),
        alert(40),
    ])


def test_canonical_example():
    oracle = base64.b64encode(GROUPS_BODY).decode().rstrip("=")
    fs = extract_features(sample_observation())
    assert fs.text == f"771_4865_43.AwQ-51.23_0-10.{oracle}___18_<40"


def test_alert_only():
    assert extract_features(obs([alert(70)])).text == "_______<70"


def test_status_request_stripped_by_default():
    a, b = sample_observation(False), sample_observation(True)
    assert extract_features(a) == extract_features(b)
    assert extract_features(a, RETENTION_POLICY) != extract_features(b, RETENTION_POLICY)


def test_transport_error_refused():
    with pytest.raises(RefusedTransportError):
        extract_features(HandshakeObservation.transport_error("p1", T, "refused"))


def test_markers():
    o = obs([
        ServerMessage(MessageKind.SERVER_HELLO, version=0x0303, cipher=0x1301, extensions=[(43, b"\x03\x04")]),
        ServerMessage(MessageKind.UNDECRYPTABLE),
    ])
    assert extract_features(o).text == "771_4865_43.AwQ_!undecryptable____"
    t = obs([ServerMessage(MessageKind.SERVER_HELLO, malformed=True), ServerMessage(MessageKind.TIMEOUT)])
    assert extract_features(t).text == "__!malformed_____!timeout"


def test_hrr_section():
    o = obs([
        ServerMessage(MessageKind.HELLO_RETRY_REQUEST, version=0x0303, cipher=0x1302, extensions=[(43, b"\x03\x04"), (51, b"\x00\x1d")]),
        ServerMessage(MessageKind.SERVER_HELLO, version=0x0303, cipher=0x1302, extensions=[(43, b"\x03\x04")]),
    ])
    assert extract_features(o).text == "771_4866_43.AwQ___43.AwQ-51.29__"


def test_non_whitelisted_value_dropped():
    o = obs([ServerMessage(MessageKind.SERVER_HELLO, version=0x0303, cipher=0xC02F,
                           extensions=[(65281, b"\x00"), (23, b""), (16, b"\x00\x03\x02h2")])])
    assert extract_features(o).text == "771_49199_65281-23-16.AAMCaDI_____"


def test_strip_wins_over_whitelist():
    policy = ExtractionPolicy(strip_extensions={16})
    o = obs([ServerMessage(MessageKind.SERVER_HELLO, version=0x0303, cipher=1, extensions=[(16, b"\x00")])])
    assert extract_features(o, policy).sh == ()


# ------------------------------------------------------------- grammar


ids = st.integers(0, 0xFFFF)
values = st.one_of(st.none(), st.binary(max_size=20))


@st.composite
def items(draw):
    if draw(st.integers(0, 9)) == 0:
        return draw(st.sampled_from(["!malformed", "!timeout", "!undecryptable", "!truncated"]))
    i = draw(ids)
    if i == C.EXT_KEY_SHARE:
        return (i, draw(st.one_of(st.none(), st.integers(0, 0xFFFF))))
    return (i, draw(values))


@st.composite
def feature_strings(draw):
    section = st.lists(items(), max_size=5).map(tuple)
    alert_items = st.lists(st.one_of(st.integers(0, 255), st.sampled_from(["!timeout", "!truncated", "!malformed"])), max_size=3)
    return FeatureString(
        draw(st.one_of(st.none(), ids)),
        draw(st.one_of(st.none(), ids)),
        draw(section), draw(section), draw(section), draw(section), draw(section),
        tuple(draw(alert_items)),
    )


@given(feature_strings())
def test_parse_inverts_render(fs):
    assert FeatureString.parse(fs.text) == fs


@given(feature_strings(), feature_strings())
def test_rendering_is_injective(a, b):
    assert (a.text == b.text) == (a == b)


@given(feature_strings())
def test_jarm_idempotent_and_alert_free(fs):
    p = project_jarm(fs)
    assert project_jarm(p) == p
    assert p.alerts == () and p.ee == p.cr == p.hrr == p.cert == ()
    assert [i if isinstance(i, str) else i[0] for i in p.sh] == [i if isinstance(i, str) else i[0] for i in fs.sh]


@given(st.lists(feature_strings(), max_size=30))
def test_jarm_never_refines(dataset):
    classes = {}
    for fs in dataset:
        classes.setdefault(fs, set()).add(project_jarm(fs))
    assert all(len(v) == 1 for v in classes.values())
    assert len({project_jarm(f) for f in dataset}) <= len(set(dataset))


@given(st.lists(feature_strings(), max_size=30), st.sets(ids, max_size=5), st.sets(ids, max_size=5))
def test_policy_monotonicity(dataset, strip_a, extra):
    narrow = ExtractionPolicy(strip_extensions=strip_a)
    narrower = ExtractionPolicy(strip_extensions=strip_a | extra)
    assert len({reapply_policy(f, narrower) for f in dataset}) <= len({reapply_policy(f, narrow) for f in dataset})


def test_reapply_matches_direct_extraction():
    for sr in (False, True):
        o = sample_observation(sr)
        assert reapply_policy(extract_features(o, RETENTION_POLICY), DEFAULT_POLICY) == extract_features(o)


@pytest.mark.parametrize("bad", ["", "1_2_3", "x_______", "771_4865_43.A!_____", "0771________", "_______<", "_______70", "__!bogus_____"])
def test_parse_rejects(bad):
    with pytest.raises(FeatureParseError):
        FeatureString.parse(bad)


def test_jarm_keeps_alpn_value_only():
    fs = FeatureString.parse("771_4865_43.AwQ-16.AAMCaDI-51.29_0___18_<40")
    assert project_jarm(fs).text == "771_4865_43-16.AAMCaDI-51_____"


def test_alert_only_pair_collapses_under_jarm():
    a = FeatureString.parse("771_49199_65281_____<40")
    b = FeatureString.parse("771_49199_65281_____<70")
    assert a != b and project_jarm(a) == project_jarm(b)


# -------------------------------------------------------- fingerprints


def completed(pid):
    return obs([ServerMessage(MessageKind.SERVER_HELLO, version=0x0303, cipher=0xC02F)], pid)


def test_assemble_complete():
    fp = assemble_fingerprint([completed(f"p{i}") for i in range(10)], [f"p{i}" for i in range(10)])
    assert fp.complete and len(fp) == 10


def test_assemble_with_transport_error():
    observations = [completed(f"p{i}") for i in range(9)] + [HandshakeObservation.transport_error("p9", T, "timeout")]
    fp = assemble_fingerprint(observations, [f"p{i}" for i in range(10)])
    assert not fp.complete and len(fp) == 9


def test_assemble_empty():
    fp = assemble_fingerprint([], ["a", "b"])
    assert not fp.complete and len(fp) == 0


def test_later_duplicate_replaces():
    first = obs([alert(40)], "a")
    fp = assemble_fingerprint([first, completed("a")], ["a"])
    assert fp.entries["a"].cipher == 0xC02F


def test_fingerprint_equality_needs_same_probe_ids():
    fs = FeatureString.parse("771_4865______")
    assert ServerFingerprint({"a": fs}) != ServerFingerprint({"b": fs})
    assert ServerFingerprint({"a": fs, "b": fs}) == ServerFingerprint({"b": fs, "a": fs})


def test_fingerprint_key_round_trip():
    fp = ServerFingerprint({"b": FeatureString.parse("_______<70"), "a": FeatureString.parse("771_4865_43.AwQ_____")}, True)
    assert fp.key == "a:771_4865_43.AwQ_____|b:_______<70"
    assert ServerFingerprint.parse_key(fp.key) == fp
