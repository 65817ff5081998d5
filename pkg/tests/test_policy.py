import fnmatch
import itertools
import random
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphguard.discovery import EndpointAnnouncement, EndpointKind, ParticipantAnnouncement
from graphguard.errors import SchemaViolation, UnassignedNode, VersionMismatch
from graphguard.graph import DeniedEvent, GraphSnapshot, ResourceKind, accumulate, join_name
from graphguard.policy import (
    CommonProfile,
    Decision,
    EnclavePolicy,
    PermissionRule,
    Profile,
    Qualifier,
    SecurityPolicy,
    audit,
    factor_profiles,
    flatten,
    generate_policy,
    load_policy,
    match,
    merge,
    refine,
    save_policy,
    wildcard_match,
)
from graphguard.policy.audit import observed_accesses
from graphguard.policy.model import RESOURCE_ACCESS
from graphguard.wire import PROTOCOL_2_2, GuidPrefix
from generators import query_universe, random_policy, random_snapshot

K = ResourceKind
ALLOW, DENY, NOT_COVERED = Decision.ALLOW, Decision.DENY, Decision.NOT_COVERED


def _policy(*profiles, path="/", commons=()):
    return SecurityPolicy("0.2.0", (EnclavePolicy(path, profiles),), commons)


def _snapshot(*triples):
    """``(node_fqn, kind, name)`` triples as a snapshot of denial-derived resources."""
    return GraphSnapshot(denied_events=frozenset(DeniedEvent(n, k, name) for n, k, name in triples))


# ------------------------------------------------------------------ model

def test_rule_validation():
    with pytest.raises(ValueError):
        PermissionRule("service", "x", {"publish"})
    with pytest.raises(ValueError):
        PermissionRule("topic", "x", set())
    with pytest.raises(ValueError):
        PermissionRule("topic", "a b", {"publish"})
    with pytest.raises(ValueError):
        PermissionRule("param", "x", {"publish"})
    with pytest.raises(ValueError):
        EnclavePolicy("/e", ())
    with pytest.raises(ValueError):
        EnclavePolicy("e", (Profile("n"),))


def test_match_examples():
    p = _policy(Profile("talker", rules=(
        PermissionRule("topic", "chatter", {"publish"}),
        PermissionRule("topic", "sensor/*", {"subscribe"}),
    )))
    assert match(p, "/", "talker", "topic", "chatter", "publish") == ALLOW
    assert match(p, "/", "talker", "topic", "/chatter", "publish") == ALLOW
    assert match(p, "/", "talker", "topic", "sensor/lidar", "subscribe") == ALLOW
    assert match(p, "/", "talker", "topic", "cmd_vel", "subscribe") == NOT_COVERED
    assert match(p, "/", "talker", "topic", "chatter", "subscribe") == NOT_COVERED
    assert match(p, "/", "listener", "topic", "chatter", "publish") == NOT_COVERED
    assert match(p, "/other", "talker", "topic", "chatter", "publish") == NOT_COVERED


def test_deny_beats_allow():
    p = _policy(Profile("n", rules=(
        PermissionRule("topic", "*", {"publish"}),
        PermissionRule("topic", "secret", {"publish"}, Qualifier.DENY),
    )))
    assert p.enclaves[0].profiles[0].rules[0].qualifier == Qualifier.DENY
    assert match(p, "/", "n", "topic", "secret", "publish") == DENY
    assert match(p, "/", "n", "topic", "public", "publish") == ALLOW


def test_namespaced_profile_resolves_relative_names():
    p = _policy(Profile("driver", "/robot1", (PermissionRule("topic", "cmd_vel", {"subscribe"}),
                                              PermissionRule("topic", "/clock", {"subscribe"}))))
    assert match(p, "/", "/robot1/driver", "topic", "/robot1/cmd_vel", "subscribe") == ALLOW
    assert match(p, "/", "/robot1/driver", "topic", "cmd_vel", "subscribe") == ALLOW
    assert match(p, "/", "/robot1/driver", "topic", "/cmd_vel", "subscribe") == NOT_COVERED
    assert match(p, "/", "/robot1/driver", "topic", "/clock", "subscribe") == ALLOW


_ALPHABET = "ab/_"
_corpus = ["".join(t) for n in range(0, 5) for t in itertools.product(_ALPHABET, repeat=n)]


@pytest.mark.parametrize("pattern", ["*", "a*", "*b", "a/*", "?", "a?b", "*/*", "a*b*", "?/?", "a/b", "**", "_?*"])
def test_wildcards_equal_fnmatch(pattern):
    for name in _corpus:
        assert wildcard_match(pattern, name) == fnmatch.fnmatchcase(name, pattern), name


@settings(max_examples=300)
@given(st.text("ab/*?.", max_size=6), st.text("ab/.", max_size=8))
def test_wildcards_equal_fnmatch_generated(pattern, name):
    assert wildcard_match(pattern, name) == fnmatch.fnmatchcase(name, pattern)


def test_wildcard_crosses_namespaces():
    assert wildcard_match("/robot*/cmd_vel", "/robot1/arm/cmd_vel")


# ------------------------------------------------------------------ generate / audit

def test_generate_empty():
    assert generate_policy(GraphSnapshot()).enclaves == ()


def test_generate_talker():
    p = generate_policy(_snapshot(("/talker", K.TOPIC_PUBLISH, "/chatter")))
    ((path, prof),) = list(p.profiles())
    assert path == "/" and prof.node == "talker"
    assert prof.rules == (PermissionRule("topic", "chatter", {"publish"}),)


def test_generate_with_assignment():
    s = _snapshot(("/talker", K.TOPIC_PUBLISH, "/chatter"), ("/listener", K.TOPIC_SUBSCRIBE, "/chatter"))
    p = generate_policy(s, {"/talker": "/talker_listener", "/listener": "/talker_listener"})
    assert [e.path for e in p.enclaves] == ["/talker_listener"]
    assert [pr.node for pr in p.enclaves[0].profiles] == ["listener", "talker"]
    with pytest.raises(UnassignedNode):
        generate_policy(s, {"/talker": "/t"})


def _granted(policy):
    out = set()
    for _, prof in policy.profiles():
        for rule in prof.rules:
            assert not rule.is_wildcard and rule.qualifier == Qualifier.ALLOW
            for action in rule.actions:
                out.add((prof.namespace, prof.node, rule.kind, action, join_name(prof.namespace, rule.pattern)))
    return out


def test_least_privilege_duality():
    rng = random.Random(7)
    for _ in range(30):
        s = random_snapshot(rng)
        p = generate_policy(s)
        assert _granted(p) == observed_accesses(s)
        report = audit(p, s)
        assert report.clean and not report.wildcards


def test_audit_extra_publisher():
    base = _snapshot(("/talker", K.TOPIC_PUBLISH, "/chatter"), ("/listener", K.TOPIC_SUBSCRIBE, "/chatter"))
    p = generate_policy(base)
    extra = accumulate(base, DeniedEvent("/intruder", K.TOPIC_PUBLISH, "/chatter"))
    report = audit(p, extra)
    assert len(report.uncovered) == 1 and not report.overprivileged
    u = report.uncovered[0]
    assert (u.node, u.kind, u.action, u.name, u.decision) == ("/intruder", "topic", "publish", "/chatter", NOT_COVERED)
    assert report.render() == "NOT_COVERED /intruder topic publish /chatter\n"


def test_audit_unused_wildcard():
    s = _snapshot(("/n", K.TOPIC_PUBLISH, "/chatter"))
    p = _policy(Profile("n", rules=(PermissionRule("topic", "chatter", {"publish"}),
                                    PermissionRule("topic", "sensor/*", {"subscribe"}))))
    report = audit(p, s)
    assert not report.uncovered
    assert [(w.pattern, w.matches) for w in report.wildcards] == [("sensor/*", 0)]
    assert [(g.pattern, g.action) for g in report.overprivileged] == [("sensor/*", "subscribe")]
    records = report.records()
    assert {r["finding"] for r in records} == {"UNUSED_GRANT", "WILDCARD"}


def test_audit_reports_explicit_deny():
    s = _snapshot(("/n", K.TOPIC_PUBLISH, "/chatter"))
    p = _policy(Profile("n", rules=(PermissionRule("topic", "chatter", {"publish"}, Qualifier.DENY),)))
    assert audit(p, s).uncovered[0].decision == DENY


# ------------------------------------------------------------------ merge

def test_merge_laws():
    rng = random.Random(11)
    empty = SecurityPolicy("0.2.0")
    for _ in range(20):
        a, b, c = (random_policy(rng) for _ in range(3))
        assert merge(a, empty) == a
        assert merge(empty, a) == a
        assert merge(a, a) == a
        assert merge(merge(a, b), c) == merge(a, merge(b, c))


def test_merge_disjoint_counts():
    a = _policy(Profile("x", rules=(PermissionRule("topic", "t", {"publish"}),)))
    b = _policy(Profile("y", rules=(PermissionRule("topic", "t", {"subscribe"}),)))
    assert len(merge(a, b).enclaves[0].profiles) == 2
    with pytest.raises(VersionMismatch):
        merge(a, SecurityPolicy("9.9"))


def test_merge_keeps_conflicting_commons_apart():
    r1, r2 = PermissionRule("topic", "a", {"publish"}), PermissionRule("topic", "b", {"publish"})
    a = _policy(Profile("x", includes=("c",)), commons=(CommonProfile("c", (r1,)),))
    b = _policy(Profile("y", includes=("c",)), commons=(CommonProfile("c", (r2,)),))
    m = merge(a, b)
    assert match(m, "/", "x", "topic", "b", "publish") == NOT_COVERED
    assert match(m, "/", "y", "topic", "b", "publish") == ALLOW
    assert match(m, "/", "y", "topic", "a", "publish") == NOT_COVERED


# ------------------------------------------------------------------ refine

def test_refine():
    p = generate_policy(_snapshot(("/listener", K.TOPIC_PUBLISH, "/rosout")))
    assert refine(p, []) == p
    deny = DeniedEvent("/listener", K.TOPIC_SUBSCRIBE, "/chatter")
    assert match(p, "/", "listener", "topic", "/chatter", "subscribe") == NOT_COVERED
    r = refine(p, [deny, deny])
    assert match(r, "/", "listener", "topic", "/chatter", "subscribe") == ALLOW
    assert len(r.enclaves[0].profiles[0].rules) == 2
    assert refine(r, [deny]) == r


def test_refine_new_node_and_explicit_deny():
    p = _policy(Profile("n", rules=(PermissionRule("topic", "secret", {"publish"}, Qualifier.DENY),)), path="/e")
    r = refine(p, [DeniedEvent("/n", K.TOPIC_PUBLISH, "/secret"), DeniedEvent("/ns/new", K.SERVICE_REQUEST, "/s")],
               enclave="/fresh")
    assert match(r, "/e", "n", "topic", "/secret", "publish") == DENY
    assert match(r, "/fresh", "/ns/new", "service", "/s", "request") == ALLOW


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_refine_grants_every_denial(seed):
    rng = random.Random(seed)
    p = random_policy(rng)
    events = [DeniedEvent(join_name(rng.choice(("/", "/robot1")), f"n{rng.randrange(6)}"),
                          rng.choice(list(K)), "/" + rng.choice(("a", "b/c", "clock"))) for _ in range(5)]
    r = refine(p, events)
    for e in events:
        kind, action = RESOURCE_ACCESS[e.kind]
        decisions = [match(r, path, e.node, kind, e.name, action) for path, _ in r.profiles()]
        before = [match(p, path, e.node, kind, e.name, action) for path, _ in p.profiles()]
        assert ALLOW in decisions or DENY in before


# ------------------------------------------------------------------ factor

CLOCK = PermissionRule("topic", "clock", {"subscribe"})
EVENTS = PermissionRule("topic", "parameter_events", {"subscribe"})


def test_factor_nothing_shared():
    p = _policy(Profile("a", rules=(CLOCK,)), Profile("b", rules=(EVENTS,)))
    assert factor_profiles(p) == p


def test_factor_two_profiles_two_rules():
    own = PermissionRule("topic", "chatter", {"publish"})
    p = _policy(Profile("a", rules=(CLOCK, EVENTS, own)), Profile("b", rules=(CLOCK, EVENTS)))
    f = factor_profiles(p)
    assert len(f.commons) == 1
    assert set(f.commons[0].rules) == {CLOCK, EVENTS}
    assert [pr.includes for pr in f.enclaves[0].profiles] == [(f.commons[0].name,)] * 2
    assert f.enclaves[0].profiles[0].rules == (own,)
    assert flatten(f) == p


def test_factor_three_profiles_one_rule():
    p = _policy(*(Profile(n, rules=(CLOCK, PermissionRule("topic", n, {"publish"}))) for n in "abc"))
    f = factor_profiles(p)
    assert [c.rules for c in f.commons] == [(CLOCK,)]
    assert all(pr.includes == ("common_1",) for pr in f.enclaves[0].profiles)


def test_factor_equivalence_small():
    rng = random.Random(5)
    for _ in range(10):
        p = random_policy(rng)
        f = factor_profiles(p)
        for q in query_universe(p, rng):
            assert match(p, *q) == match(f, *q), q
        assert factor_profiles(f) == f


# ------------------------------------------------------------------ XML

MINIMAL = b"""<policy version="0.2.0"><enclaves><enclave path="/"><profiles>
<profile node="talker" ns="/"><topics publish="ALLOW"><topic>chatter</topic></topics></profile>
</profiles></enclave></enclaves></policy>"""


def test_load_minimal():
    p = load_policy(MINIMAL)
    assert len(p.enclaves) == 1
    assert match(p, "/", "talker", "topic", "chatter", "publish") == ALLOW


def _c14n(data):
    return ET.canonicalize(xml_data=data.decode() if isinstance(data, bytes) else data, strip_text=True)


def test_save_is_canonical(fixtures):
    messy = """<policy    version="0.2.0">
      <enclaves><enclave path="/talker_listener"><profiles>
         <profile node="listener" ns="/"><topics subscribe="ALLOW">  <topic> chatter </topic></topics></profile>
         <profile node="talker" ns="/"><topics publish="ALLOW"><topic>chatter</topic>
         </topics></profile></profiles></enclave></enclaves></policy>"""
    golden = (fixtures / "talker_listener_policy.xml").read_bytes()
    assert save_policy(load_policy(messy)) == golden
    assert _c14n(save_policy(load_policy(messy))) == _c14n(golden)


def test_xml_round_trip_random():
    rng = random.Random(3)
    for _ in range(40):
        p = random_policy(rng)
        for candidate in (p, factor_profiles(p)):
            assert load_policy(save_policy(candidate)) == candidate


def test_mixed_qualifier_group():
    doc = b"""<policy version="1"><enclaves><enclave path="/"><profiles><profile node="n">
<topics publish="DENY" subscribe="ALLOW"><topic>x</topic></topics></profile></profiles></enclave></enclaves></policy>"""
    p = load_policy(doc)
    assert match(p, "/", "n", "topic", "x", "publish") == DENY
    assert match(p, "/", "n", "topic", "x", "subscribe") == ALLOW


@pytest.mark.parametrize("body, line, element", [
    ('<profile node="n">\n<services publish="ALLOW"><service>s</service></services></profile>', 4, "services"),
    ('<profile node="n">\n<topics publish="MAYBE"><topic>s</topic></topics></profile>', 4, "topics"),
    ('<profile node="n">\n<topics publish="ALLOW"></topics></profile>', 4, "topics"),
    ('<profile node="n">\n<topics publish="ALLOW"><service>s</service></topics></profile>', 4, "service"),
    ('<profile>\n</profile>', 3, "profile"),
    ('<profile node="n">\n<include name="missing"/></profile>', 3, "profile"),
    ('<profile node="n"/>\n<profile node="n"/>', 4, "profile"),
])
def test_schema_violations(body, line, element):
    doc = f'<policy version="1">\n<enclaves><enclave path="/"><profiles>\n{body}</profiles></enclave></enclaves></policy>'
    with pytest.raises(SchemaViolation) as info:
        load_policy(doc)
    assert info.value.line == line and info.value.element == element


@pytest.mark.parametrize("doc", [b"", b"<policy", b"<other version='1'/>", b"<policy/>",
                                 b'<policy version="1"><bogus/></policy>'])
def test_malformed_documents(doc):
    with pytest.raises(SchemaViolation):
        load_policy(doc)
