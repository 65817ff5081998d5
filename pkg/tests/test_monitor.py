import itertools
import json
import random

import pytest

from graphguard.discovery import ProductVersion
from graphguard.errors import BadRecord
from graphguard.monitor import (
    CveRecord,
    Scanner,
    default_cve_db,
    matching_cves,
    parse_cve_db,
    parse_predicate,
    parse_version_pattern,
    scan,
    scan_pcap,
    version_matches,
)
from graphguard.simnet import SimParticipant, SimSpec, emit, random_spec, read_simspec, write_pcap
from graphguard.wire import GuidPrefix


def _norm(text):
    return [" ".join(line.split()) for line in text.strip().splitlines()]


def _key(v):
    return ((v[0] * 100 + v[1]) * 100 + v[2]) * 100 + v[3]


GRID = list(itertools.product(range(0, 8), range(0, 3), range(0, 3), (0, 1, 25)))


def test_version_patterns():
    assert parse_version_pattern("6.1.0.*") == (6, 1, 0)
    assert parse_version_pattern("6") == (6,)
    assert parse_version_pattern("*") == ()
    for bad in ("6.*.1", "a.b", "1.2.3.4.5", ""):
        with pytest.raises(ValueError):
            parse_version_pattern(bad)


@pytest.mark.parametrize("predicate, oracle", [
    # a trailing wildcard bounds the range at the next value of the last fixed component
    ("<= 6.1.0.*", lambda v: _key(v) < _key((6, 1, 1, 0))),
    ("< 6.1.0.0", lambda v: _key(v) < _key((6, 1, 0, 0))),
    (">= 6.0.0.0 < 6.1.0.0", lambda v: _key((6, 0, 0, 0)) <= _key(v) < _key((6, 1, 0, 0))),
    ("== 5.*", lambda v: v[0] == 5),
    ("!= 6.0.1.25", lambda v: v != (6, 0, 1, 25)),
    ("> 6.0.*", lambda v: _key(v) >= _key((6, 1, 0, 0))),
    ("*", lambda v: True),
])
def test_version_predicates_against_oracle(predicate, oracle):
    clauses = parse_predicate(predicate)
    for v in GRID:
        assert version_matches(clauses, v) == oracle(v), v


def test_bad_predicates():
    for bad in ("", "about 6", "<= 6.x", "6.1"):
        with pytest.raises(ValueError):
            parse_predicate(bad)


def test_default_db():
    (record,) = default_cve_db()
    assert record.vendor_id == 0x0101
    assert record.cve_ids == ("CVE-2021-38487", "CVE-2021-38435")
    assert record.matches(0x0101, (6, 0, 1, 25))
    assert record.matches(0x0101, (6, 1, 0, 99))
    assert not record.matches(0x0101, (6, 1, 1, 0))
    assert not record.matches(0x010F, (6, 0, 1, 25))
    assert not record.matches(0x0101, None)


@pytest.mark.parametrize("text, line", [
    ("0x0101 p <= 6 CVE-2021-1\n", 1),
    ("# c\n0xZZ p <= 6 CVE-2021-38487\n", 2),
    ("0x10000 p <= 6 CVE-2021-38487\n", 1),
    ("0x0101 p CVE-2021-38487\n", 1),
    ("\n\n0x0101 p ~ 6 CVE-2021-38487\n", 3),
])
def test_bad_records(text, line):
    with pytest.raises(BadRecord) as info:
        parse_cve_db(text)
    assert info.value.line == line


def test_matching_cves_order_and_dedup():
    db = parse_cve_db("0x0101 a <= 6.* CVE-2021-0002,CVE-2021-0001\n0x0101 b >= 6.0.0.0 CVE-2021-0001,CVE-2021-0003\n")
    assert matching_cves(db, 0x0101, (6, 0, 0, 0)) == ("CVE-2021-0002", "CVE-2021-0001", "CVE-2021-0003")
    assert matching_cves(db, 0x0101, (7, 0, 0, 0)) == ("CVE-2021-0001", "CVE-2021-0003")
    assert matching_cves(db, 0x0110, (6, 0, 0, 0)) == ()


def test_listing_reproduction(fixtures):
    report = scan(emit(read_simspec(fixtures / "rti_participant.sim")), default_cve_db())
    assert _norm(report.render()) == _norm((fixtures / "rti_listing.txt").read_text())


def test_listing_from_pcap(tmp_path, fixtures):
    path = tmp_path / "rti.pcap"
    write_pcap(read_simspec(fixtures / "rti_participant.sim"), path)
    report = scan_pcap(path, default_cve_db())
    assert _norm(report.render()) == _norm((fixtures / "rti_listing.txt").read_text())
    records = [json.loads(line) for line in report.to_json_lines().splitlines()]
    assert records[0]["cve_ids"] == ["CVE-2021-38487", "CVE-2021-38435"]
    assert records[-1] == {"type": "summary", "packets": 1, "participants": 1,
                           "vulnerable_participants": 1, "unparsed_packets": 0}


RTI = SimParticipant(GuidPrefix.from_hex("01030242ac1100030099473a"), 0x0101, (6, 0, 1, 25))


def test_repeated_announcements_reported_once():
    packets = emit(SimSpec(1, (RTI,))) * 5
    report = scan(packets, default_cve_db())
    assert len(report.findings) == 1
    assert report.summary.packets == 5 and report.summary.participants == 1


def test_no_false_attribution():
    fast = SimParticipant(GuidPrefix(bytes(12)), 0x010F, (6, 0, 1, 25))
    patched = SimParticipant(GuidPrefix(bytes(range(12))), 0x0101, (6, 1, 1, 0))
    unknown = SimParticipant(GuidPrefix(bytes(range(1, 13))), 0x0101, None)
    report = scan(emit(SimSpec(2, (fast, patched, unknown))), default_cve_db())
    assert report.findings == [] and report.summary.participants == 3
    assert report.summary.render() == "3 participants, 0 vulnerable participants, 0 unparsed packets\n"


def test_verbose_lists_everyone(fixtures):
    spec = read_simspec(fixtures / "talker_listener.sim")
    report = scan(emit(spec), default_cve_db(), verbose=True)
    assert len(report.findings) == 2
    text = report.render()
    assert "DDS participant found" in text
    assert "    - writer: rt/chatter" in text and "    - reader: rt/chatter" in text


def test_noise_does_not_change_findings():
    db = parse_cve_db("0x0101 x <= 9.* CVE-2020-0001\n0x010F y < 5.0.0.0 CVE-2020-0002\n")
    for seed in range(30):
        clean = random_spec(seed)
        noisy = SimSpec(clean.seed, clean.participants, clean.endpoints, 0.4)
        a, b = scan(emit(clean), db), scan(emit(noisy), db)
        assert sorted(f.record()["guid_prefix"] for f in a.findings) == \
            sorted(f.record()["guid_prefix"] for f in b.findings)
        assert b.summary.unparsed == b.summary.packets - a.summary.packets
        assert b.summary.vulnerable == a.summary.vulnerable


def test_findings_grow_monotonically():
    db = parse_cve_db("0x0101 x * CVE-2020-0001\n0x0110 y * CVE-2020-0003\n")
    rng = random.Random(9)
    for seed in range(20):
        packets = emit(random_spec(seed, noise_ratio=0.2))
        scanner = Scanner(db)
        seen = []
        for ts, payload in packets:
            before = [f.guid_prefix for f in scanner.findings]
            scanner.feed(ts, payload)
            after = [f.guid_prefix for f in scanner.findings]
            assert after[:len(before)] == before
            seen = after
        assert scanner.summary.vulnerable == len(set(seen))


def test_scan_is_deterministic():
    packets = emit(random_spec(4, noise_ratio=0.3))
    db = default_cve_db()
    assert scan(packets, db).render() == scan(list(packets), db).render()
