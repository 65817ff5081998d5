"""Fingerprint DDS participants on the wire and match them against known CVEs.

CVE database format, one record per line (``#`` starts a comment)::

    0x0101 connext_dds <= 6.1.0.* CVE-2021-38487,CVE-2021-38435

Fields are the vendor id, a product label without spaces, a version
predicate and a comma-separated CVE list. A predicate is one or more
``OP VERSION`` clauses that must all hold (``>= 6.0.0.0 < 6.1.0.0`` is a
closed-open range). Versions have up to four dotted components; trailing
components may be ``*`` and missing ones count as ``*``.
"""

from __future__ import annotations

import json
import operator
import re
import socket
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from graphguard.discovery import ParticipantAnnouncement, ProductVersion, decode_endpoint, decode_participant
from graphguard.errors import BadRecord, WireError
from graphguard.pcap import LINKTYPE_ETHERNET, _Skip, decode_frame, read_pcap
from graphguard.wire import GuidPrefix, parse_message, vendor_name

BANNER = "sniffing the DDS network..."

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}
_CLAUSE = re.compile(r"\s*(<=|>=|==|!=|<|>)\s*(\S+)")
_CVE = re.compile(r"CVE-\d{4}-\d{4,}")


def parse_version_pattern(text: str) -> tuple[int, ...]:
    """``"6.1.0.*"`` -> ``(6, 1, 0)``: the fixed components before any wildcard."""
    parts = text.split(".")
    if not 1 <= len(parts) <= 4:
        raise ValueError(f"version {text!r} must have one to four components")
    fixed = []
    wild = False
    for part in parts:
        if part == "*":
            wild = True
        elif part.isdigit() and not wild:
            fixed.append(int(part))
        else:
            raise ValueError(f"bad version component {part!r} in {text!r}")
    return tuple(fixed)


def parse_predicate(text: str) -> tuple[tuple[str, tuple[int, ...]], ...]:
    text = text.strip()
    if text in ("*", "any"):
        return ()
    clauses = []
    pos = 0
    while pos < len(text):
        m = _CLAUSE.match(text, pos)
        if m is None:
            raise ValueError(f"cannot parse version predicate {text!r}")
        clauses.append((m.group(1), parse_version_pattern(m.group(2))))
        pos = m.end()
        while pos < len(text) and text[pos] in " ,":
            pos += 1
    if not clauses:
        raise ValueError("empty version predicate")
    return tuple(clauses)


def _clause_holds(op: str, fixed: tuple[int, ...], version: tuple[int, ...]) -> bool:
    # wildcards match anything, so only the fixed prefix takes part
    return _OPS[op](tuple(version[:len(fixed)]), fixed)


def version_matches(predicate, version) -> bool:
    """Does ``version`` (a 4-tuple) satisfy ``predicate`` (text or parsed clauses)?"""
    clauses = parse_predicate(predicate) if isinstance(predicate, str) else predicate
    return all(_clause_holds(op, fixed, tuple(version)) for op, fixed in clauses)


@dataclass(frozen=True)
class CveRecord:
    vendor_id: int
    product: str
    affected: str
    cve_ids: tuple[str, ...]
    clauses: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.cve_ids:
            raise ValueError("a CVE record needs at least one CVE id")
        object.__setattr__(self, "cve_ids", tuple(self.cve_ids))
        object.__setattr__(self, "clauses", parse_predicate(self.affected))

    def matches(self, vendor_id: int, version) -> bool:
        return version is not None and vendor_id == self.vendor_id and version_matches(self.clauses, version)


def parse_cve_db(text: str) -> list[CveRecord]:
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 4:
            raise BadRecord("expected: vendor product predicate cve[,cve...]", lineno)
        try:
            vendor = int(fields[0], 16)
        except ValueError:
            raise BadRecord(f"vendor id {fields[0]!r} is not hexadecimal", lineno) from None
        if not 0 <= vendor <= 0xFFFF:
            raise BadRecord(f"vendor id {fields[0]} out of range", lineno)
        cves = tuple(c for c in fields[-1].split(",") if c)
        bad = [c for c in cves if not _CVE.fullmatch(c)]
        if bad or not cves:
            raise BadRecord(f"malformed CVE id list {fields[-1]!r}", lineno)
        try:
            records.append(CveRecord(vendor, fields[1], " ".join(fields[2:-1]), cves))
        except ValueError as exc:
            raise BadRecord(str(exc), lineno) from None
    return records


def load_cve_db(path) -> list[CveRecord]:
    return parse_cve_db(Path(path).read_text(encoding="utf-8"))


def default_cve_db() -> list[CveRecord]:
    """The sample database shipped with the package."""
    return parse_cve_db(resources.files("graphguard").joinpath("data/cve.db").read_text(encoding="utf-8"))


def matching_cves(db: Iterable[CveRecord], vendor_id: int, version) -> tuple[str, ...]:
    """CVE ids in database order, each once."""
    seen: dict = {}
    for record in db:
        if record.matches(vendor_id, version):
            for cve in record.cve_ids:
                seen.setdefault(cve, None)
    return tuple(seen)


@dataclass
class EndpointFinding:
    guid_prefix: GuidPrefix
    vendor_id: int
    product_version: ProductVersion | None
    cve_ids: tuple[str, ...]
    first_seen: float | None = None
    last_seen: float | None = None
    endpoints: set = field(default_factory=set)

    @property
    def vulnerable(self):
        return bool(self.cve_ids)

    @property
    def vendor(self):
        return vendor_name(self.vendor_id)

    def render(self, verbose: bool = False) -> str:
        p = self.guid_prefix
        ids = f"hostId={p.host_id}, appId={p.app_id}, instanceId={p.instance_id}"
        head = "Vulnerable DDS endpoint found" if self.vulnerable else "DDS participant found"
        lines = [
            f"{head} ({ids})",
            f"    - vendorId: {self.vendor}",
            f"    - version: {self.product_version or 'unknown'}",
        ]
        if self.cve_ids:
            lines.append("    - CVE IDs:")
            lines.extend(f"        * {cve}" for cve in self.cve_ids)
        if verbose:
            lines.append(f"    - guidPrefix: {p}")
            for kind, topic in sorted(self.endpoints):
                lines.append(f"    - {kind}: {topic}")
        return "\n".join(lines) + "\n"

    def record(self) -> dict:
        p = self.guid_prefix
        return {
            "type": "finding",
            "guid_prefix": str(p),
            "host_id": p.host_id,
            "app_id": p.app_id,
            "instance_id": p.instance_id,
            "vendor_id": f"0x{self.vendor_id:04x}",
            "vendor": self.vendor,
            "version": str(self.product_version) if self.product_version else None,
            "cve_ids": list(self.cve_ids),
            "first_seen": self.first_seen,
            "last_seen": self.last_seen,
        }


def _plural(n, noun):
    return f"{n} {noun}" if n == 1 else f"{n} {noun}s"


@dataclass
class ScanSummary:
    packets: int = 0
    participants: int = 0
    vulnerable: int = 0
    unparsed: int = 0

    def render(self) -> str:
        return (f"{_plural(self.participants, 'participant')}, "
                f"{_plural(self.vulnerable, 'vulnerable participant')}, "
                f"{_plural(self.unparsed, 'unparsed packet')}\n")

    def record(self) -> dict:
        return {"type": "summary", "packets": self.packets, "participants": self.participants,
                "vulnerable_participants": self.vulnerable, "unparsed_packets": self.unparsed}


class Scanner:
    """Incremental analysis state: feed datagrams, collect findings as they complete.

    A participant is reported once per (vendor, version) fingerprint; if it
    re-announces with a different version, that is a new finding.
    """

    def __init__(self, db: Iterable[CveRecord], verbose: bool = False):
        self.db = list(db)
        self.verbose = verbose
        self.summary = ScanSummary()
        self._findings: dict = {}
        self._prefixes: set = set()
        self._endpoints: dict = {}

    @property
    def findings(self) -> list[EndpointFinding]:
        found = list(self._findings.values())
        return found if self.verbose else [f for f in found if f.vulnerable]

    def feed(self, timestamp, payload) -> list[EndpointFinding]:
        """Analyse one datagram; return findings completed by it."""
        self.summary.packets += 1
        try:
            msg = parse_message(payload)
        except WireError:
            self.summary.unparsed += 1
            return []
        for ep in decode_endpoint(msg):
            entry = (str(ep.kind), ep.topic_name)
            self._endpoints.setdefault(ep.guid_prefix, set()).add(entry)
            for (prefix, _, _), finding in self._findings.items():
                if prefix == ep.guid_prefix:
                    finding.endpoints.add(entry)
        part = decode_participant(msg)
        return [] if part is None else self._participant(part, timestamp)

    def _participant(self, part: ParticipantAnnouncement, timestamp) -> list[EndpointFinding]:
        key = (part.guid_prefix, part.vendor_id, part.product_version)
        existing = self._findings.get(key)
        if existing is not None:
            existing.last_seen = timestamp
            return []
        if part.guid_prefix not in self._prefixes:
            self._prefixes.add(part.guid_prefix)
            self.summary.participants += 1
        cves = matching_cves(self.db, part.vendor_id, part.product_version)
        finding = EndpointFinding(part.guid_prefix, part.vendor_id, part.product_version, cves,
                                  timestamp, timestamp, set(self._endpoints.get(part.guid_prefix, ())))
        self._findings[key] = finding
        if finding.vulnerable:
            if not any(f.vulnerable for k, f in self._findings.items() if k[0] == part.guid_prefix and k != key):
                self.summary.vulnerable += 1
        return [finding] if finding.vulnerable or self.verbose else []

    def run(self, packets) -> Iterator[EndpointFinding]:
        for item in packets:
            yield from self.feed(item[0], item[-1])


@dataclass
class ScanReport:
    findings: list[EndpointFinding]
    summary: ScanSummary
    verbose: bool = False

    def render(self) -> str:
        parts = [BANNER + "\n"]
        parts.extend(f.render(self.verbose) for f in self.findings)
        parts.append(self.summary.render())
        return "".join(parts)

    def records(self) -> list[dict]:
        return [f.record() for f in self.findings] + [self.summary.record()]

    def to_json_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def scan(packets, db: Iterable[CveRecord], verbose: bool = False) -> ScanReport:
    """Scan ``(timestamp, payload)`` datagrams (or ``UdpDatagram`` records)."""
    scanner = Scanner(db, verbose)
    findings = list(scanner.run(packets))
    return ScanReport(findings, scanner.summary, verbose)


def live_capture_available() -> bool:
    return hasattr(socket, "AF_PACKET")


def capture(iface: str, limit: int | None = None, timeout: float | None = None):
    """Yield ``(timestamp, udp_payload)`` from a raw socket on ``iface``.

    Needs Linux and CAP_NET_RAW. Non-UDP and damaged frames are skipped.
    """
    if not live_capture_available():
        raise OSError("live capture needs AF_PACKET (Linux)")
    sock = socket.socket(socket.AF_PACKET, socket.SOCK_RAW, socket.ntohs(0x0003))
    try:
        sock.bind((iface, 0))
        sock.settimeout(timeout)
        count = 0
        while limit is None or count < limit:
            try:
                frame = sock.recv(65535)
            except socket.timeout:
                return
            try:
                _, _, payload = decode_frame(LINKTYPE_ETHERNET, frame)
            except (ValueError, _Skip):
                continue
            count += 1
            yield time.time(), payload
    finally:
        sock.close()


def scan_pcap(path, db: Iterable[CveRecord], verbose: bool = False) -> ScanReport:
    """Scan a capture file; damaged records count as unparsed packets."""
    reader = read_pcap(path)
    report = scan(reader, db, verbose)
    report.summary.unparsed += len(reader.log)
    return report
