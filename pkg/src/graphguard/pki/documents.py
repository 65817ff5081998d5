"""Governance and permissions documents in the DDS Security XML grammar."""

from __future__ import annotations

import datetime as dt
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from graphguard.errors import EmptyEnclave, SchemaViolation
from graphguard.graph import ResourceKind, action_topics, join_name, mangle_name
from graphguard.policy.model import ACCESS_RESOURCE, Qualifier, SecurityPolicy

_XSI = "http://www.w3.org/2001/XMLSchema-instance"
_GOVERNANCE_XSD = "http://www.omg.org/spec/DDS-SECURITY/20170901/omg_shared_ca_governance.xsd"
_PERMISSIONS_XSD = "http://www.omg.org/spec/DDS-SECURITY/20170901/omg_shared_ca_permissions.xsd"
TIME_FORMAT = "%Y-%m-%dT%H:%M:%S"

PROTECTION_KINDS = ("NONE", "SIGN", "ENCRYPT", "SIGN_WITH_ORIGIN_AUTHENTICATION",
                    "ENCRYPT_WITH_ORIGIN_AUTHENTICATION")
PUBLISH, SUBSCRIBE = "publish", "subscribe"


def _root(xsd):
    ET.register_namespace("xsi", _XSI)
    return ET.Element("dds", {f"{{{_XSI}}}noNamespaceSchemaLocation": xsd})


def _serialize(root) -> bytes:
    ET.indent(root, space="  ")
    return b'<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="utf-8") + b"\n"


def _sub(parent, tag, text=None):
    elem = ET.SubElement(parent, tag)
    if text is not None:
        elem.text = text
    return elem


def _domains(parent, ids):
    domains = _sub(parent, "domains")
    for d in sorted(set(ids)):
        _sub(domains, "id", str(d))


def _parse_xml(data: bytes, root_child: str):
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise SchemaViolation(f"malformed XML: {exc}", exc.position[0]) from None
    child = root.find(root_child)
    if root.tag != "dds" or child is None:
        raise SchemaViolation(f"expected <dds><{root_child}>", element=root.tag)
    return child


def _text(elem, path):
    found = elem.find(path)
    if found is None or found.text is None:
        raise SchemaViolation(f"missing <{path}>", element=elem.tag)
    return found.text.strip()


def _bool(text):
    return text.lower() in ("true", "1")


@dataclass(frozen=True)
class GovernanceDoc:
    """Domain-wide settings; defaults encrypt discovery, liveliness, metadata and data."""

    domains: tuple[int, ...] = (0,)
    allow_unauthenticated_participants: bool = False
    enable_join_access_control: bool = True
    discovery_protection_kind: str = "ENCRYPT"
    liveliness_protection_kind: str = "ENCRYPT"
    rtps_protection_kind: str = "SIGN"
    metadata_protection_kind: str = "ENCRYPT"
    data_protection_kind: str = "ENCRYPT"
    topic_expression: str = "*"
    enable_read_access_control: bool = True
    enable_write_access_control: bool = True

    def __post_init__(self):
        if not self.domains:
            raise ValueError("governance needs at least one domain id")
        for name in ("discovery", "liveliness", "rtps", "metadata", "data"):
            kind = getattr(self, f"{name}_protection_kind")
            if kind not in PROTECTION_KINDS:
                raise ValueError(f"unknown protection kind {kind!r}")

    def protection_kinds(self) -> dict[str, str]:
        return {p: getattr(self, f"{p}_protection_kind")
                for p in ("discovery", "liveliness", "rtps", "metadata", "data")}

    def to_xml(self) -> bytes:
        root = _root(_GOVERNANCE_XSD)
        rule = _sub(_sub(root, "domain_access_rules"), "domain_rule")
        _domains(rule, self.domains)
        flag = lambda v: "true" if v else "false"  # noqa: E731
        _sub(rule, "allow_unauthenticated_participants", flag(self.allow_unauthenticated_participants))
        _sub(rule, "enable_join_access_control", flag(self.enable_join_access_control))
        _sub(rule, "discovery_protection_kind", self.discovery_protection_kind)
        _sub(rule, "liveliness_protection_kind", self.liveliness_protection_kind)
        _sub(rule, "rtps_protection_kind", self.rtps_protection_kind)
        topic = _sub(_sub(rule, "topic_access_rules"), "topic_rule")
        _sub(topic, "topic_expression", self.topic_expression)
        _sub(topic, "enable_discovery_protection", flag(self.discovery_protection_kind != "NONE"))
        _sub(topic, "enable_liveliness_protection", flag(self.liveliness_protection_kind != "NONE"))
        _sub(topic, "enable_read_access_control", flag(self.enable_read_access_control))
        _sub(topic, "enable_write_access_control", flag(self.enable_write_access_control))
        _sub(topic, "metadata_protection_kind", self.metadata_protection_kind)
        _sub(topic, "data_protection_kind", self.data_protection_kind)
        return _serialize(root)


def generate_governance(domains=(0,), **settings) -> bytes:
    return GovernanceDoc(tuple(domains), **settings).to_xml()


def parse_governance(data: bytes) -> GovernanceDoc:
    rules = _parse_xml(data, "domain_access_rules")
    rule = rules.find("domain_rule")
    if rule is None:
        raise SchemaViolation("no <domain_rule>", element="domain_access_rules")
    topic = rule.find("topic_access_rules/topic_rule")
    if topic is None:
        raise SchemaViolation("no <topic_rule>", element="domain_rule")
    try:
        domains = tuple(int(e.text) for e in rule.iterfind("domains/id"))
        return GovernanceDoc(
            domains=domains,
            allow_unauthenticated_participants=_bool(_text(rule, "allow_unauthenticated_participants")),
            enable_join_access_control=_bool(_text(rule, "enable_join_access_control")),
            discovery_protection_kind=_text(rule, "discovery_protection_kind"),
            liveliness_protection_kind=_text(rule, "liveliness_protection_kind"),
            rtps_protection_kind=_text(rule, "rtps_protection_kind"),
            metadata_protection_kind=_text(topic, "metadata_protection_kind"),
            data_protection_kind=_text(topic, "data_protection_kind"),
            topic_expression=_text(topic, "topic_expression"),
            enable_read_access_control=_bool(_text(topic, "enable_read_access_control")),
            enable_write_access_control=_bool(_text(topic, "enable_write_access_control")),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(str(exc), element="domain_rule") from None


def dds_topics(kind: str, name: str, action: str) -> list[tuple[str, str]]:
    """``(dds_topic, publish|subscribe)`` pairs one granted access needs.

    ``name`` must be absolute. A service server (reply) subscribes to the
    request topic and publishes the reply topic; a client does the opposite.
    """
    resource = ACCESS_RESOURCE[kind, action]
    if resource in (ResourceKind.ACTION_CALL, ResourceKind.ACTION_EXECUTE):
        return action_topics(name, resource)
    if resource == ResourceKind.TOPIC_PUBLISH:
        return [(mangle_name(resource, name), PUBLISH)]
    if resource == ResourceKind.TOPIC_SUBSCRIBE:
        return [(mangle_name(resource, name), SUBSCRIBE)]
    request = mangle_name(ResourceKind.SERVICE_REQUEST, name)
    reply = mangle_name(ResourceKind.SERVICE_REPLY, name)
    if resource == ResourceKind.SERVICE_REPLY:
        return [(request, SUBSCRIBE), (reply, PUBLISH)]
    return [(request, PUBLISH), (reply, SUBSCRIBE)]


@dataclass(frozen=True)
class PermissionsDoc:
    grant_name: str
    subject_name: str
    not_before: dt.datetime
    not_after: dt.datetime
    domains: tuple[int, ...] = (0,)
    allow: dict = field(default_factory=dict)  # publish|subscribe -> sorted topic names
    deny: dict = field(default_factory=dict)
    default: str = "DENY"

    def __post_init__(self):
        if self.not_after <= self.not_before:
            raise ValueError("permissions validity must end after it starts")
        for attr in ("allow", "deny"):
            sides = getattr(self, attr)
            object.__setattr__(self, attr, {s: tuple(sorted(set(sides.get(s, ())))) for s in (PUBLISH, SUBSCRIBE)})

    def topics(self, qualifier=Qualifier.ALLOW, side=PUBLISH) -> tuple[str, ...]:
        rules = self.allow if qualifier == Qualifier.ALLOW else self.deny
        return tuple(rules.get(side, ()))

    def to_xml(self) -> bytes:
        root = _root(_PERMISSIONS_XSD)
        grant = _sub(_sub(root, "permissions"), "grant")
        grant.set("name", self.grant_name)
        _sub(grant, "subject_name", self.subject_name)
        validity = _sub(grant, "validity")
        _sub(validity, "not_before", self.not_before.strftime(TIME_FORMAT))
        _sub(validity, "not_after", self.not_after.strftime(TIME_FORMAT))
        # rules are evaluated in order, so denials go first
        for tag, sides in (("deny_rule", self.deny), ("allow_rule", self.allow)):
            if not any(sides.values()):
                continue
            rule = _sub(grant, tag)
            _domains(rule, self.domains)
            for side in (PUBLISH, SUBSCRIBE):
                if sides.get(side):
                    topics = _sub(_sub(rule, side), "topics")
                    for name in sides[side]:
                        _sub(topics, "topic", name)
        _sub(grant, "default", self.default)
        return _serialize(root)


def _utc(value: dt.datetime) -> dt.datetime:
    if value.tzinfo is None:
        return value.replace(tzinfo=dt.timezone.utc)
    return value.astimezone(dt.timezone.utc)


def build_permissions(enclave, validity, policy: SecurityPolicy | None = None, domains=(0,),
                      subject: str | None = None) -> PermissionsDoc:
    """Map an enclave's profiles onto DDS topic grants.

    ``policy`` supplies the common profiles that the enclave's profiles
    include. ``subject`` defaults to ``CN=<enclave path>``.
    """
    if not enclave.profiles:
        raise EmptyEnclave(f"enclave {enclave.path} has no profiles")
    start, end = (_utc(v).replace(microsecond=0) for v in validity)
    sides = {Qualifier.ALLOW: {PUBLISH: set(), SUBSCRIBE: set()},
             Qualifier.DENY: {PUBLISH: set(), SUBSCRIBE: set()}}
    for profile in enclave.profiles:
        rules = policy.effective_rules(profile) if policy is not None else profile.rules
        for qualifier, kind, pattern, action in (a for r in rules for a in r.atoms()):
            for topic, side in dds_topics(kind, join_name(profile.namespace, pattern), action):
                sides[qualifier][side].add(topic)
    return PermissionsDoc(
        grant_name=enclave.path,
        subject_name=subject or f"CN={enclave.path}",
        not_before=start,
        not_after=end,
        domains=tuple(sorted(set(domains))),
        allow={s: tuple(sorted(v)) for s, v in sides[Qualifier.ALLOW].items()},
        deny={s: tuple(sorted(v)) for s, v in sides[Qualifier.DENY].items()},
    )


def generate_permissions(enclave, validity, policy: SecurityPolicy | None = None, domains=(0,),
                         subject: str | None = None) -> bytes:
    return build_permissions(enclave, validity, policy, domains, subject).to_xml()


def _read_time(text):
    return dt.datetime.strptime(text, TIME_FORMAT).replace(tzinfo=dt.timezone.utc)


def parse_permissions(data: bytes) -> PermissionsDoc:
    grant = _parse_xml(data, "permissions").find("grant")
    if grant is None:
        raise SchemaViolation("no <grant>", element="permissions")
    sides = {"allow_rule": {}, "deny_rule": {}}
    domains: set = set()
    for tag, collected in sides.items():
        for rule in grant.iterfind(tag):
            domains.update(int(e.text) for e in rule.iterfind("domains/id"))
            for side in (PUBLISH, SUBSCRIBE):
                names = [e.text.strip() for e in rule.iterfind(f"{side}/topics/topic")]
                collected[side] = tuple(sorted(set(collected.get(side, ())) | set(names)))
    try:
        return PermissionsDoc(
            grant_name=grant.get("name", ""),
            subject_name=_text(grant, "subject_name"),
            not_before=_read_time(_text(grant, "validity/not_before")),
            not_after=_read_time(_text(grant, "validity/not_after")),
            domains=tuple(sorted(domains)) or (0,),
            allow=sides["allow_rule"],
            deny=sides["deny_rule"],
            default=_text(grant, "default"),
        )
    except ValueError as exc:
        raise SchemaViolation(str(exc), element="grant") from None
