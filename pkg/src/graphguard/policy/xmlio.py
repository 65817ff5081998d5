"""Policy XML reading and canonical writing.

Document shape::

    <policy version="0.2.0">
      <enclaves>
        <enclave path="/talker_listener">
          <profiles>
            <profile ns="/" node="talker">
              <include name="common_1"/>
              <topics publish="ALLOW">
                <topic>chatter</topic>
              </topics>
            </profile>
          </profiles>
        </enclave>
      </enclaves>
      <common name="common_1">
        <topics subscribe="ALLOW"><topic>clock</topic></topics>
      </common>
    </policy>
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import defaultdict
from xml.parsers import expat

from graphguard.errors import SchemaViolation
from graphguard.policy.model import (
    LEGAL_ACTIONS,
    CommonProfile,
    EnclavePolicy,
    PermissionRule,
    Profile,
    Qualifier,
    SecurityPolicy,
)

_GROUP_TAG = {"topic": "topics", "service": "services", "action": "actions"}
_KIND_OF_GROUP = {v: k for k, v in _GROUP_TAG.items()}


def _parse(data: bytes):
    """Parse with expat, remembering the source line of every element."""
    lines: dict = {}
    builder = ET.TreeBuilder()
    parser = expat.ParserCreate()
    parser.buffer_text = True

    def start(tag, attrs):
        elem = builder.start(tag, attrs)
        lines[id(elem)] = parser.CurrentLineNumber

    parser.StartElementHandler = start
    parser.EndElementHandler = builder.end
    parser.CharacterDataHandler = builder.data
    try:
        parser.Parse(data, True)
    except expat.ExpatError as exc:
        raise SchemaViolation(f"malformed XML: {expat.ErrorString(exc.code)}", exc.lineno) from None
    return builder.close(), lines


class _Reader:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, elem, message):
        raise SchemaViolation(message, self.lines.get(id(elem)), elem.tag)

    def attr(self, elem, name):
        value = elem.get(name)
        if value is None or not value.strip():
            self.fail(elem, f"missing attribute {name!r}")
        return value.strip()

    def only(self, elem, allowed):
        for child in elem:
            if child.tag not in allowed:
                self.fail(child, f"unexpected element inside <{elem.tag}>")

    def rules(self, elem):
        """Rules and includes found directly under a profile or common block."""
        rules, includes = [], []
        for child in elem:
            if child.tag == "include":
                includes.append(self.attr(child, "name"))
                continue
            kind = _KIND_OF_GROUP.get(child.tag)
            if kind is None:
                self.fail(child, f"unexpected element inside <{elem.tag}>")
            by_qualifier = defaultdict(set)
            for action, value in child.attrib.items():
                if action not in LEGAL_ACTIONS[kind]:
                    self.fail(child, f"action {action!r} is not legal on {child.tag}")
                if value not in ("ALLOW", "DENY"):
                    self.fail(child, f"{action}={value!r} must be ALLOW or DENY")
                by_qualifier[value].add(action)
            if not by_qualifier:
                self.fail(child, "no actions given")
            names = []
            for leaf in child:
                if leaf.tag != kind:
                    self.fail(leaf, f"<{child.tag}> may only contain <{kind}>")
                text = (leaf.text or "").strip()
                if not text or any(c.isspace() for c in text):
                    self.fail(leaf, f"invalid {kind} name {text!r}")
                names.append(text)
            if not names:
                self.fail(child, f"<{child.tag}> lists no {kind}")
            for qualifier, actions in by_qualifier.items():
                rules.extend(PermissionRule(kind, n, frozenset(actions), Qualifier(qualifier)) for n in names)
        return rules, includes


def load_policy(data) -> SecurityPolicy:
    if isinstance(data, str):
        data = data.encode("utf-8")
    root, lines = _parse(data)
    r = _Reader(lines)
    if root.tag != "policy":
        r.fail(root, "root element must be <policy>")
    version = r.attr(root, "version")
    r.only(root, {"enclaves", "common"})

    commons = []
    for block in root.findall("common"):
        rules, includes = r.rules(block)
        if includes:
            r.fail(block, "common profiles cannot include other common profiles")
        commons.append(CommonProfile(r.attr(block, "name"), tuple(rules)))
    common_names = {c.name for c in commons}
    if len(common_names) != len(commons):
        r.fail(root, "duplicate common profile names")

    enclaves = []
    seen_paths = set()
    for group in root.findall("enclaves"):
        r.only(group, {"enclave"})
        for enc in group:
            path = r.attr(enc, "path")
            if not path.startswith("/"):
                r.fail(enc, f"enclave path {path!r} must begin with '/'")
            if path in seen_paths:
                r.fail(enc, f"duplicate enclave {path!r}")
            seen_paths.add(path)
            r.only(enc, {"profiles"})
            profiles = {}
            for plist in enc:
                r.only(plist, {"profile"})
                for prof in plist:
                    node = r.attr(prof, "node")
                    ns = prof.get("ns", "/").strip() or "/"
                    if not ns.startswith("/"):
                        r.fail(prof, f"namespace {ns!r} must be absolute")
                    if "/" in node:
                        r.fail(prof, f"node name {node!r} may not contain '/'")
                    if (ns, node) in profiles:
                        r.fail(prof, f"duplicate profile {ns} {node}")
                    rules, includes = r.rules(prof)
                    for name in includes:
                        if name not in common_names:
                            r.fail(prof, f"include of undefined common profile {name!r}")
                    profiles[ns, node] = Profile(node, ns, tuple(rules), tuple(includes))
            if not profiles:
                r.fail(enc, "enclave has no profiles")
            enclaves.append(EnclavePolicy(path, tuple(profiles.values())))
    return SecurityPolicy(version, tuple(enclaves), tuple(commons))


def _emit_rules(parent, rules):
    # one element per (qualifier, kind, action set), names sorted; DENY first
    groups: dict = {}
    for rule in rules:
        key = (rule.qualifier != Qualifier.DENY, rule.kind, tuple(sorted(rule.actions)))
        groups.setdefault(key, []).append(rule.pattern)
    for (is_allow, kind, actions), names in sorted(groups.items()):
        qualifier = "ALLOW" if is_allow else "DENY"
        elem = ET.SubElement(parent, _GROUP_TAG[kind], {a: qualifier for a in actions})
        for name in sorted(names):
            ET.SubElement(elem, kind).text = name


def save_policy(policy: SecurityPolicy) -> bytes:
    root = ET.Element("policy", {"version": policy.version})
    enclaves = ET.SubElement(root, "enclaves")
    for e in policy.enclaves:
        enc = ET.SubElement(enclaves, "enclave", {"path": e.path})
        profiles = ET.SubElement(enc, "profiles")
        for p in e.profiles:
            prof = ET.SubElement(profiles, "profile", {"ns": p.namespace, "node": p.node})
            for name in p.includes:
                ET.SubElement(prof, "include", {"name": name})
            _emit_rules(prof, p.rules)
    for c in policy.commons:
        _emit_rules(ET.SubElement(root, "common", {"name": c.name}), c.rules)
    ET.indent(root, space="  ")
    return b'<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="utf-8") + b"\n"
