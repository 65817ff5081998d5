"""Compare a policy against observed graph activity."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from graphguard.graph import GraphSnapshot, join_name
from graphguard.policy.model import (
    RESOURCE_ACCESS,
    Decision,
    Qualifier,
    SecurityPolicy,
    decide,
    rule_matches,
)


@dataclass(frozen=True, order=True)
class UncoveredAccess:
    node: str
    kind: str
    action: str
    name: str
    decision: Decision


@dataclass(frozen=True, order=True)
class UnusedGrant:
    enclave: str
    node: str
    kind: str
    pattern: str
    action: str


@dataclass(frozen=True, order=True)
class WildcardUsage:
    enclave: str
    node: str
    kind: str
    pattern: str
    qualifier: Qualifier
    matches: int


@dataclass
class AuditReport:
    uncovered: list[UncoveredAccess] = field(default_factory=list)
    overprivileged: list[UnusedGrant] = field(default_factory=list)
    wildcards: list[WildcardUsage] = field(default_factory=list)

    @property
    def clean(self):
        return not self.uncovered and not self.overprivileged

    def records(self) -> list[dict]:
        out = []
        for u in self.uncovered:
            out.append({"finding": str(u.decision), "node": u.node, "kind": u.kind,
                        "action": u.action, "name": u.name})
        for g in self.overprivileged:
            out.append({"finding": "UNUSED_GRANT", "enclave": g.enclave, "node": g.node,
                        "kind": g.kind, "pattern": g.pattern, "action": g.action})
        for w in self.wildcards:
            out.append({"finding": "WILDCARD", "enclave": w.enclave, "node": w.node, "kind": w.kind,
                        "pattern": w.pattern, "qualifier": str(w.qualifier), "matches": w.matches})
        return out

    def render(self) -> str:
        lines = []
        for u in self.uncovered:
            lines.append(f"{u.decision} {u.node} {u.kind} {u.action} {u.name}")
        for g in self.overprivileged:
            lines.append(f"UNUSED_GRANT {g.enclave} {g.node} {g.kind} {g.action} {g.pattern}")
        for w in self.wildcards:
            lines.append(f"WILDCARD {w.enclave} {w.node} {w.kind} {w.qualifier} {w.pattern} matches={w.matches}")
        return "".join(line + "\n" for line in lines)

    def to_json_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def observed_accesses(snapshot: GraphSnapshot):
    """``(namespace, node, kind, action, absolute_name)`` for every observed resource."""
    out = set()
    for r in snapshot.resources:
        kind, action = RESOURCE_ACCESS[r.kind]
        out.add((r.namespace, r.node, kind, action, r.name))
    return out


def audit(policy: SecurityPolicy, snapshot: GraphSnapshot,
          enclave_assignment: Mapping[str, str] | None = None) -> AuditReport:
    """Report uncovered accesses, never-used grants and wildcard usage.

    Without ``enclave_assignment`` an access is covered if any enclave that
    holds a profile for the node allows it.
    """
    accesses = observed_accesses(snapshot)
    report = AuditReport()

    by_node: dict = {}
    for ns, node, kind, action, name in accesses:
        by_node.setdefault((ns, node), []).append((kind, action, name))

    for ns, node, kind, action, name in sorted(accesses):
        fqn = join_name(ns, node)
        if enclave_assignment is not None:
            paths = [enclave_assignment[fqn]] if fqn in enclave_assignment else []
        else:
            paths = [e.path for e in policy.enclaves if e.profile(ns, node) is not None]
        decisions = []
        for path in paths:
            profile = policy.enclave(path).profile(ns, node) if policy.enclave(path) else None
            if profile is None:
                decisions.append(Decision.NOT_COVERED)
            else:
                decisions.append(decide(policy.effective_rules(profile), ns, kind, name, action))
        if Decision.ALLOW in decisions:
            continue
        decision = Decision.DENY if Decision.DENY in decisions else Decision.NOT_COVERED
        report.uncovered.append(UncoveredAccess(fqn, kind, action, name, decision))

    for path, profile in policy.profiles():
        if enclave_assignment is not None and enclave_assignment.get(profile.fqn, path) != path:
            seen = []
        else:
            seen = by_node.get(profile.key, [])
        for rule in policy.effective_rules(profile):
            if rule.is_wildcard:
                count = sum(1 for kind, action, name in seen
                            if rule_matches(rule, profile.namespace, kind, name, action))
                report.wildcards.append(WildcardUsage(path, profile.fqn, rule.kind, rule.pattern,
                                                      rule.qualifier, count))
            if rule.qualifier != Qualifier.ALLOW:
                continue
            for action in sorted(rule.actions):
                if not any(a == action and rule_matches(rule, profile.namespace, kind, name, a)
                           for kind, a, name in seen):
                    report.overprivileged.append(UnusedGrant(path, profile.fqn, rule.kind, rule.pattern, action))

    report.overprivileged.sort()
    report.wildcards.sort()
    return report
