"""Policy document model and rule matching.

Rules are kept in a normal form: one rule per (qualifier, kind, pattern) with
the union of its actions, DENY rules ahead of ALLOW rules. Matching is
first-match-wins over that order, so an explicit DENY always beats an ALLOW
regardless of where either was written.

Wildcards: ``*`` matches any run of characters *including* ``/`` and ``?``
matches exactly one character. A pattern like ``/robot*/cmd_vel`` therefore
also matches ``/robot1/arm/cmd_vel``; keep wildcard rules narrow.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

from graphguard.graph import ResourceKind, join_name, split_node

TOPIC = "topic"
SERVICE = "service"
ACTION = "action"
RULE_KINDS = (TOPIC, SERVICE, ACTION)

LEGAL_ACTIONS = {
    TOPIC: frozenset({"publish", "subscribe"}),
    SERVICE: frozenset({"reply", "request"}),
    ACTION: frozenset({"call", "execute"}),
}

DEFAULT_VERSION = "0.2.0"

# graph resource kind <-> (rule kind, action)
RESOURCE_ACCESS = {
    ResourceKind.TOPIC_PUBLISH: (TOPIC, "publish"),
    ResourceKind.TOPIC_SUBSCRIBE: (TOPIC, "subscribe"),
    ResourceKind.SERVICE_REPLY: (SERVICE, "reply"),
    ResourceKind.SERVICE_REQUEST: (SERVICE, "request"),
    ResourceKind.ACTION_CALL: (ACTION, "call"),
    ResourceKind.ACTION_EXECUTE: (ACTION, "execute"),
}
ACCESS_RESOURCE = {v: k for k, v in RESOURCE_ACCESS.items()}


class Qualifier(str, enum.Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"

    def __str__(self):
        return self.value


class Decision(str, enum.Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"
    NOT_COVERED = "NOT_COVERED"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class PermissionRule:
    kind: str
    pattern: str
    actions: frozenset[str]
    qualifier: Qualifier = Qualifier.ALLOW

    def __post_init__(self):
        if self.kind not in LEGAL_ACTIONS:
            raise ValueError(f"unknown resource kind {self.kind!r}")
        actions = frozenset([self.actions] if isinstance(self.actions, str) else self.actions)
        if not actions:
            raise ValueError("a rule needs at least one action")
        illegal = actions - LEGAL_ACTIONS[self.kind]
        if illegal:
            raise ValueError(f"action(s) {', '.join(sorted(illegal))} not legal for {self.kind}")
        if not self.pattern or any(c.isspace() for c in self.pattern):
            raise ValueError(f"invalid name pattern {self.pattern!r}")
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "qualifier", Qualifier(self.qualifier))

    @property
    def is_wildcard(self):
        return "*" in self.pattern or "?" in self.pattern

    def sort_key(self):
        return (self.qualifier != Qualifier.DENY, self.kind, self.pattern, tuple(sorted(self.actions)))

    def atoms(self):
        for action in sorted(self.actions):
            yield (self.qualifier, self.kind, self.pattern, action)


def normalize_rules(rules: Iterable[PermissionRule]) -> tuple[PermissionRule, ...]:
    merged: dict = {}
    for r in rules:
        key = (r.qualifier, r.kind, r.pattern)
        merged[key] = merged.get(key, frozenset()) | r.actions
    out = [PermissionRule(k, p, a, q) for (q, k, p), a in merged.items()]
    return tuple(sorted(out, key=PermissionRule.sort_key))


def rules_from_atoms(atoms) -> tuple[PermissionRule, ...]:
    return normalize_rules(PermissionRule(k, p, {a}, q) for q, k, p, a in atoms)


@dataclass(frozen=True)
class Profile:
    node: str
    namespace: str = "/"
    rules: tuple[PermissionRule, ...] = ()
    includes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.node or "/" in self.node:
            raise ValueError(f"invalid node name {self.node!r}")
        if not self.namespace.startswith("/"):
            raise ValueError(f"namespace {self.namespace!r} must be absolute")
        object.__setattr__(self, "rules", normalize_rules(self.rules))
        object.__setattr__(self, "includes", tuple(sorted(set(self.includes))))

    @property
    def key(self):
        return (self.namespace, self.node)

    @property
    def fqn(self):
        return join_name(self.namespace, self.node)


@dataclass(frozen=True)
class EnclavePolicy:
    path: str
    profiles: tuple[Profile, ...]

    def __post_init__(self):
        if not self.path.startswith("/"):
            raise ValueError(f"enclave path {self.path!r} must begin with '/'")
        profiles = tuple(sorted(self.profiles, key=lambda p: p.key))
        if not profiles:
            raise ValueError(f"enclave {self.path} has no profiles")
        keys = [p.key for p in profiles]
        if len(set(keys)) != len(keys):
            raise ValueError(f"enclave {self.path} has duplicate (namespace, node) profiles")
        object.__setattr__(self, "profiles", profiles)

    def profile(self, namespace, node) -> Profile | None:
        for p in self.profiles:
            if p.key == (namespace, node):
                return p
        return None


@dataclass(frozen=True)
class CommonProfile:
    """Named rule set shared by several profiles through ``includes``."""

    name: str
    rules: tuple[PermissionRule, ...]

    def __post_init__(self):
        if not self.name:
            raise ValueError("common profile needs a name")
        object.__setattr__(self, "rules", normalize_rules(self.rules))


@dataclass(frozen=True)
class SecurityPolicy:
    version: str = DEFAULT_VERSION
    enclaves: tuple[EnclavePolicy, ...] = ()
    commons: tuple[CommonProfile, ...] = ()

    def __post_init__(self):
        enclaves = tuple(sorted(self.enclaves, key=lambda e: e.path))
        paths = [e.path for e in enclaves]
        if len(set(paths)) != len(paths):
            raise ValueError("duplicate enclave paths")
        commons = tuple(sorted(self.commons, key=lambda c: c.name))
        names = [c.name for c in commons]
        if len(set(names)) != len(names):
            raise ValueError("duplicate common profile names")
        known = set(names)
        for e in enclaves:
            for p in e.profiles:
                missing = set(p.includes) - known
                if missing:
                    raise ValueError(f"profile {p.fqn} includes undefined {sorted(missing)}")
        object.__setattr__(self, "enclaves", enclaves)
        object.__setattr__(self, "commons", commons)
        object.__setattr__(self, "_effective", {})

    def enclave(self, path) -> EnclavePolicy | None:
        for e in self.enclaves:
            if e.path == path:
                return e
        return None

    def common(self, name) -> CommonProfile | None:
        for c in self.commons:
            if c.name == name:
                return c
        return None

    def effective_rules(self, profile: Profile) -> tuple[PermissionRule, ...]:
        if not profile.includes:
            return profile.rules
        cached = self._effective.get(profile)
        if cached is None:
            rules = list(profile.rules)
            for name in profile.includes:
                rules.extend(self.common(name).rules)
            cached = self._effective[profile] = normalize_rules(rules)
        return cached

    def profiles(self):
        """Yield ``(enclave_path, profile)`` for every profile."""
        for e in self.enclaves:
            for p in e.profiles:
                yield e.path, p


@lru_cache(maxsize=4096)
def _compile(pattern: str) -> re.Pattern:
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.DOTALL)


def wildcard_match(pattern: str, name: str) -> bool:
    return _compile(pattern).fullmatch(name) is not None


def rule_matches(rule: PermissionRule, namespace: str, kind: str, name: str, action: str) -> bool:
    """``name`` must already be absolute."""
    return (rule.kind == kind and action in rule.actions
            and wildcard_match(join_name(namespace, rule.pattern), name))


def decide(rules, namespace, kind, name, action) -> Decision:
    name = join_name(namespace, name)
    for rule in rules:
        if rule_matches(rule, namespace, kind, name, action):
            return Decision(rule.qualifier.value)
    return Decision.NOT_COVERED


def match(policy: SecurityPolicy, enclave: str, node: str, kind: str, name: str, action: str) -> Decision:
    """Evaluate one access query.

    ``node`` is ``"name"`` (namespace ``/``) or a fully qualified ``"/ns/name"``;
    relative ``name`` values resolve against the node's namespace.
    """
    e = policy.enclave(enclave)
    if e is None:
        return Decision.NOT_COVERED
    ns, node_name = split_node(node)
    profile = e.profile(ns, node_name)
    if profile is None:
        return Decision.NOT_COVERED
    return decide(policy.effective_rules(profile), ns, kind, name, action)


def relative_name(name: str, namespace: str) -> str:
    """Express an absolute ``name`` relative to ``namespace`` when it lies inside it."""
    if namespace == "/":
        return name[1:]
    if name.startswith(namespace + "/"):
        return name[len(namespace) + 1:]
    return name
