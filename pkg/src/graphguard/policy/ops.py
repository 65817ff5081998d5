"""Policy synthesis and transformation: generate, merge, refine, factor."""

from __future__ import annotations

import logging
from collections import defaultdict
from typing import Iterable, Mapping

from graphguard.errors import UnassignedNode, VersionMismatch
from graphguard.graph import DeniedEvent, GraphSnapshot, join_name, split_node
from graphguard.policy.model import (
    DEFAULT_VERSION,
    RESOURCE_ACCESS,
    CommonProfile,
    Decision,
    EnclavePolicy,
    PermissionRule,
    Profile,
    SecurityPolicy,
    decide,
    relative_name,
    rules_from_atoms,
)

log = logging.getLogger(__name__)


def generate_policy(snapshot: GraphSnapshot, enclave_assignment: Mapping[str, str] | None = None,
                    version: str = DEFAULT_VERSION) -> SecurityPolicy:
    """Grant exactly the accesses observed in ``snapshot``.

    ``enclave_assignment`` maps fully qualified node names to enclave paths;
    when omitted every node goes to the enclave ``/``.
    """
    grants: dict = defaultdict(set)
    for r in snapshot.resources:
        kind, action = RESOURCE_ACCESS[r.kind]
        grants[r.namespace, r.node].add(PermissionRule(kind, relative_name(r.name, r.namespace), {action}))

    enclaves: dict = defaultdict(list)
    for (ns, node), rules in grants.items():
        fqn = join_name(ns, node)
        if enclave_assignment is None:
            path = "/"
        elif fqn in enclave_assignment:
            path = enclave_assignment[fqn]
        else:
            raise UnassignedNode(fqn)
        enclaves[path].append(Profile(node, ns, tuple(rules)))
    return SecurityPolicy(version, tuple(EnclavePolicy(p, tuple(ps)) for p, ps in enclaves.items()))


def _merge_profiles(a: Profile, b: Profile) -> Profile:
    return Profile(a.node, a.namespace, a.rules + b.rules, a.includes + b.includes)


def _merge_enclaves(a: EnclavePolicy, b: EnclavePolicy) -> EnclavePolicy:
    profiles = {p.key: p for p in a.profiles}
    for p in b.profiles:
        profiles[p.key] = _merge_profiles(profiles[p.key], p) if p.key in profiles else p
    return EnclavePolicy(a.path, tuple(profiles.values()))


def _rename_includes(policy: SecurityPolicy, renames: dict) -> tuple[EnclavePolicy, ...]:
    return tuple(
        EnclavePolicy(e.path, tuple(
            Profile(p.node, p.namespace, p.rules, tuple(renames.get(i, i) for i in p.includes))
            for p in e.profiles))
        for e in policy.enclaves
    )


def merge(a: SecurityPolicy, b: SecurityPolicy) -> SecurityPolicy:
    """Union of two policies of the same version.

    Colliding profiles get the union of their rules. A common profile defined
    differently in both is renamed on the ``b`` side so neither side gains
    rules it did not have.
    """
    if a.version != b.version:
        raise VersionMismatch(f"cannot merge policy version {a.version!r} with {b.version!r}")
    commons = {c.name: c for c in a.commons}
    renames = {}
    for c in b.commons:
        if c.name in commons and commons[c.name].rules != c.rules:
            n = 2
            while f"{c.name}_{n}" in commons or any(x.name == f"{c.name}_{n}" for x in b.commons):
                n += 1
            renames[c.name] = f"{c.name}_{n}"
        commons[renames.get(c.name, c.name)] = CommonProfile(renames.get(c.name, c.name), c.rules)
    b_enclaves = _rename_includes(b, renames) if renames else b.enclaves

    enclaves = {e.path: e for e in a.enclaves}
    for e in b_enclaves:
        enclaves[e.path] = _merge_enclaves(enclaves[e.path], e) if e.path in enclaves else e
    return SecurityPolicy(a.version, tuple(enclaves.values()), tuple(commons.values()))


def refine(policy: SecurityPolicy, denied: Iterable[DeniedEvent], enclave: str = "/") -> SecurityPolicy:
    """Turn access-denied events into ALLOW rules.

    Every profile of the denied node (in any enclave) gains the grant; nodes
    unknown to the policy get a new profile in ``enclave``. Accesses refused
    by an explicit DENY rule are left refused.
    """
    enclaves = {e.path: {p.key: p for p in e.profiles} for e in policy.enclaves}
    for event in denied:
        ns, node = split_node(event.node)
        kind, action = RESOURCE_ACCESS[event.kind]
        holders = [path for path, profiles in enclaves.items() if (ns, node) in profiles]
        if not holders:
            enclaves.setdefault(enclave, {})[ns, node] = Profile(node, ns)
            holders = [enclave]
        for path in holders:
            profile = enclaves[path][ns, node]
            current = decide(policy.effective_rules(profile), ns, kind, event.name, action)
            if current == Decision.ALLOW:
                continue
            if current == Decision.DENY:
                log.warning("not refining %s %s %s: explicitly denied in %s", event.node, event.kind,
                            event.name, path)
                continue
            rule = PermissionRule(kind, relative_name(event.name, ns), {action})
            enclaves[path][ns, node] = Profile(node, ns, profile.rules + (rule,), profile.includes)
    return SecurityPolicy(
        policy.version,
        tuple(EnclavePolicy(path, tuple(ps.values())) for path, ps in enclaves.items()),
        policy.commons,
    )


def flatten(policy: SecurityPolicy) -> SecurityPolicy:
    """Inline every common profile into the profiles that include it."""
    return SecurityPolicy(policy.version, tuple(
        EnclavePolicy(e.path, tuple(Profile(p.node, p.namespace, policy.effective_rules(p)) for p in e.profiles))
        for e in policy.enclaves))


def factor_profiles(policy: SecurityPolicy, prefix: str = "common") -> SecurityPolicy:
    """Lift permission sets shared by two or more profiles into common profiles.

    Each (qualifier, kind, pattern, action) grant is grouped by the exact set
    of profiles holding it; every group held by at least two profiles becomes
    one common profile included by each of them. Effective rules per profile
    are unchanged, so ``match`` answers every query identically.
    """
    flat = flatten(policy)
    holders: dict = defaultdict(set)
    for path, p in flat.profiles():
        for rule in p.rules:
            for atom in rule.atoms():
                holders[atom].add((path, p.namespace, p.node))

    groups: dict = defaultdict(set)
    for atom, owners in holders.items():
        if len(owners) >= 2:
            groups[frozenset(owners)].add(atom)
    if not groups:
        return flat

    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[0]), sorted(kv[0]), sorted(kv[1])))
    commons = []
    includes: dict = defaultdict(list)
    lifted: dict = defaultdict(set)
    for i, (owners, atoms) in enumerate(ordered, 1):
        name = f"{prefix}_{i}"
        commons.append(CommonProfile(name, rules_from_atoms(atoms)))
        for owner in owners:
            includes[owner].append(name)
            lifted[owner] |= atoms

    enclaves = []
    for e in flat.enclaves:
        profiles = []
        for p in e.profiles:
            owner = (e.path, p.namespace, p.node)
            own = [a for r in p.rules for a in r.atoms() if a not in lifted[owner]]
            profiles.append(Profile(p.node, p.namespace, rules_from_atoms(own), tuple(includes[owner])))
        enclaves.append(EnclavePolicy(e.path, tuple(profiles)))
    return SecurityPolicy(policy.version, tuple(enclaves), tuple(commons))


def empty_policy(version: str = DEFAULT_VERSION) -> SecurityPolicy:
    return SecurityPolicy(version)
