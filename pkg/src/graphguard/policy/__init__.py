"""Access-control policies for ROS graphs: model, XML I/O, synthesis and audit."""

from graphguard.policy.audit import AuditReport, UncoveredAccess, UnusedGrant, WildcardUsage, audit
from graphguard.policy.model import (
    ACTION,
    DEFAULT_VERSION,
    LEGAL_ACTIONS,
    SERVICE,
    TOPIC,
    CommonProfile,
    Decision,
    EnclavePolicy,
    PermissionRule,
    Profile,
    Qualifier,
    SecurityPolicy,
    match,
    wildcard_match,
)
from graphguard.policy.ops import empty_policy, factor_profiles, flatten, generate_policy, merge, refine
from graphguard.policy.xmlio import load_policy, save_policy
