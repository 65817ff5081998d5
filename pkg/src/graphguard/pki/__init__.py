"""Keystore, certificate authorities and signed DDS Security documents."""

from graphguard.pki.documents import (
    GovernanceDoc,
    PermissionsDoc,
    build_permissions,
    dds_topics,
    generate_governance,
    generate_permissions,
    parse_governance,
    parse_permissions,
)
from graphguard.pki.keystore import (
    EnclaveMaterial,
    Finding,
    Keystore,
    create_enclave,
    init_keystore,
    open_keystore,
    verify_keystore,
)
from graphguard.pki.smime import open_signed, sign_detached, verify_detached
