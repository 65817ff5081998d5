import datetime as dt
import os
import random
import shutil
import stat
import subprocess
import xml.etree.ElementTree as ET
from types import SimpleNamespace

import pytest

from graphguard.errors import (
    AlreadyInitialized,
    EmptyEnclave,
    IoFailure,
    KeyMissing,
    PkiError,
    SignatureInvalid,
    UnknownEnclave,
)
from graphguard.pki import (
    build_permissions,

    create_enclave,
    generate_governance,
    init_keystore,
    open_keystore,
    open_signed,
    parse_governance,
    parse_permissions,
    sign_detached,
    verify_detached,
    verify_keystore,
)
from graphguard.pki.documents import dds_topics
from graphguard.pki.smime import canonical
from graphguard.pki.keystore import (
    EXPIRED,
    FILE_MODE,
    IDENTITY_CA,
    MISSING,
    PERMISSIONS_CA,
    SIGNATURE,
    VALIDITY,
    chain_verifies,
    generate_key,
    make_ca,
)
from graphguard.policy import EnclavePolicy, PermissionRule, Profile, Qualifier, SecurityPolicy, load_policy

UTC = dt.timezone.utc
WINDOW = (dt.datetime(2030, 1, 1, tzinfo=UTC), dt.datetime(2031, 1, 1, tzinfo=UTC))


@pytest.fixture(scope="module")
def ec_ca():
    key = generate_key("ecdsa")
    return make_ca("test CA", key), key


@pytest.fixture(scope="module")
def rsa_ca():
    key = generate_key("rsa")
    return make_ca("test RSA CA", key), key


@pytest.fixture
def policy(fixtures):
    return load_policy((fixtures / "talker_listener_policy.xml").read_bytes())


# ------------------------------------------------------------------ S/MIME

@pytest.mark.parametrize("ca", ["ec_ca", "rsa_ca"])
def test_sign_verify_tamper(request, ca):
    cert, key = request.getfixturevalue(ca)
    content = generate_governance()
    env = sign_detached(content, cert, key)
    assert open_signed(env, cert) == content
    rng = random.Random(1)
    for _ in range(150):
        data = bytearray(env)
        i = rng.randrange(len(data))
        data[i] = (data[i] + rng.randint(1, 255)) % 256
        assert not verify_detached(bytes(data), cert)


def test_wrong_signer_rejected(ec_ca, rsa_ca):
    env = sign_detached(b"<x/>\n", *ec_ca)
    with pytest.raises(SignatureInvalid):
        open_signed(env, rsa_ca[0])
    other = generate_key("ecdsa")
    assert not verify_detached(env, make_ca("test CA", other))


def test_sign_requires_key(ec_ca):
    with pytest.raises(KeyMissing):
        sign_detached(b"x", ec_ca[0], None)


def test_canonical():
    assert canonical(b"a\nb\r\nc") == b"a\r\nb\r\nc"


def test_truncated_envelope(ec_ca):
    env = sign_detached(b"data\n", *ec_ca)
    for cut in (0, 10, len(env) // 2, len(env) - 1):
        assert not verify_detached(env[:cut], ec_ca[0])


@pytest.mark.skipif(shutil.which("openssl") is None, reason="openssl not installed")
@pytest.mark.parametrize("ca", ["ec_ca", "rsa_ca"])
def test_openssl_verifies(request, tmp_path, ca):
    from cryptography.hazmat.primitives import serialization
    cert, key = request.getfixturevalue(ca)
    content = generate_governance((0, 1))
    (tmp_path / "doc.p7s").write_bytes(sign_detached(content, cert, key))
    (tmp_path / "ca.pem").write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    out = subprocess.run(["openssl", "smime", "-verify", "-in", str(tmp_path / "doc.p7s"),
                          "-CAfile", str(tmp_path / "ca.pem"), "-purpose", "any"],
                         capture_output=True, check=False)
    assert out.returncode == 0, out.stderr
    assert out.stdout.replace(b"\r\n", b"\n") == content


# ------------------------------------------------------------------ documents

def test_governance_defaults():
    xml = generate_governance((0, 1))
    gov = parse_governance(xml)
    assert gov.domains == (0, 1)
    kinds = gov.protection_kinds()
    assert all(kinds[p] != "NONE" for p in ("discovery", "metadata", "data"))
    assert kinds["rtps"] == "SIGN"
    assert gov.enable_join_access_control and not gov.allow_unauthenticated_participants
    assert b"NONE" not in xml
    root = ET.fromstring(xml)
    assert [e.text for e in root.iter("id")] == ["0", "1"]
    with pytest.raises(ValueError):
        generate_governance(data_protection_kind="BOGUS")


def test_dds_topic_mapping():
    assert dds_topics("topic", "/chatter", "publish") == [("rt/chatter", "publish")]
    assert dds_topics("service", "/add", "reply") == [("rq/addRequest", "subscribe"), ("rr/addReply", "publish")]
    assert dds_topics("service", "/add", "request") == [("rq/addRequest", "publish"), ("rr/addReply", "subscribe")]
    assert len(dds_topics("action", "/fib", "call")) == 8


def test_permissions_document(policy):
    doc = build_permissions(policy.enclave("/talker_listener"), WINDOW, policy)
    assert doc.subject_name == "CN=/talker_listener"
    assert doc.topics(Qualifier.ALLOW, "publish") == ("rt/chatter",)
    assert doc.topics(Qualifier.ALLOW, "subscribe") == ("rt/chatter",)
    xml = doc.to_xml()
    assert b"<not_before>2030-01-01T00:00:00</not_before>" in xml
    assert b"<default>DENY</default>" in xml
    assert parse_permissions(xml) == doc


def test_permissions_deny_first():
    enclave = EnclavePolicy("/e", (Profile("n", rules=(
        PermissionRule("topic", "*", {"publish"}),
        PermissionRule("topic", "secret", {"publish"}, Qualifier.DENY))),))
    xml = build_permissions(enclave, WINDOW).to_xml()
    assert xml.index(b"<deny_rule>") < xml.index(b"<allow_rule>")


def test_empty_enclave():
    with pytest.raises(EmptyEnclave):
        build_permissions(SimpleNamespace(path="/e", profiles=()), WINDOW)


# ------------------------------------------------------------------ keystore

def test_keystore_lifecycle(tmp_path, policy):
    root = tmp_path / "ks"
    ks = init_keystore(root)
    assert verify_keystore(ks) == []
    assert stat.S_IMODE(ks.private_dir.stat().st_mode) == 0o700
    assert stat.S_IMODE(ks.key_path(IDENTITY_CA).stat().st_mode) == 0o600
    with pytest.raises(AlreadyInitialized):
        init_keystore(root)

    material = create_enclave(ks, "/talker_listener", policy)
    assert chain_verifies(material.certificate, ks.certificate(IDENTITY_CA))
    assert not chain_verifies(material.certificate, ks.certificate(PERMISSIONS_CA))
    signed = material.file("permissions.p7s").read_bytes()
    assert open_signed(signed, ks.certificate(PERMISSIONS_CA)) == material.permissions_xml
    assert verify_keystore(root) == []
    assert ks.enclaves() == ["/talker_listener"]

    again = create_enclave(ks, "/talker_listener", policy)
    assert again.certificate == material.certificate
    renewed = create_enclave(ks, "/talker_listener", policy, renew=True)
    assert renewed.certificate != material.certificate
    assert verify_keystore(ks) == []


def test_unknown_enclave_and_uninitialized(tmp_path, policy):
    ks = init_keystore(tmp_path / "ks")
    with pytest.raises(UnknownEnclave):
        create_enclave(ks, "/nope", policy)
    with pytest.raises(PkiError):
        open_keystore(tmp_path / "other")
    (tmp_path / "busy").mkdir()
    (tmp_path / "busy" / "file").write_text("x")
    with pytest.raises(IoFailure):
        init_keystore(tmp_path / "busy")


def test_rsa_and_shared_ca(tmp_path, policy):
    ks = init_keystore(tmp_path / "rsa", key_type="rsa", shared_ca=True)
    assert ks.certificate(IDENTITY_CA) == ks.certificate(PERMISSIONS_CA)
    create_enclave(ks, "/talker_listener", policy, key_type="rsa")
    assert verify_keystore(ks) == []


def test_expired_permissions(tmp_path, policy):
    ks = init_keystore(tmp_path / "ks")
    past = (dt.datetime(2020, 1, 1, tzinfo=UTC), dt.datetime(2021, 1, 1, tzinfo=UTC))
    create_enclave(ks, "/talker_listener", policy, validity=past)
    assert [f.check for f in verify_keystore(ks)] == [EXPIRED]
    future = (dt.datetime.now(UTC) + dt.timedelta(days=10), dt.datetime.now(UTC) + dt.timedelta(days=20))
    create_enclave(ks, "/talker_listener", policy, validity=future)
    assert [f.check for f in verify_keystore(ks)] == [VALIDITY]
    with pytest.raises(ValueError):
        create_enclave(ks, "/talker_listener", policy,
                       validity=(future[0], dt.datetime(2999, 1, 1, tzinfo=UTC)))


def test_tampering_is_found(tmp_path, policy):
    ks = init_keystore(tmp_path / "ks")
    m = create_enclave(ks, "/talker_listener", policy)
    gov = ks.governance_path
    gov.write_bytes(gov.read_bytes()[:-40])
    assert [f.check for f in verify_keystore(ks)] == [SIGNATURE]

    xml = m.file("permissions.xml")
    xml.write_bytes(xml.read_bytes().replace(b"DENY", b"ALLOW"))
    assert [f.check for f in verify_keystore(ks)] == [SIGNATURE, SIGNATURE]

    os.chmod(m.file("key.pem"), 0o644)
    assert FILE_MODE in {f.check for f in verify_keystore(ks)}

    m.file("cert.pem").unlink()
    assert MISSING in {f.check for f in verify_keystore(ks)}


def test_nested_enclave_paths(tmp_path):
    doc = b"""<policy version="0.2.0"><enclaves>
<enclave path="/"><profiles><profile node="a"><topics publish="ALLOW"><topic>x</topic></topics></profile></profiles></enclave>
<enclave path="/robot1/arm"><profiles><profile node="b"><topics publish="ALLOW"><topic>y</topic></topics></profile></profiles></enclave>
</enclaves></policy>"""
    policy = load_policy(doc)
    ks = init_keystore(tmp_path / "ks")
    create_enclave(ks, "/", policy)
    m = create_enclave(ks, "/robot1/arm", policy)
    assert m.directory == ks.enclaves_dir / "robot1" / "arm"
    assert ks.enclaves() == ["/", "/robot1/arm"]
    assert verify_keystore(ks) == []
    with pytest.raises((ValueError, PkiError)):
        ks.enclave_dir("/../escape")
