"""On-disk keystore: certificate authorities, enclave identities, signed documents.

Layout::

    <root>/public/identity_ca.cert.pem
    <root>/public/permissions_ca.cert.pem
    <root>/private/identity_ca.key.pem
    <root>/private/permissions_ca.key.pem
    <root>/enclaves/governance.p7s
    <root>/enclaves/<path>/{cert.pem, key.pem, governance.p7s, permissions.xml, permissions.p7s}

Enclave path components become nested directories. Writers hold an
exclusive ``flock`` on the root directory, readers a shared one.
"""

from __future__ import annotations

import contextlib
import datetime as dt
import fcntl
import os
import stat
from dataclasses import dataclass
from pathlib import Path

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, rsa
from cryptography.x509.oid import NameOID

from graphguard.errors import (
    AlreadyInitialized,
    ChainFailure,
    IoFailure,
    KeyMissing,
    PkiError,
    SchemaViolation,
    SignatureInvalid,
    UnknownEnclave,
)
from graphguard.pki.documents import (
    PermissionsDoc,
    build_permissions,
    generate_governance,
    parse_governance,
    parse_permissions,
)
from graphguard.pki.smime import open_signed, sign_detached
from graphguard.policy.model import SecurityPolicy

DEFAULT_VALIDITY = dt.timedelta(days=3650)
KEY_TYPES = ("ecdsa", "rsa")

IDENTITY_CA = "identity_ca"
PERMISSIONS_CA = "permissions_ca"
ENCLAVE_FILES = ("cert.pem", "key.pem", "governance.p7s", "permissions.xml", "permissions.p7s")

# verify_keystore finding categories
CHAIN = "CHAIN"
SIGNATURE = "SIGNATURE"
EXPIRED = "EXPIRED"
VALIDITY = "VALIDITY"
FILE_MODE = "FILE_MODE"
GOVERNANCE = "GOVERNANCE"
MISSING = "MISSING"


def _now():
    return dt.datetime.now(dt.timezone.utc).replace(microsecond=0)


def generate_key(key_type: str = "ecdsa"):
    if key_type == "ecdsa":
        return ec.generate_private_key(ec.SECP256R1())
    if key_type == "rsa":
        return rsa.generate_private_key(public_exponent=65537, key_size=3072)
    raise ValueError(f"unknown key type {key_type!r}; choose from {', '.join(KEY_TYPES)}")


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])


def make_ca(common_name: str, key, not_before=None, validity=DEFAULT_VALIDITY) -> x509.Certificate:
    start = not_before or _now()
    ski = x509.SubjectKeyIdentifier.from_public_key(key.public_key())
    return (x509.CertificateBuilder()
            .subject_name(_name(common_name))
            .issuer_name(_name(common_name))
            .public_key(key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(start)
            .not_valid_after(start + validity)
            .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
            .add_extension(x509.KeyUsage(
                digital_signature=True, content_commitment=False, key_encipherment=False,
                data_encipherment=False, key_agreement=False, key_cert_sign=True, crl_sign=True,
                encipher_only=False, decipher_only=False), critical=True)
            .add_extension(ski, critical=False)
            .sign(key, hashes.SHA256()))


def issue_certificate(subject_cn: str, public_key, ca_cert: x509.Certificate, ca_key,
                      not_before=None, validity=DEFAULT_VALIDITY) -> x509.Certificate:
    start = not_before or _now()
    # an identity never outlives the CA that vouches for it
    end = min(start + validity, ca_cert.not_valid_after_utc)
    return (x509.CertificateBuilder()
            .subject_name(_name(subject_cn))
            .issuer_name(ca_cert.subject)
            .public_key(public_key)
            .serial_number(x509.random_serial_number())
            .not_valid_before(start)
            .not_valid_after(end)
            .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
            .add_extension(x509.KeyUsage(
                digital_signature=True, content_commitment=False, key_encipherment=False,
                data_encipherment=False, key_agreement=True, key_cert_sign=False, crl_sign=False,
                encipher_only=False, decipher_only=False), critical=True)
            .add_extension(x509.AuthorityKeyIdentifier.from_issuer_public_key(ca_cert.public_key()),
                           critical=False)
            .sign(ca_key, hashes.SHA256()))


def chain_verifies(cert: x509.Certificate, ca_cert: x509.Certificate) -> bool:
    try:
        cert.verify_directly_issued_by(ca_cert)
    except (ValueError, TypeError, InvalidSignature):
        return False
    return True


def _cert_pem(cert) -> bytes:
    return cert.public_bytes(serialization.Encoding.PEM)


def _key_pem(key) -> bytes:
    return key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                             serialization.NoEncryption())


def _write(path: Path, data: bytes, mode: int = 0o644):
    tmp = path.with_name(path.name + ".tmp")
    try:
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, mode)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, mode)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise IoFailure(exc.errno, f"cannot read {path}: {exc.strerror}") from None


@contextlib.contextmanager
def _locked(root: Path, exclusive: bool = True):
    try:
        fd = os.open(root, os.O_RDONLY)
    except OSError as exc:
        raise IoFailure(exc.errno, f"cannot open {root}: {exc.strerror}") from None
    try:
        fcntl.flock(fd, fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH)
        yield
    finally:
        os.close(fd)


def enclave_directory(enclaves_dir: Path, enclave_path: str) -> Path:
    if not enclave_path.startswith("/"):
        raise ValueError(f"enclave path {enclave_path!r} must begin with '/'")
    parts = [p for p in enclave_path.split("/") if p]
    if any(p in (".", "..") for p in parts) or "//" in enclave_path:
        raise ValueError(f"invalid enclave path {enclave_path!r}")
    return enclaves_dir.joinpath(*parts)


@dataclass
class Keystore:
    root: Path

    @property
    def public_dir(self):
        return self.root / "public"

    @property
    def private_dir(self):
        return self.root / "private"

    @property
    def enclaves_dir(self):
        return self.root / "enclaves"

    def cert_path(self, ca: str) -> Path:
        return self.public_dir / f"{ca}.cert.pem"

    def key_path(self, ca: str) -> Path:
        return self.private_dir / f"{ca}.key.pem"

    @property
    def governance_path(self):
        return self.enclaves_dir / "governance.p7s"

    @property
    def initialized(self):
        return self.cert_path(IDENTITY_CA).exists() and self.cert_path(PERMISSIONS_CA).exists()

    def certificate(self, ca: str) -> x509.Certificate:
        return x509.load_pem_x509_certificate(_read(self.cert_path(ca)))

    def private_key(self, ca: str):
        path = self.key_path(ca)
        if not path.exists():
            raise KeyMissing(f"{path} is missing")
        return serialization.load_pem_private_key(_read(path), password=None)

    def enclave_dir(self, enclave_path: str) -> Path:
        return enclave_directory(self.enclaves_dir, enclave_path)

    def enclaves(self) -> list[str]:
        """Enclave paths holding any enclave material (the shared governance aside)."""
        found = set()
        for name in ENCLAVE_FILES:
            if name == "governance.p7s":
                continue
            for f in self.enclaves_dir.rglob(name):
                rel = f.parent.relative_to(self.enclaves_dir).as_posix()
                found.add("/" if rel == "." else "/" + rel)
        return sorted(found)


@dataclass
class EnclaveMaterial:
    path: str
    directory: Path
    certificate: x509.Certificate
    key: object
    permissions_xml: bytes
    permissions: PermissionsDoc

    def file(self, name: str) -> Path:
        return self.directory / name


def init_keystore(root, key_type: str = "ecdsa", shared_ca: bool = False, domains=(0,),
                  validity: dt.timedelta = DEFAULT_VALIDITY) -> Keystore:
    """Create both CAs and the signed default governance under ``root``.

    ``shared_ca`` uses one keypair for identity and permissions, for tools
    that expect a single CA.
    """
    ks = Keystore(Path(root))
    if ks.initialized:
        raise AlreadyInitialized(f"{ks.root} already holds a keystore")
    try:
        ks.root.mkdir(parents=True, exist_ok=True)
        if any(ks.root.iterdir()):
            raise IoFailure(f"{ks.root} is not empty")
    except OSError as exc:
        if isinstance(exc, IoFailure):
            raise
        raise IoFailure(exc.errno, f"cannot create {ks.root}: {exc.strerror}") from None

    with _locked(ks.root):
        for d, mode in ((ks.public_dir, 0o755), (ks.private_dir, 0o700), (ks.enclaves_dir, 0o755)):
            d.mkdir(mode=mode, exist_ok=True)
            os.chmod(d, mode)
        id_key = generate_key(key_type)
        id_cert = make_ca("graphguard Identity CA", id_key, validity=validity)
        if shared_ca:
            perm_key, perm_cert = id_key, id_cert
        else:
            perm_key = generate_key(key_type)
            perm_cert = make_ca("graphguard Permissions CA", perm_key, validity=validity)
        _write(ks.key_path(IDENTITY_CA), _key_pem(id_key), 0o600)
        _write(ks.key_path(PERMISSIONS_CA), _key_pem(perm_key), 0o600)
        _write(ks.cert_path(IDENTITY_CA), _cert_pem(id_cert))
        _write(ks.cert_path(PERMISSIONS_CA), _cert_pem(perm_cert))
        _write(ks.governance_path, sign_detached(generate_governance(domains), perm_cert, perm_key))
    return ks


def open_keystore(root) -> Keystore:
    ks = Keystore(Path(root))
    if not ks.initialized:
        raise PkiError(f"{ks.root} is not an initialized keystore")
    return ks


def create_enclave(ks: Keystore, enclave_path: str, policy: SecurityPolicy, validity=None,
                   domains=(0,), key_type: str = "ecdsa", renew: bool = False) -> EnclaveMaterial:
    """Issue (or refresh) the identity and signed permissions for one enclave.

    An existing enclave keeps its key and certificate unless ``renew`` is set;
    its permissions are regenerated from ``policy`` either way. ``validity``
    is a ``(not_before, not_after)`` pair for the permissions document and
    defaults to the certificate's lifetime.
    """
    enclave = policy.enclave(enclave_path)
    if enclave is None:
        raise UnknownEnclave(enclave_path)
    if not ks.initialized:
        raise PkiError(f"{ks.root} is not an initialized keystore")
    directory = ks.enclave_dir(enclave_path)

    with _locked(ks.root):
        id_cert = ks.certificate(IDENTITY_CA)
        perm_cert = ks.certificate(PERMISSIONS_CA)
        perm_key = ks.private_key(PERMISSIONS_CA)
        cert_file, key_file = directory / "cert.pem", directory / "key.pem"
        cert = key = None
        if not renew and cert_file.exists() and key_file.exists():
            cert = x509.load_pem_x509_certificate(_read(cert_file))
            key = serialization.load_pem_private_key(_read(key_file), password=None)
            if not chain_verifies(cert, id_cert):
                cert = key = None
        if cert is None:
            key = generate_key(key_type)
            cert = issue_certificate(enclave_path, key.public_key(), id_cert, ks.private_key(IDENTITY_CA))
        if not chain_verifies(cert, id_cert):
            raise ChainFailure(f"certificate for {enclave_path} does not verify to the identity CA")

        start, end = validity or (cert.not_valid_before_utc, cert.not_valid_after_utc)
        doc = build_permissions(enclave, (start, end), policy, domains,
                                subject=cert.subject.rfc4514_string())
        if doc.not_after > cert.not_valid_after_utc:
            raise ValueError("permissions cannot outlive the enclave certificate")
        xml = doc.to_xml()

        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(exc.errno, f"cannot create {directory}: {exc.strerror}") from None
        _write(cert_file, _cert_pem(cert))
        _write(key_file, _key_pem(key), 0o600)
        _write(directory / "governance.p7s", _read(ks.governance_path))
        _write(directory / "permissions.xml", xml)
        _write(directory / "permissions.p7s", sign_detached(xml, perm_cert, perm_key))
    return EnclaveMaterial(enclave_path, directory, cert, key, xml, doc)


@dataclass(frozen=True, order=True)
class Finding:
    check: str
    subject: str
    detail: str

    def __str__(self):
        return f"{self.check} {self.subject}: {self.detail}"


def _mode_findings(path: Path, label: str):
    try:
        mode = stat.S_IMODE(path.stat().st_mode)
    except OSError:
        return []
    if mode & 0o077:
        return [Finding(FILE_MODE, label, f"mode {mode:04o} is readable beyond the owner")]
    return []


def _check_signed(path: Path, ca_cert, label: str, findings: list) -> bytes | None:
    if not path.exists():
        findings.append(Finding(MISSING, label, f"{path.name} is missing"))
        return None
    try:
        return open_signed(path.read_bytes(), ca_cert)
    except SignatureInvalid as exc:
        findings.append(Finding(SIGNATURE, label, f"{path.name}: {exc}"))
        return None


def _check_governance(content: bytes, label: str, findings: list):
    try:
        gov = parse_governance(content)
    except SchemaViolation as exc:
        findings.append(Finding(GOVERNANCE, label, f"unreadable governance: {exc}"))
        return
    weak = [plane for plane, kind in gov.protection_kinds().items()
            if plane in ("discovery", "metadata", "data") and kind == "NONE"]
    if weak:
        findings.append(Finding(GOVERNANCE, label, f"no protection on {', '.join(weak)}"))


def verify_keystore(ks: Keystore | str | os.PathLike, now: dt.datetime | None = None) -> list[Finding]:
    """Check chains, signatures, validity windows and file modes; return the failures."""
    if not isinstance(ks, Keystore):
        ks = Keystore(Path(ks))
    now = now or _now()
    findings: list[Finding] = []
    if not ks.initialized:
        return [Finding(MISSING, str(ks.root), "not an initialized keystore")]

    with _locked(ks.root, exclusive=False):
        cas = {}
        for ca in (IDENTITY_CA, PERMISSIONS_CA):
            cert = ks.certificate(ca)
            cas[ca] = cert
            if not chain_verifies(cert, cert):
                findings.append(Finding(CHAIN, ca, "CA certificate is not validly self-signed"))
            if now > cert.not_valid_after_utc:
                findings.append(Finding(EXPIRED, ca, f"expired {cert.not_valid_after_utc:%Y-%m-%d}"))
            if not ks.key_path(ca).exists():
                findings.append(Finding(MISSING, ca, "private key is missing"))
            findings += _mode_findings(ks.key_path(ca), f"{ca}.key.pem")
        findings += _mode_findings(ks.private_dir, "private/")
        id_cert, perm_cert = cas[IDENTITY_CA], cas[PERMISSIONS_CA]

        content = _check_signed(ks.governance_path, perm_cert, "governance", findings)
        if content is not None:
            _check_governance(content, "governance", findings)

        for path in ks.enclaves():
            findings += _verify_enclave(ks, path, id_cert, perm_cert, now)
    return sorted(findings)


def _verify_enclave(ks: Keystore, path: str, id_cert, perm_cert, now) -> list[Finding]:
    findings: list[Finding] = []
    directory = ks.enclave_dir(path)
    for name in ENCLAVE_FILES:
        if not (directory / name).exists():
            findings.append(Finding(MISSING, path, f"{name} is missing"))
    try:
        cert = x509.load_pem_x509_certificate((directory / "cert.pem").read_bytes())
    except (OSError, ValueError) as exc:
        if (directory / "cert.pem").exists():
            findings.append(Finding(CHAIN, path, f"cert.pem is unreadable: {exc}"))
        return findings
    if not chain_verifies(cert, id_cert):
        findings.append(Finding(CHAIN, path, "certificate does not verify to the identity CA"))
    cn = cert.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
    if not cn or cn[0].value != path:
        findings.append(Finding(CHAIN, path, "certificate subject does not name the enclave"))
    if now > cert.not_valid_after_utc:
        findings.append(Finding(EXPIRED, path, f"certificate expired {cert.not_valid_after_utc:%Y-%m-%d}"))
    key_file = directory / "key.pem"
    if key_file.exists():
        findings += _mode_findings(key_file, f"{path} key.pem")
        try:
            key = serialization.load_pem_private_key(key_file.read_bytes(), password=None)
        except (ValueError, TypeError) as exc:
            findings.append(Finding(CHAIN, path, f"key.pem is unreadable: {exc}"))
        else:
            if key.public_key().public_numbers() != cert.public_key().public_numbers():
                findings.append(Finding(CHAIN, path, "key.pem does not match cert.pem"))

    gov = _check_signed(directory / "governance.p7s", perm_cert, path, findings)
    if gov is not None:
        _check_governance(gov, path, findings)
    signed = _check_signed(directory / "permissions.p7s", perm_cert, path, findings)
    if signed is None:
        return findings
    xml_file = directory / "permissions.xml"
    if xml_file.exists() and xml_file.read_bytes() != signed:
        findings.append(Finding(SIGNATURE, path, "permissions.xml differs from the signed copy"))
    try:
        doc = parse_permissions(signed)
    except SchemaViolation as exc:
        findings.append(Finding(VALIDITY, path, f"unreadable permissions: {exc}"))
        return findings
    if now > doc.not_after:
        findings.append(Finding(EXPIRED, path, f"permissions expired {doc.not_after:%Y-%m-%dT%H:%M:%S}"))
    elif now < doc.not_before:
        findings.append(Finding(VALIDITY, path, "permissions are not yet valid"))
    if doc.not_after > cert.not_valid_after_utc:
        findings.append(Finding(VALIDITY, path, "permissions outlive the enclave certificate"))
    if doc.subject_name != cert.subject.rfc4514_string():
        findings.append(Finding(VALIDITY, path, "permissions subject does not match the certificate"))
    return findings
