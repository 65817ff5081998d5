"""Detached S/MIME signatures over security documents.

Signing uses ``cryptography``; it has no public CMS verifier, so
verification parses the signature with ``asn1crypto`` and checks it with the
CA's public key. The check is strict: the envelope and the CMS structure
must be exactly what :func:`sign_detached` would emit for that content and
signer, so any byte-level change is rejected.

Text content is signed in canonical form (CRLF line ends) as MIME requires,
which keeps the envelopes verifiable with ``openssl smime -verify``.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import re

from asn1crypto import algos, cms, core
from asn1crypto import x509 as asn1_x509
from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.serialization import pkcs7

from graphguard.errors import KeyMissing, SignatureInvalid

_HEADER = (
    'MIME-Version: 1.0\n'
    'Content-Type: multipart/signed; protocol="application/x-pkcs7-signature"; '
    'micalg="sha-256"; boundary="{b}"\n'
    '\n'
    'This is an S/MIME signed message\n'
    '\n'
    '--{b}\n'
)
_SIG_PART = (
    '\n--{b}\n'
    'Content-Type: application/x-pkcs7-signature; name="smime.p7s"\n'
    'Content-Transfer-Encoding: base64\n'
    'Content-Disposition: attachment; filename="smime.p7s"\n'
    '\n'
)
_BOUNDARY_RE = re.compile(rb'boundary="(----[0-9A-F]{32})"')

_SHA256 = {"algorithm": "sha256", "parameters": core.Null()}


def canonical(content: bytes) -> bytes:
    """MIME canonical text form: every line ends in CRLF."""
    return re.sub(rb"\r?\n", b"\r\n", content)


def _boundary(content: bytes) -> str:
    return "----" + hashlib.sha256(content).hexdigest()[:32].upper()


def _render(content: bytes, der: bytes) -> bytes:
    b = _boundary(content)
    encoded = base64.encodebytes(der)
    return (_HEADER.format(b=b).encode() + content + _SIG_PART.format(b=b).encode()
            + encoded + f"\n--{b}--\n".encode())


def sign_detached(content: bytes, cert: x509.Certificate, key) -> bytes:
    """Return an S/MIME multipart/signed envelope carrying ``content``."""
    if key is None:
        raise KeyMissing("signing requires the CA private key")
    if _boundary(content).encode() in content:
        raise ValueError("content contains its own MIME boundary")
    der = (pkcs7.PKCS7SignatureBuilder()
           .set_data(canonical(content))
           .add_signer(cert, key, hashes.SHA256())
           .sign(serialization.Encoding.DER,
                 [pkcs7.PKCS7Options.DetachedSignature, pkcs7.PKCS7Options.Binary]))
    return _render(content, der)


def _split(envelope: bytes) -> tuple[bytes, bytes]:
    m = _BOUNDARY_RE.search(envelope)
    if m is None:
        raise SignatureInvalid("not a multipart/signed envelope")
    b = m.group(1).decode()
    head = _HEADER.format(b=b).encode()
    if not envelope.startswith(head):
        raise SignatureInvalid("malformed envelope header")
    sig_part = _SIG_PART.format(b=b).encode()
    body = envelope[len(head):]
    cut = body.find(sig_part)
    if cut < 0:
        raise SignatureInvalid("signature part missing")
    content = body[:cut]
    tail = body[cut + len(sig_part):]
    trailer = f"\n--{b}--\n".encode()
    if not tail.endswith(trailer):
        raise SignatureInvalid("envelope not terminated")
    try:
        der = base64.b64decode(tail[:-len(trailer)], validate=False)
    except ValueError as exc:
        raise SignatureInvalid(f"bad base64: {exc}") from None
    if _render(content, der) != envelope:
        raise SignatureInvalid("envelope is not in canonical form")
    return content, der


def _signature_algorithm(public_key):
    if isinstance(public_key, ec.EllipticCurvePublicKey):
        return {"algorithm": "sha256_ecdsa"}
    if isinstance(public_key, rsa.RSAPublicKey):
        return {"algorithm": "rsassa_pkcs1v15", "parameters": core.Null()}
    raise SignatureInvalid(f"unsupported CA key type {type(public_key).__name__}")


def _expected_cms(ca_cert: x509.Certificate, signed_attrs, signature) -> bytes:
    """The exact CMS encoding a signature by ``ca_cert`` must have."""
    cert = asn1_x509.Certificate.load(ca_cert.public_bytes(serialization.Encoding.DER))
    signer = cms.SignerInfo({
        "version": "v1",
        "sid": cms.SignerIdentifier({"issuer_and_serial_number": cms.IssuerAndSerialNumber({
            "issuer": cert.issuer, "serial_number": cert.serial_number})}),
        "digest_algorithm": algos.DigestAlgorithm(_SHA256),
        "signed_attrs": signed_attrs,
        "signature_algorithm": algos.SignedDigestAlgorithm(_signature_algorithm(ca_cert.public_key())),
        "signature": signature,
    })
    signed_data = cms.SignedData({
        "version": "v1",
        "digest_algorithms": [algos.DigestAlgorithm(_SHA256)],
        "encap_content_info": {"content_type": "data"},
        "certificates": [cert],
        "signer_infos": [signer],
    })
    return cms.ContentInfo({"content_type": "signed_data", "content": signed_data}).dump()


def open_signed(envelope: bytes, ca_cert: x509.Certificate) -> bytes:
    """Verify ``envelope`` against ``ca_cert`` and return the signed content.

    Raises SignatureInvalid on any mismatch.
    """
    content, der = _split(envelope)
    try:
        info = cms.ContentInfo.load(der, strict=True)
        signer = info["content"]["signer_infos"][0]
        signed_attrs = signer["signed_attrs"]
        signature = signer["signature"].native
        expected = _expected_cms(ca_cert, signed_attrs.copy(), signature)
        attrs = {a["type"].native: a["values"] for a in signed_attrs}
        digest = attrs["message_digest"][0].native
        content_type = attrs["content_type"][0].native
    except (ValueError, TypeError, KeyError, IndexError) as exc:
        raise SignatureInvalid(f"malformed signature: {exc}") from None
    if not hmac.compare_digest(expected, der):
        raise SignatureInvalid("signature structure does not match the expected signer")
    if content_type != "data":
        raise SignatureInvalid("signed content type is not data")
    if not hmac.compare_digest(digest, hashlib.sha256(canonical(content)).digest()):
        raise SignatureInvalid("content digest mismatch")
    # the signature covers the DER SET OF encoding, not the [0] IMPLICIT tag
    signed = b"\x31" + signed_attrs.dump()[1:]
    public_key = ca_cert.public_key()
    try:
        if isinstance(public_key, ec.EllipticCurvePublicKey):
            public_key.verify(signature, signed, ec.ECDSA(hashes.SHA256()))
        else:
            public_key.verify(signature, signed, padding.PKCS1v15(), hashes.SHA256())
    except InvalidSignature:
        raise SignatureInvalid("signature does not verify") from None
    return content


def verify_detached(envelope: bytes, ca_cert: x509.Certificate) -> bool:
    try:
        open_signed(envelope, ca_cert)
    except SignatureInvalid:
        return False
    return True
