"""Certificate-chain validation, claim signatures and hard-binding hashes.

Everything here is local: the trust store, pin list and revocation list
are read from files and never refreshed over the network.
"""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import cbor2
from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.exceptions import UnsupportedAlgorithm as CryptoUnsupported
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import encode_dss_signature
from cryptography.x509.oid import ExtendedKeyUsageOID, ObjectIdentifier

from .container import ImageBytes
from .errors import RangeOutOfBounds, UnsupportedAlgorithm

# What cryptography raises on damaged DER; not all of it is ValueError.
_DER_ERRORS = (ValueError, KeyError, TypeError, x509.InvalidVersion, x509.DuplicateExtension, CryptoUnsupported)

log = logging.getLogger(__name__)

DOCUMENT_SIGNING = ObjectIdentifier("1.3.6.1.5.5.7.3.36")
CONTENT_SIGNING_USAGES = {DOCUMENT_SIGNING, ExtendedKeyUsageOID.EMAIL_PROTECTION}
SUPPORTED_ALGORITHMS = ("ES256", "RS256")
HASH_CHUNK = 1 << 20


class ChainStatus(enum.Enum):
    TRUSTED = "trusted"
    UNTRUSTED = "untrusted"
    EXPIRED = "expired"
    REVOKED = "revoked"
    PIN_MISMATCH = "pin_mismatch"
    MALFORMED = "malformed"


# Most severe first.
_PRECEDENCE = (ChainStatus.MALFORMED, ChainStatus.REVOKED, ChainStatus.EXPIRED,
               ChainStatus.PIN_MISMATCH, ChainStatus.UNTRUSTED)


@dataclass(frozen=True)
class ChainResult:
    status: ChainStatus
    leaf_subject: str
    chain_length: int
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrustStore:
    roots: tuple[x509.Certificate, ...] = ()
    pinned_spki_digests: frozenset[bytes] = frozenset()
    revoked_serials: frozenset[tuple[bytes, int]] = frozenset()

    @property
    def root_ders(self) -> set[bytes]:
        return {r.public_bytes(serialization.Encoding.DER) for r in self.roots}


def issuer_name_hash(cert: x509.Certificate) -> bytes:
    return hashlib.sha256(cert.issuer.public_bytes()).digest()


def spki_digest(cert: x509.Certificate) -> bytes:
    spki = cert.public_key().public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
    return hashlib.sha256(spki).digest()


def _lines(path: Path):
    for line in Path(path).read_text("utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def load_pins(path) -> frozenset[bytes]:
    pins = set()
    for line in _lines(path):
        digest = bytes.fromhex(line)
        if len(digest) != 32:
            raise ValueError(f"pin {line!r} is not a SHA-256 digest")
        pins.add(digest)
    return frozenset(pins)


def load_revocations(path) -> frozenset[tuple[bytes, int]]:
    """Parse ``issuerhash:serial`` hex pairs, one per line."""
    out = set()
    for line in _lines(path):
        issuer, sep, serial = line.partition(":")
        if not sep:
            raise ValueError(f"revocation entry {line!r} lacks ':'")
        out.add((bytes.fromhex(issuer), int(serial, 16)))
    return frozenset(out)


def load_trust_store(pem_paths=(), pins_path=None, crl_path=None) -> TrustStore:
    roots: list[x509.Certificate] = []
    for p in pem_paths:
        roots.extend(x509.load_pem_x509_certificates(Path(p).read_bytes()))
    store = TrustStore(
        roots=tuple(roots),
        pinned_spki_digests=load_pins(pins_path) if pins_path else frozenset(),
        revoked_serials=load_revocations(crl_path) if crl_path else frozenset(),
    )
    if not store.roots:
        log.warning("trust store is empty: every certificate chain will be untrusted")
    return store


def _issued_by(child: x509.Certificate, parent: x509.Certificate) -> bool:
    try:
        child.verify_directly_issued_by(parent)
    except (InvalidSignature, *_DER_ERRORS):
        return False
    return True


def _is_ca(cert: x509.Certificate) -> bool:
    try:
        return cert.extensions.get_extension_for_class(x509.BasicConstraints).value.ca
    except x509.ExtensionNotFound:
        return False


def _content_signing_leaf(cert: x509.Certificate) -> bool:
    try:
        eku = cert.extensions.get_extension_for_class(x509.ExtendedKeyUsage).value
    except x509.ExtensionNotFound:
        return False
    if not CONTENT_SIGNING_USAGES & set(eku):
        return False
    try:
        ku = cert.extensions.get_extension_for_class(x509.KeyUsage).value
    except x509.ExtensionNotFound:
        return True
    return ku.digital_signature


def verify_chain(chain: list[bytes], store: TrustStore, now: datetime) -> ChainResult:
    """Validate a leaf-first DER chain against the local trust store at ``now``."""
    try:
        certs = [x509.load_der_x509_certificate(der) for der in chain]
        if not certs:
            raise ValueError("empty chain")
        for c in certs:
            # fields decode lazily; surface DER damage here, not mid-validation
            c.subject, c.issuer, c.not_valid_before_utc, c.not_valid_after_utc, c.extensions, c.public_key()
        leaf_subject = certs[0].subject.rfc4514_string()
    except _DER_ERRORS as exc:
        return ChainResult(ChainStatus.MALFORMED, "", len(chain), (f"undecodable certificate: {exc}",))

    defects: set[ChainStatus] = set()
    notes: list[str] = []

    def flag(status: ChainStatus, note: str) -> None:
        defects.add(status)
        notes.append(note)

    for child, parent in zip(certs, certs[1:]):
        if not _issued_by(child, parent):
            flag(ChainStatus.UNTRUSTED, f"{child.subject.rfc4514_string()} is not signed by the next certificate")
        elif not _is_ca(parent):
            flag(ChainStatus.UNTRUSTED, f"{parent.subject.rfc4514_string()} is not a CA")

    path = list(certs)
    last = certs[-1]
    root_ders = store.root_ders
    anchored = last.public_bytes(serialization.Encoding.DER) in root_ders
    if not anchored:
        for root in store.roots:
            if _issued_by(last, root):
                path.append(root)
                anchored = True
                break
    if not anchored:
        flag(ChainStatus.UNTRUSTED, "chain does not lead to a root in the local trust store")

    for c in path:
        if now < c.not_valid_before_utc:
            flag(ChainStatus.EXPIRED, f"{c.subject.rfc4514_string()} is not yet valid")
        elif now > c.not_valid_after_utc:
            flag(ChainStatus.EXPIRED, f"{c.subject.rfc4514_string()} expired {c.not_valid_after_utc.isoformat()}")
        if (issuer_name_hash(c), c.serial_number) in store.revoked_serials:
            flag(ChainStatus.REVOKED, f"{c.subject.rfc4514_string()} serial {c.serial_number:x} is revoked")

    if store.pinned_spki_digests and spki_digest(certs[0]) not in store.pinned_spki_digests:
        flag(ChainStatus.PIN_MISMATCH, "leaf public key is not in the pin list")
    if not _content_signing_leaf(certs[0]):
        flag(ChainStatus.UNTRUSTED, "leaf lacks the content-signing extended key usage")

    for status in _PRECEDENCE:
        if status in defects:
            return ChainResult(status, leaf_subject, len(certs), tuple(notes))
    return ChainResult(ChainStatus.TRUSTED, leaf_subject, len(certs))


# -- claim signatures ---------------------------------------------------------------


def sig_structure(protected: bytes, payload: bytes) -> bytes:
    """COSE Sig_structure for a Sign1 message with a detached payload."""
    return cbor2.dumps(["Signature1", protected, b"", payload])


def verify_claim_signature(envelope, canonical_claim: bytes) -> bool:
    if envelope.algorithm not in SUPPORTED_ALGORITHMS:
        raise UnsupportedAlgorithm(f"signature algorithm {envelope.algorithm!r} is not supported")
    try:
        key = x509.load_der_x509_certificate(envelope.cert_chain[0]).public_key()
    except (IndexError, *_DER_ERRORS):
        return False
    message = sig_structure(envelope.protected, canonical_claim)
    sig = envelope.signature_bytes
    try:
        if envelope.algorithm == "ES256":
            if not isinstance(key, ec.EllipticCurvePublicKey) or key.curve.name != "secp256r1":
                return False
            if len(sig) != 64:
                return False
            der = encode_dss_signature(int.from_bytes(sig[:32], "big"), int.from_bytes(sig[32:], "big"))
            key.verify(der, message, ec.ECDSA(hashes.SHA256()))
        else:
            if not isinstance(key, rsa.RSAPublicKey):
                return False
            key.verify(sig, message, padding.PKCS1v15(), hashes.SHA256())
    except InvalidSignature:
        return False
    return True


# -- hard binding -------------------------------------------------------------------


def normalize_exclusions(exclusions, size: int) -> list[tuple[int, int]]:
    """Sort and merge exclusion ranges; reject any that leave [0, size]."""
    spans = []
    for offset, length in exclusions:
        if offset < 0 or length < 0 or offset + length > size:
            raise RangeOutOfBounds(f"exclusion ({offset}, {length}) outside file of {size} bytes")
        if length:
            spans.append((offset, offset + length))
    spans.sort()
    merged: list[list[int]] = []
    for start, end in spans:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e - s) for s, e in merged]


def compute_content_hash(image: ImageBytes, exclusions=()) -> bytes:
    data = memoryview(image.data)
    h = hashlib.sha256()
    pos = 0
    for offset, length in normalize_exclusions(exclusions, len(data)) + [(len(data), 0)]:
        for i in range(pos, offset, HASH_CHUNK):
            h.update(data[i : min(offset, i + HASH_CHUNK)])
        pos = offset + length
    return h.digest()


class BindingResult(enum.Enum):
    MATCH = "match"
    MISMATCH = "mismatch"


@dataclass(frozen=True)
class BindingCheck:
    result: BindingResult
    computed: bytes | None = None
    note: str | None = field(default=None)


def verify_hard_binding(binding, image: ImageBytes) -> BindingCheck:
    try:
        digest = compute_content_hash(image, binding.exclusions)
    except RangeOutOfBounds as exc:
        return BindingCheck(BindingResult.MISMATCH, None, f"binding cannot apply to this file: {exc}")
    if digest == binding.expected_digest:
        return BindingCheck(BindingResult.MATCH, digest)
    return BindingCheck(BindingResult.MISMATCH, digest, "content hash differs from the signed hard binding")
