"""Signed fixture generation for tests, the ``fixture`` and ``bench`` commands.

Nothing here is used on the verification path. Keys are generated on
demand; passing a ``seed`` derives them deterministically so a corpus can
be regenerated byte for byte.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import uuid
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import cbor2
import numpy as np
from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import decode_dss_signature
from cryptography.x509.oid import NameOID
from PIL import Image

from . import container as ct
from .container import ImageBytes, ImageFormat
from .errors import UnsupportedFormat
from .jumbf import parse_box_tree, serialize_box_tree
from .manifest import (ASSERTION_URL_PREFIX, COSE_HEADER_ALG, COSE_HEADER_X5CHAIN, COSE_SIGN1_TAG,
                       HASH_DATA_LABEL, SIGNATURE_URL, assertion_box, encode_cbor, manifest_box,
                       store_box)
from .trust import DOCUMENT_SIGNING, compute_content_hash, issuer_name_hash, sig_structure

CAMERA_GENERATOR = "Acme Camera Firmware 1.0"
FIREFLY_GENERATOR = "Adobe Firefly 2.0"
CREATED_ACTIONS = {"actions": [{"action": "c2pa.created"}]}
SD_PARAMETERS = ("a lighthouse at dusk, oil painting\nNegative prompt: blurry\n"
                 "Steps: 28, Sampler: DPM++ 2M Karras, CFG scale: 7, Seed: 1234, Size: 64x48, "
                 "Model: sd_xl_base_1.0")


@dataclass
class SigningIdentity:
    private_key: object
    cert_chain: list[bytes]

    @property
    def algorithm(self) -> str:
        return "ES256" if isinstance(self.private_key, ec.EllipticCurvePrivateKey) else "RS256"

    @property
    def certificate(self) -> x509.Certificate:
        return x509.load_der_x509_certificate(self.cert_chain[0])

    def sign(self, message: bytes) -> bytes:
        if self.algorithm == "ES256":
            der = self.private_key.sign(message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
            r, s = decode_dss_signature(der)
            return r.to_bytes(32, "big") + s.to_bytes(32, "big")
        return self.private_key.sign(message, padding.PKCS1v15(), hashes.SHA256())


def _seeded_int(seed: str, label: str, bits: int = 159) -> int:
    digest = hashlib.sha256(f"{seed}/{label}".encode()).digest()
    return int.from_bytes(digest, "big") >> (256 - bits) | 1


def ec_key(seed: str | None = None, label: str = "key") -> ec.EllipticCurvePrivateKey:
    if seed is None:
        return ec.generate_private_key(ec.SECP256R1())
    # P-256 group order is just below 2^256; 255-bit scalars stay in range.
    return ec.derive_private_key(_seeded_int(seed, label, 255), ec.SECP256R1())


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.ORGANIZATION_NAME, "Origin Lens Fixtures"),
                      x509.NameAttribute(NameOID.COMMON_NAME, cn)])


def _sign_cert(builder: x509.CertificateBuilder, key) -> x509.Certificate:
    if isinstance(key, ec.EllipticCurvePrivateKey):
        return builder.sign(key, hashes.SHA256(), ecdsa_deterministic=True)
    return builder.sign(key, hashes.SHA256())


class TestCA:
    """A self-signed root that issues content-signing leaf certificates."""

    __test__ = False  # keep pytest from collecting this class

    def __init__(self, now: datetime, validity_days: int = 365, seed: str | None = None,
                 name: str = "Origin Lens Test Root"):
        if validity_days < 1:
            raise ValueError("validity_days must be >= 1")
        self.now = now
        self.validity_days = validity_days
        self.seed = seed
        self.name = name
        self.key = ec_key(seed, f"{name}/root")
        self._issued = 0
        pub = self.key.public_key()
        builder = (
            x509.CertificateBuilder()
            .subject_name(_name(name))
            .issuer_name(_name(name))
            .public_key(pub)
            .serial_number(self._serial("root"))
            .not_valid_before(now - timedelta(days=1))
            .not_valid_after(now + timedelta(days=validity_days))
            .add_extension(x509.BasicConstraints(ca=True, path_length=1), critical=True)
            .add_extension(x509.KeyUsage(False, False, False, False, False, True, True, False, False),
                           critical=True)
            .add_extension(x509.SubjectKeyIdentifier.from_public_key(pub), critical=False)
        )
        self.certificate = _sign_cert(builder, self.key)
        self.root = SigningIdentity(self.key, [self.certificate.public_bytes(serialization.Encoding.DER)])

    def _serial(self, label: str) -> int:
        if self.seed is None:
            return x509.random_serial_number()
        return _seeded_int(self.seed, f"{self.name}/serial/{label}")

    @property
    def root_pem(self) -> bytes:
        return self.certificate.public_bytes(serialization.Encoding.PEM)

    def issue_leaf(self, common_name: str = "Fixture Signer", *, validity_days: int | None = None,
                   not_before: datetime | None = None, not_after: datetime | None = None,
                   key=None, include_root: bool = False) -> SigningIdentity:
        self._issued += 1
        if key is None:
            key = ec_key(self.seed, f"{self.name}/leaf/{common_name}/{self._issued}")
        days = validity_days if validity_days is not None else self.validity_days
        nb = not_before or self.now - timedelta(hours=1)
        na = not_after or self.now + timedelta(days=days)
        pub = key.public_key()
        builder = (
            x509.CertificateBuilder()
            .subject_name(_name(common_name))
            .issuer_name(self.certificate.subject)
            .public_key(pub)
            .serial_number(self._serial(f"leaf/{common_name}/{self._issued}"))
            .not_valid_before(nb)
            .not_valid_after(na)
            .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
            .add_extension(x509.KeyUsage(True, False, False, False, False, False, False, False, False),
                           critical=True)
            .add_extension(x509.ExtendedKeyUsage([DOCUMENT_SIGNING]), critical=False)
            .add_extension(x509.SubjectKeyIdentifier.from_public_key(pub), critical=False)
            .add_extension(x509.AuthorityKeyIdentifier.from_issuer_public_key(self.key.public_key()),
                           critical=False)
        )
        cert = _sign_cert(builder, self.key)
        chain = [cert.public_bytes(serialization.Encoding.DER)]
        if include_root:
            chain += self.root.cert_chain
        return SigningIdentity(key, chain)


def make_test_ca(now: datetime, validity_days: int = 365, seed: str | None = None, **kw) -> TestCA:
    return TestCA(now, validity_days, seed, **kw)


def rsa_identity(ca: TestCA, common_name: str = "RSA Fixture Signer") -> SigningIdentity:
    return ca.issue_leaf(common_name, key=rsa.generate_private_key(public_exponent=65537, key_size=2048))


def revocation_line(identity: SigningIdentity) -> str:
    cert = identity.certificate
    return f"{issuer_name_hash(cert).hex()}:{cert.serial_number:x}"


# -- base images ------------------------------------------------------------------------


def _pixels(width: int, height: int) -> Image.Image:
    y, x = np.mgrid[0:height, 0:width]
    rgb = np.stack([(x * 255 // max(width - 1, 1)), (y * 255 // max(height - 1, 1)),
                    ((x + y) * 7) % 256], axis=-1).astype(np.uint8)
    return Image.fromarray(rgb, "RGB")


def _ifd(entries, start: int, order: str, next_ifd: int = 0) -> bytes:
    """Serialize one IFD at file offset ``start`` with its value area after it."""
    entries = sorted(entries)
    data_at = start + 2 + 12 * len(entries) + 4
    table, data = bytearray(struct.pack(order + "H", len(entries))), bytearray()
    for tag, ftype, count, raw in entries:
        if len(raw) <= 4:
            field = raw.ljust(4, b"\x00")
        else:
            field = struct.pack(order + "I", data_at + len(data))
            data += raw + (b"\x00" if len(raw) % 2 else b"")
        table += struct.pack(order + "HHI", tag, ftype, count) + field
    table += struct.pack(order + "I", next_ifd)
    return bytes(table + data)


def build_exif(ifd0: dict[int, str] | None = None, exif: dict[int, bytes | str] | None = None,
               byte_order: str = "II") -> bytes:
    """APP1 payload with ASCII tags in IFD0 and an optional Exif sub-IFD.

    Sub-IFD values given as bytes are written as UNDEFINED (e.g. a
    UserComment with its 8-byte character-code prefix)."""
    order = "<" if byte_order == "II" else ">"

    def ascii_entry(tag, text):
        raw = text.encode("utf-8") + b"\x00"
        return (tag, 2, len(raw), raw)

    entries0 = [ascii_entry(t, v) for t, v in (ifd0 or {}).items()]
    sub = []
    for t, v in (exif or {}).items():
        sub.append((t, 7, len(v), v) if isinstance(v, bytes) else ascii_entry(t, v))
    if sub:
        entries0.append((0x8769, 4, 1, b"\x00\x00\x00\x00"))
    ifd0_bytes = _ifd(entries0, 8, order)
    if sub:
        sub_at = 8 + len(ifd0_bytes)
        entries0[-1] = (0x8769, 4, 1, struct.pack(order + "I", sub_at))
        ifd0_bytes = _ifd(entries0, 8, order)
        tiff_tail = ifd0_bytes + _ifd(sub, sub_at, order)
    else:
        tiff_tail = ifd0_bytes
    header = (b"II" if order == "<" else b"MM") + struct.pack(order + "HI", 42, 8)
    return b"Exif\x00\x00" + header + tiff_tail


def build_iptc(datasets: dict[tuple[int, int], str]) -> bytes:
    """APP13 payload: Photoshop IRB holding one IPTC-IIM resource."""
    iim = b"".join(b"\x1c" + bytes(k) + struct.pack(">H", len(v.encode())) + v.encode()
                   for k, v in datasets.items())
    res = b"8BIM" + struct.pack(">H", 0x0404) + b"\x00\x00" + struct.pack(">I", len(iim)) + iim
    if len(iim) % 2:
        res += b"\x00"
    return b"Photoshop 3.0\x00" + res


def plain_jpeg(width: int = 64, height: int = 48, exif: bytes | None = None,
               iptc: bytes | None = None, quality: int = 90) -> ImageBytes:
    buf = io.BytesIO()
    _pixels(width, height).save(buf, "JPEG", quality=quality)
    data = buf.getvalue()
    extra = b""
    if exif is not None:
        extra += ct.make_segment(ct.APP1, exif)
    if iptc is not None:
        extra += ct.make_segment(ct.APP13, iptc)
    if extra:
        data = ct.splice(data, ct.jpeg_insertion_offset(data), extra)
    return ImageBytes(data)


def plain_png(width: int = 64, height: int = 48, text: dict[str, str] | None = None) -> ImageBytes:
    buf = io.BytesIO()
    _pixels(width, height).save(buf, "PNG")
    data = buf.getvalue()
    if text:
        chunks = b"".join(ct.make_chunk("tEXt", k.encode("latin-1") + b"\x00" + v.encode("latin-1"))
                          for k, v in text.items())
        data = ct.splice(data, ct.png_insertion_offset(data), chunks)
    return ImageBytes(data)


# -- signing ------------------------------------------------------------------------


def _carrier(fmt: ImageFormat, jumbf: bytes) -> bytes:
    if fmt is ImageFormat.JPEG:
        return b"".join(ct.app11_segments(jumbf))
    return ct.make_chunk(ct.PROVENANCE_CHUNK, jumbf)


def _existing_store(image: ImageBytes):
    carrier = ct.extract_jumbf(image)
    if carrier is None:
        return []
    root = parse_box_tree(carrier.data)
    return [c for c in root.children if c.is_superbox]


def _cose_sign1(identity: SigningIdentity, claim_bytes: bytes) -> bytes:
    alg = -7 if identity.algorithm == "ES256" else -257
    protected = encode_cbor({COSE_HEADER_ALG: alg})
    signature = identity.sign(sig_structure(protected, claim_bytes))
    return cbor2.dumps(cbor2.CBORTag(COSE_SIGN1_TAG, [
        protected, {COSE_HEADER_X5CHAIN: list(identity.cert_chain)}, None, signature]))


def _timestamp(now: datetime) -> str:
    return now.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def sign_and_embed(image: ImageBytes, identity: SigningIdentity, assertions=None,
                   claim_generator: str = CAMERA_GENERATOR, now: datetime | None = None,
                   chain_ingredient: bool = True) -> ImageBytes:
    """Attach a signed manifest whose hard binding covers the output file.

    ``assertions`` is a list of ``(label, content)`` or
    ``(label, content, kind)`` tuples. If ``image`` already carries a
    manifest store, its manifests are kept and (with ``chain_ingredient``)
    the previous active manifest becomes this manifest's ingredient.
    """
    if not isinstance(image, ImageBytes):
        image = ImageBytes(image)
    if image.format is ImageFormat.UNKNOWN:
        raise UnsupportedFormat("fixture signing needs a JPEG or PNG")
    now = now or datetime.now(timezone.utc)
    assertions = list(assertions) if assertions is not None else [("c2pa.actions", CREATED_ACTIONS)]

    previous = _existing_store(image)
    clean = ct.strip_provenance(image)
    if image.format is ImageFormat.JPEG:
        offset = ct.jpeg_insertion_offset(clean)
    else:
        offset = ct.png_insertion_offset(clean)

    ingredients = []
    if previous and chain_ingredient:
        parent = previous[-1]
        ingredients.append({"url": f"self#jumbf=c2pa/{parent.label}",
                            "hash": hashlib.sha256(serialize_box_tree(parent)).digest()})
    label_seed = f"{claim_generator}|{_timestamp(now)}|{hashlib.sha256(clean).hexdigest()}|{len(previous)}"
    label = f"urn:uuid:{uuid.UUID(bytes=hashlib.sha256(label_seed.encode()).digest()[:16], version=4)}"
    user_boxes = [assertion_box(*a) for a in assertions]

    def build(length: int, digest: bytes) -> bytes:
        binding = assertion_box(HASH_DATA_LABEL, {
            "exclusions": [{"start": offset, "length": length}],
            "name": "jumbf manifest", "alg": "sha256", "hash": digest,
        })
        boxes = user_boxes + [binding]
        claim = {
            "claim_generator": claim_generator,
            "instanceID": f"xmp:iid:{label[9:]}",
            "signature": SIGNATURE_URL,
            "assertions": [{"url": ASSERTION_URL_PREFIX + b.label, "alg": "sha256",
                            "hash": hashlib.sha256(b.raw).digest()} for b in boxes],
            "ingredients": ingredients,
            "created_at": _timestamp(now),
            "alg": "sha256",
        }
        claim_bytes = encode_cbor(claim)
        mbox = manifest_box(label, boxes, claim_bytes, _cose_sign1(identity, claim_bytes))
        return _carrier(image.format, serialize_box_tree(store_box(previous + [mbox])))

    # Pass 1: find the carrier size with a placeholder digest (sizes converge
    # because CBOR integer width never shrinks as the length grows).
    length = 0
    for _ in range(8):
        carrier = build(length, bytes(32))
        if len(carrier) == length:
            break
        length = len(carrier)
    else:
        raise RuntimeError("carrier size did not converge")

    # Pass 2: hash the file around the reserved carrier, then fill the digest in.
    draft = ct.splice(clean, offset, carrier)
    digest = compute_content_hash(ImageBytes(draft), [(offset, length)])
    final = build(length, digest)
    if len(final) != length:
        raise RuntimeError("final carrier size differs from reservation")
    return ImageBytes(ct.splice(clean, offset, final))


def make_ingredient_chain(base: ImageBytes, steps: int, identity: SigningIdentity,
                          now: datetime | None = None) -> ImageBytes:
    """Sign ``steps`` times, each manifest taking the previous as ingredient."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    now = now or datetime.now(timezone.utc)
    image = base
    for i in range(steps):
        action = "c2pa.created" if i == 0 else "c2pa.edited"
        image = sign_and_embed(image, identity, [("c2pa.actions", {"actions": [{"action": action}]})],
                               claim_generator=f"Origin Lens Fixture Editor step {i + 1}",
                               now=now + timedelta(minutes=i))
    return image


def flip_byte(image: ImageBytes, offset: int, mask: int = 0x01) -> ImageBytes:
    data = bytearray(image.data)
    data[offset] ^= mask
    return ImageBytes(bytes(data))


def content_offset(image: ImageBytes) -> int:
    """An offset well inside the encoded pixel data (JPEG scan / PNG IDAT)."""
    if image.format is ImageFormat.JPEG:
        sos = image.data.index(b"\xff\xda")
        return (sos + len(image.data)) // 2
    for chunk in ct.scan_png_chunks(image):
        if chunk.type_code == "IDAT":
            start, length = chunk.total_range
            return start + 8 + (length - 12) // 2
    raise ValueError("no IDAT chunk")


# -- corpus -------------------------------------------------------------------------------

CORPUS_EXPECTED = {
    "clean": "verified",
    "ai_claim": "ai_generated",
    "tampered": "invalid",
    "stripped": "no_data",
    "expired": "warning",
    "untrusted": "invalid",
    "revoked": "invalid",
}


def build_corpus(now: datetime, seed: str = "origin-lens-fixtures") -> dict:
    """Build every corpus variant in memory.

    Returns ``{"files": {name: bytes}, "expected": {name: status},
    "roots_pem": bytes, "crl": str}``.
    """
    ca = make_test_ca(now, 3650, seed=seed)
    rogue = make_test_ca(now, 3650, seed=seed, name="Rogue Root")
    signer = ca.issue_leaf("Fixture Camera")
    expired = ca.issue_leaf("Expired Signer", not_before=now - timedelta(days=30),
                            not_after=now - timedelta(days=1))
    revoked = ca.issue_leaf("Revoked Signer")
    outsider = rogue.issue_leaf("Rogue Signer")

    files: dict[str, bytes] = {}
    expected: dict[str, str] = {}
    camera_exif = build_exif({0x010F: "Acme", 0x0110: "Fixture Cam", 0x0131: "Acme Firmware 1.0"})
    bases = {"jpg": plain_jpeg(exif=camera_exif), "png": plain_png()}
    for ext, base in bases.items():
        clean = sign_and_embed(base, signer, now=now)
        variants = {
            "clean": clean,
            "ai_claim": sign_and_embed(base, signer, claim_generator=FIREFLY_GENERATOR, now=now),
            "tampered": flip_byte(clean, content_offset(clean)),
            "stripped": ImageBytes(ct.strip_provenance(clean)),
            "expired": sign_and_embed(base, expired, now=now),
            "untrusted": sign_and_embed(base, outsider, now=now),
            "revoked": sign_and_embed(base, revoked, now=now),
        }
        for name, img in variants.items():
            files[f"{name}.{ext}"] = img.data
            expected[f"{name}.{ext}"] = CORPUS_EXPECTED[name]

    files["ai_exif.jpg"] = plain_jpeg(exif=build_exif({0x0131: "Stable Diffusion v1.5"})).data
    expected["ai_exif.jpg"] = "ai_generated"
    files["ai_params.png"] = plain_png(text={"parameters": SD_PARAMETERS}).data
    expected["ai_params.png"] = "ai_generated"
    files["history.jpg"] = make_ingredient_chain(bases["jpg"], 3, signer, now=now).data
    expected["history.jpg"] = "verified"
    return {"files": files, "expected": expected, "roots_pem": ca.root_pem,
            "crl": revocation_line(revoked) + "\n"}


def write_corpus(out_dir, now: datetime, seed: str = "origin-lens-fixtures") -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(exist_ok=True)  # only the leaf directory; a missing parent is an error
    corpus = build_corpus(now, seed)
    for name, data in corpus["files"].items():
        (out / name).write_bytes(data)
    (out / "roots.pem").write_bytes(corpus["roots_pem"])
    (out / "crl.txt").write_text(corpus["crl"])
    index = {"now": _timestamp(now), "seed": seed, "trust_store": "roots.pem", "crl": "crl.txt",
             "expected": corpus["expected"]}
    (out / "corpus.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return corpus["expected"]
