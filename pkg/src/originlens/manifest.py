"""Decoding of the C2PA-subset manifest store carried in a JUMBF tree.

Store layout (all superboxes carry a description box)::

    jumb "c2pa"                      manifest store
      jumb "urn:uuid:..."            one manifest; the last one is active
        jumb "c2pa.assertions"
          jumb "<assertion label>"   -> cbor | json | other content box
        jumb "c2pa.claim"            -> cbor (claim map, signed verbatim)
        jumb "c2pa.signature"        -> cbor (COSE_Sign1, detached payload)
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any

import cbor2

from .errors import ManifestParseError
from .jumbf import Box, c2pa_uuid, leaf, serialize_box_tree, superbox
from .metadata import FieldScope, default_rules

STORE_LABEL = "c2pa"
ASSERTION_STORE_LABEL = "c2pa.assertions"
CLAIM_LABEL = "c2pa.claim"
SIGNATURE_LABEL = "c2pa.signature"
HASH_DATA_LABEL = "c2pa.hash.data"
ACTIONS_LABELS = ("c2pa.actions", "c2pa.actions.v2")

ASSERTION_URL_PREFIX = "self#jumbf=c2pa.assertions/"
SIGNATURE_URL = "self#jumbf=c2pa.signature"
MANIFEST_URL_PREFIXES = ("self#jumbf=c2pa/", "self#jumbf=/c2pa/")

COSE_SIGN1_TAG = 18
COSE_HEADER_ALG = 1
COSE_HEADER_X5CHAIN = 33
COSE_ALGORITHMS = {-7: "ES256", -257: "RS256"}
TRAINED_MEDIA_TOKEN = "trainedalgorithmicmedia"


@dataclass
class Assertion:
    label: str
    content: Any
    raw: bytes = field(repr=False)
    box: Box = field(compare=False, repr=False)

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.raw).digest()


@dataclass
class IngredientRef:
    target: str
    digest: bytes
    internal: bool
    # a same-store reference whose manifest is not in the store
    missing: bool = False


@dataclass
class Claim:
    claim_generator: str
    instance_id: str
    assertion_refs: list[tuple[str, bytes]]
    signature_ref: str
    ingredient_refs: list[IngredientRef]
    created_at: datetime | None = None


@dataclass
class SignatureEnvelope:
    algorithm: str
    cert_chain: list[bytes]
    signature_bytes: bytes
    protected: bytes
    signed_payload: bytes = field(default=b"", repr=False)
    raw: bytes = field(default=b"", repr=False, compare=False)


@dataclass
class HardBinding:
    exclusions: list[tuple[int, int]]
    expected_digest: bytes
    hash_algorithm: str = "sha256"


@dataclass
class Manifest:
    label: str
    claim: Claim
    claim_bytes: bytes = field(repr=False)
    signature: SignatureEnvelope
    assertions: dict[str, Assertion]
    hard_binding: HardBinding | None
    hard_binding_error: str | None = None
    raw: bytes = field(default=b"", repr=False, compare=False)


@dataclass
class ManifestStore:
    manifests: dict[str, Manifest]
    active_label: str

    @property
    def active(self) -> Manifest:
        return self.manifests[self.active_label]


@dataclass
class EditHistoryEntry:
    manifest_label: str
    claim_generator: str
    timestamp: datetime | None = None
    action: str | None = None
    ingredient_digest: bytes | None = None
    cycle_detected: bool = False


# -- decoding -------------------------------------------------------------------


def _loads(data: bytes, what: str):
    try:
        return cbor2.loads(data)
    except Exception as exc:  # cbor2 raises several unrelated types on junk
        raise ManifestParseError(f"undecodable CBOR in {what}: {exc}") from None


def _content_leaf(box: Box, what: str) -> Box:
    kids = [c for c in box.children or () if not c.is_superbox]
    if not kids:
        raise ManifestParseError(f"{what} has no content box")
    return kids[0]


def _decode_assertion(box: Box) -> Assertion:
    content: Any
    kids = [c for c in box.children or () if not c.is_superbox]
    if len(kids) != 1:
        content = box.raw
    else:
        payload = kids[0].payload
        try:
            if kids[0].type_code == "cbor":
                content = cbor2.loads(payload)
            elif kids[0].type_code == "json":
                content = json.loads(payload)
            else:
                content = payload
        except Exception:
            # left opaque; the digest check reports the damage
            content = payload
    return Assertion(box.label, content, box.raw, box)


def _parse_timestamp(value) -> datetime:
    if not isinstance(value, str):
        raise ManifestParseError("created_at is not a text timestamp")
    try:
        ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        raise ManifestParseError(f"bad created_at timestamp {value!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _hashed_ref(entry, what: str) -> tuple[str, bytes]:
    if not isinstance(entry, dict):
        raise ManifestParseError(f"{what} reference is not a map")
    url, digest = entry.get("url"), entry.get("hash")
    if not isinstance(url, str) or not isinstance(digest, bytes):
        raise ManifestParseError(f"{what} reference lacks url/hash")
    return url, digest


def _decode_claim(data: bytes) -> Claim:
    m = _loads(data, "claim")
    if not isinstance(m, dict):
        raise ManifestParseError("claim is not a CBOR map")
    generator, instance = m.get("claim_generator"), m.get("instanceID")
    if not isinstance(generator, str) or not isinstance(instance, str):
        raise ManifestParseError("claim lacks claim_generator/instanceID")
    signature_ref = m.get("signature")
    if not isinstance(signature_ref, str):
        raise ManifestParseError("claim lacks a signature reference")
    raw_refs = m.get("assertions", [])
    if not isinstance(raw_refs, list):
        raise ManifestParseError("claim assertions is not an array")
    refs = []
    for entry in raw_refs:
        url, digest = _hashed_ref(entry, "assertion")
        label = url[len(ASSERTION_URL_PREFIX):] if url.startswith(ASSERTION_URL_PREFIX) else url
        refs.append((label, digest))
    ingredients = []
    raw_ingredients = m.get("ingredients", [])
    if not isinstance(raw_ingredients, list):
        raise ManifestParseError("claim ingredients is not an array")
    for entry in raw_ingredients:
        url, digest = _hashed_ref(entry, "ingredient")
        for prefix in MANIFEST_URL_PREFIXES:
            if url.startswith(prefix):
                ingredients.append(IngredientRef(url[len(prefix):], digest, True))
                break
        else:
            ingredients.append(IngredientRef(url, digest, False))
    created = m.get("created_at")
    return Claim(
        claim_generator=generator,
        instance_id=instance,
        assertion_refs=refs,
        signature_ref=signature_ref,
        ingredient_refs=ingredients,
        created_at=_parse_timestamp(created) if created is not None else None,
    )


def _decode_signature(data: bytes) -> SignatureEnvelope:
    obj = _loads(data, "signature")
    if isinstance(obj, cbor2.CBORTag):
        if obj.tag != COSE_SIGN1_TAG:
            raise ManifestParseError(f"signature uses CBOR tag {obj.tag}, expected COSE_Sign1")
        obj = obj.value
    # cbor2 hands back tuples and frozendicts for tagged content
    if not isinstance(obj, (list, tuple)) or len(obj) != 4:
        raise ManifestParseError("signature is not a 4-element COSE_Sign1 array")
    protected, unprotected, payload, sig = obj
    if not isinstance(protected, bytes) or not isinstance(unprotected, Mapping) or not isinstance(sig, bytes):
        raise ManifestParseError("COSE_Sign1 fields have wrong types")
    if payload is not None:
        raise ManifestParseError("COSE_Sign1 payload must be detached")
    headers = _loads(protected, "protected header") if protected else {}
    if not isinstance(headers, Mapping):
        raise ManifestParseError("protected header is not a map")
    alg = headers.get(COSE_HEADER_ALG)
    algorithm = COSE_ALGORITHMS.get(alg, f"cose-alg({alg})") if isinstance(alg, int) else str(alg)
    chain = headers.get(COSE_HEADER_X5CHAIN, unprotected.get(COSE_HEADER_X5CHAIN))
    if isinstance(chain, bytes):
        chain = [chain]
    if not isinstance(chain, (list, tuple)) or not chain or not all(isinstance(c, bytes) for c in chain):
        raise ManifestParseError("signature carries no x5chain")
    return SignatureEnvelope(algorithm, list(chain), sig, protected, raw=data)


def _decode_hard_binding(assertion: Assertion) -> HardBinding:
    c = assertion.content
    if not isinstance(c, dict):
        raise ManifestParseError("hard-binding assertion is not decodable")
    if c.get("alg", "sha256") != "sha256":
        raise ManifestParseError(f"hard binding uses unsupported hash {c.get('alg')!r}")
    digest = c.get("hash")
    if not isinstance(digest, bytes) or len(digest) != 32:
        raise ManifestParseError("hard binding hash is not a 32-byte value")
    raw = c.get("exclusions") or []
    if not isinstance(raw, (list, tuple)):
        raise ManifestParseError("hard binding exclusions is not an array")
    exclusions = []
    for ex in raw:
        if not isinstance(ex, dict):
            raise ManifestParseError("hard binding exclusion is not a map")
        start, length = ex.get("start"), ex.get("length")
        if not isinstance(start, int) or not isinstance(length, int):
            raise ManifestParseError("hard binding exclusion lacks start/length")
        exclusions.append((start, length))
    return HardBinding(exclusions, digest)


def _parse_manifest(box: Box) -> Manifest:
    if box.label is None:
        raise ManifestParseError("manifest superbox has no label")
    astore = box.child(ASSERTION_STORE_LABEL)
    assertions: dict[str, Assertion] = {}
    if astore is not None:
        for a in astore.children or ():
            if a.is_superbox and a.label is not None:
                assertions[a.label] = _decode_assertion(a)
    claim_box = box.child(CLAIM_LABEL)
    if claim_box is None:
        raise ManifestParseError(f"manifest {box.label!r} has no claim box")
    claim_bytes = _content_leaf(claim_box, "claim box").payload
    claim = _decode_claim(claim_bytes)
    sig_box = box.child(SIGNATURE_LABEL)
    if sig_box is None:
        raise ManifestParseError(f"manifest {box.label!r} has no signature box")
    signature = _decode_signature(_content_leaf(sig_box, "signature box").payload)
    signature.signed_payload = claim_bytes

    binding, binding_error = None, None
    if HASH_DATA_LABEL in assertions:
        try:
            binding = _decode_hard_binding(assertions[HASH_DATA_LABEL])
        except ManifestParseError as exc:
            binding_error = str(exc)
    else:
        binding_error = "no hard-binding assertion"
    return Manifest(box.label, claim, claim_bytes, signature, assertions, binding,
                    binding_error, raw=box.raw)


def parse_manifest_store(root: Box) -> ManifestStore:
    if not root.is_superbox or root.label != STORE_LABEL:
        raise ManifestParseError("root box is not a c2pa manifest store")
    manifests: dict[str, Manifest] = {}
    for child in root.children:
        if not child.is_superbox:
            continue
        m = _parse_manifest(child)
        if m.label in manifests:
            raise ManifestParseError(f"duplicate manifest label {m.label!r}")
        manifests[m.label] = m
    if not manifests:
        raise ManifestParseError("manifest store is empty")
    for m in manifests.values():
        for ref in m.claim.ingredient_refs:
            if ref.internal and ref.target not in manifests:
                ref.internal, ref.missing = False, True
    return ManifestStore(manifests, list(manifests)[-1])


def resolve_assertions(m: Manifest) -> list[tuple[str, bool]]:
    """Check each claimed assertion digest against the stored assertion bytes."""
    results = []
    for label, digest in m.claim.assertion_refs:
        a = m.assertions.get(label)
        results.append((label, a is not None and a.digest == digest))
    return results


def _actions(m: Manifest) -> list[dict]:
    out = []
    for label in ACTIONS_LABELS:
        a = m.assertions.get(label)
        if a is not None and isinstance(a.content, dict) and isinstance(a.content.get("actions"), list):
            out.extend(x for x in a.content["actions"] if isinstance(x, dict))
    return out


def _agent_name(agent) -> str | None:
    if isinstance(agent, str):
        return agent
    if isinstance(agent, dict) and isinstance(agent.get("name"), str):
        return agent["name"]
    return None


def extract_edit_history(store: ManifestStore) -> list[EditHistoryEntry]:
    """Walk the ingredient graph from the active manifest, oldest entry first."""
    entries: list[EditHistoryEntry] = []
    by_label: dict[str, EditHistoryEntry] = {}
    on_path: set[str] = set()

    def visit(label: str) -> None:
        m = store.manifests[label]
        acts = [a.get("action") for a in _actions(m) if isinstance(a.get("action"), str)]
        entry = EditHistoryEntry(
            manifest_label=label,
            claim_generator=m.claim.claim_generator,
            timestamp=m.claim.created_at,
            action=", ".join(acts) or None,
            ingredient_digest=m.claim.ingredient_refs[0].digest if m.claim.ingredient_refs else None,
        )
        by_label[label] = entry
        on_path.add(label)
        for ref in m.claim.ingredient_refs:
            if not ref.internal:
                continue
            if ref.target in on_path:
                entry.cycle_detected = True
            elif ref.target not in by_label:
                visit(ref.target)
        on_path.discard(label)
        entries.append(entry)

    visit(store.active_label)
    return entries


def classify_generative_origin(m: Manifest, rules=None) -> str | None:
    """Name the generator if the manifest declares AI-generated content."""
    for act in _actions(m):
        source = act.get("digitalSourceType")
        if isinstance(source, str) and TRAINED_MEDIA_TOKEN in source.lower():
            name = _agent_name(act.get("softwareAgent"))
            if name:
                return name
            return _match_generator(m.claim.claim_generator, rules) or "Generative AI"
    return _match_generator(m.claim.claim_generator, rules)


def _match_generator(generator: str, rules) -> str | None:
    for rule in rules if rules is not None else default_rules():
        if rule.field_scope is FieldScope.CLAIM_GENERATOR and rule.search(generator):
            return rule.generator_name
    return None


# -- encoding (used by the fixture signer) -------------------------------------------


def encode_cbor(obj) -> bytes:
    return cbor2.dumps(obj, canonical=True)


def assertion_box(label: str, content, kind: str = "cbor") -> Box:
    if kind == "cbor":
        payload = encode_cbor(content)
    elif kind == "json":
        payload = json.dumps(content, sort_keys=True, separators=(",", ":")).encode()
    else:
        payload = bytes(content)
    box = superbox(c2pa_uuid(kind), label, [leaf(kind, payload)])
    box.raw = serialize_box_tree(box)
    return box


def manifest_box(label: str, assertions: list[Box], claim_bytes: bytes, signature_bytes: bytes) -> Box:
    return superbox(c2pa_uuid("c2ma"), label, [
        superbox(c2pa_uuid("c2as"), ASSERTION_STORE_LABEL, assertions),
        superbox(c2pa_uuid("c2cl"), CLAIM_LABEL, [leaf("cbor", claim_bytes)]),
        superbox(c2pa_uuid("c2cs"), SIGNATURE_LABEL, [leaf("cbor", signature_bytes)]),
    ])


def store_box(manifests: list[Box]) -> Box:
    return superbox(c2pa_uuid("c2pa"), STORE_LABEL, manifests)


def manifest_to_box(m: Manifest) -> Box:
    return manifest_box(m.label, [a.box for a in m.assertions.values()],
                        m.claim_bytes, m.signature.raw)


def serialize_manifest_store(store: ManifestStore) -> bytes:
    """Re-emit a store; the active manifest is written last."""
    labels = [lbl for lbl in store.manifests if lbl != store.active_label] + [store.active_label]
    return serialize_box_tree(store_box([manifest_to_box(store.manifests[lbl]) for lbl in labels]))
