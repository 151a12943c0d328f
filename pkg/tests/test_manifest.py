import hashlib

import cbor2
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from originlens.container import ImageBytes, extract_jumbf
from originlens.errors import ManifestParseError
from originlens.fixtures import FIREFLY_GENERATOR, make_ingredient_chain, sign_and_embed
from originlens.jumbf import c2pa_uuid, parse_box_tree, serialize_box_tree, superbox
from originlens.manifest import (assertion_box, classify_generative_origin, encode_cbor,
                                 extract_edit_history, manifest_box, parse_manifest_store,
                                 resolve_assertions, serialize_manifest_store, store_box)

DUMMY_SIG = cbor2.dumps(cbor2.CBORTag(18, [encode_cbor({1: -7}), {33: [b"cert"]}, None, b"s" * 64]))


def store_of(image):
    return parse_manifest_store(parse_box_tree(extract_jumbf(image).data))


def synthetic_manifest(label, ingredients=(), assertions=None, generator="Tool", extra=None):
    boxes = [assertion_box(*a) for a in (assertions or [])]
    claim = {
        "claim_generator": generator,
        "instanceID": f"xmp:iid:{label}",
        "signature": "self#jumbf=c2pa.signature",
        "assertions": [{"url": f"self#jumbf=c2pa.assertions/{b.label}",
                        "hash": hashlib.sha256(b.raw).digest()} for b in boxes],
        "ingredients": [{"url": f"self#jumbf=c2pa/{t}", "hash": hashlib.sha256(t.encode()).digest()}
                        for t in ingredients],
    }
    claim.update(extra or {})
    return manifest_box(label, boxes, encode_cbor(claim), DUMMY_SIG)


def synthetic_store(manifests):
    return parse_manifest_store(parse_box_tree(serialize_box_tree(store_box(manifests))))


def test_single_manifest(base_jpeg, signer, now):
    s = store_of(sign_and_embed(base_jpeg, signer, now=now))
    assert len(s.manifests) == 1
    assert s.active_label.startswith("urn:uuid:")
    m = s.active
    assert m.claim.created_at == now
    assert m.signature.algorithm == "ES256"
    assert m.hard_binding is not None and len(m.hard_binding.exclusions) == 1
    assert set(m.assertions) == {"c2pa.actions", "c2pa.hash.data"}


def test_missing_claim_box():
    m = synthetic_manifest("urn:uuid:a")
    m.children = [c for c in m.children if c.label != "c2pa.claim"]
    with pytest.raises(ManifestParseError):
        synthetic_store([m])


def test_missing_signature_box():
    m = synthetic_manifest("urn:uuid:a")
    m.children = [c for c in m.children if c.label != "c2pa.signature"]
    with pytest.raises(ManifestParseError):
        synthetic_store([m])


def test_undecodable_claim():
    m = synthetic_manifest("urn:uuid:a")
    m.child("c2pa.claim").children[0].payload = b"\xff\xff\xff"
    with pytest.raises(ManifestParseError):
        synthetic_store([m])


def test_not_a_store():
    with pytest.raises(ManifestParseError):
        parse_manifest_store(superbox(c2pa_uuid("c2pa"), "other", []))
    with pytest.raises(ManifestParseError):
        parse_manifest_store(superbox(c2pa_uuid("c2pa"), "c2pa", []))


def test_two_step_store_resolves_internally(base_jpeg, signer, now):
    s = store_of(make_ingredient_chain(base_jpeg, 2, signer, now=now))
    assert len(s.manifests) == 2
    (ref,) = s.active.claim.ingredient_refs
    assert ref.internal and ref.target in s.manifests and ref.target != s.active_label
    assert ref.digest == hashlib.sha256(s.manifests[ref.target].raw).digest()


def test_dangling_ingredient_is_missing():
    s = synthetic_store([synthetic_manifest("urn:uuid:a", ["urn:uuid:gone"])])
    (ref,) = s.active.claim.ingredient_refs
    assert not ref.internal and ref.missing


def test_non_array_exclusions():
    m = synthetic_manifest("urn:uuid:a", assertions=[("c2pa.hash.data", {"hash": bytes(32), "exclusions": 7})])
    s = synthetic_store([m])
    assert s.active.hard_binding is None and "not an array" in s.active.hard_binding_error


def test_resolve_assertions_ok(base_jpeg, signer, now):
    s = store_of(sign_and_embed(base_jpeg, signer, now=now))
    assert resolve_assertions(s.active) == [("c2pa.actions", True), ("c2pa.hash.data", True)]


def test_resolve_no_refs():
    assert resolve_assertions(synthetic_store([synthetic_manifest("urn:uuid:a")]).active) == []


def test_single_byte_assertion_mutation(base_jpeg, signer, now):
    signed = sign_and_embed(base_jpeg, signer, [("c2pa.actions", {"actions": [{"action": "c2pa.created"}]}),
                                                ("stds.schema-org.CreativeWork", {"author": "x" * 40})],
                            now=now)
    carrier = extract_jumbf(signed)
    # the flip target: a byte of the CreativeWork payload, found by its content
    offset_in_jumbf = carrier.data.index(b"x" * 40) + 5
    start = carrier.covered_ranges[0][0]
    data = bytearray(signed.data)
    # single APP11 segment: jumbf bytes follow a 12-byte marker/length/JP/instance/seq prefix
    data[start + 12 + offset_in_jumbf] ^= 0x01
    s = store_of(ImageBytes(bytes(data)))
    assert dict(resolve_assertions(s.active)) == {
        "c2pa.actions": True, "stds.schema-org.CreativeWork": False, "c2pa.hash.data": True}


def test_unknown_assertion_kept_opaque():
    m = synthetic_manifest("urn:uuid:a", assertions=[("vendor.blob", b"\x00\x01", "bin ")])
    a = synthetic_store([m]).active.assertions["vendor.blob"]
    assert a.content == b"\x00\x01"


def test_history_single():
    (e,) = extract_edit_history(synthetic_store([synthetic_manifest("urn:uuid:a")]))
    assert e.manifest_label == "urn:uuid:a" and e.timestamp is None and not e.cycle_detected


def test_history_two_step(base_jpeg, signer, now):
    s = store_of(make_ingredient_chain(base_jpeg, 2, signer, now=now))
    a, b = extract_edit_history(s)
    assert b.manifest_label == s.active_label
    assert a.timestamp < b.timestamp
    assert (a.action, b.action) == ("c2pa.created", "c2pa.edited")
    assert a.ingredient_digest is None
    assert b.ingredient_digest == hashlib.sha256(s.manifests[a.manifest_label].raw).digest()


def test_history_self_reference():
    (e,) = extract_edit_history(synthetic_store([synthetic_manifest("urn:uuid:a", ["urn:uuid:a"])]))
    assert e.cycle_detected


def test_classify_firefly(base_jpeg, signer, now):
    s = store_of(sign_and_embed(base_jpeg, signer, claim_generator=FIREFLY_GENERATOR, now=now))
    assert classify_generative_origin(s.active) == "Adobe Firefly"


def test_classify_camera(base_jpeg, signer, now):
    s = store_of(sign_and_embed(base_jpeg, signer, claim_generator="Acme Camera Firmware", now=now))
    assert classify_generative_origin(s.active) is None


def test_classify_trained_media_uses_software_agent(base_png, signer, now):
    actions = {"actions": [{
        "action": "c2pa.created",
        "digitalSourceType": "http://cv.iptc.org/newscodes/digitalsourcetype/trainedAlgorithmicMedia",
        "softwareAgent": {"name": "Imagen 3"},
    }]}
    s = store_of(sign_and_embed(base_png, signer, [("c2pa.actions", actions)],
                                claim_generator="Neutral Pipeline 1.0", now=now))
    assert classify_generative_origin(s.active) == "Imagen 3"


def test_store_roundtrip(base_jpeg, signer, now):
    s = store_of(make_ingredient_chain(base_jpeg, 3, signer, now=now))
    data = serialize_manifest_store(s)
    assert data == extract_jumbf(make_ingredient_chain(base_jpeg, 3, signer, now=now)).data
    assert parse_manifest_store(parse_box_tree(data)) == s


def reachable(graph, start):
    """Brute-force oracle: every label reachable from ``start`` by iterated expansion."""
    seen = {start}
    while True:
        grown = seen | {t for s in seen for t in graph[s] if t in graph}
        if grown == seen:
            return seen
        seen = grown


@settings(max_examples=150)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.lists(st.integers(0, n - 1), max_size=3), min_size=n, max_size=n))))
def test_history_matches_graph_walk(spec):
    n, edges = spec
    labels = [f"urn:uuid:m{i}" for i in range(n)]
    graph = {labels[i]: [labels[j] for j in edges[i]] for i in range(n)}
    store = synthetic_store([synthetic_manifest(lbl, graph[lbl]) for lbl in labels])
    history = extract_edit_history(store)
    assert [e.manifest_label for e in history][-1] == labels[-1]
    assert sorted(e.manifest_label for e in history) == sorted(reachable(graph, labels[-1]))
    # every ingredient that is not part of a cycle is listed before its user
    pos = {e.manifest_label: i for i, e in enumerate(history)}
    for e in history:
        for t in graph[e.manifest_label]:
            if t != e.manifest_label and e.manifest_label not in reachable(graph, t):
                assert pos[t] < pos[e.manifest_label]
    live = reachable(graph, labels[-1])
    has_cycle = any(u in reachable(graph, t) for u in live for t in graph[u])
    assert any(e.cycle_detected for e in history) == has_cycle
