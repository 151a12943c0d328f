import struct
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from originlens.container import extract_jumbf
from originlens.errors import InvalidTree, MalformedBox
from originlens.fixtures import sign_and_embed
from originlens.jumbf import Box, c2pa_uuid, find_box, leaf, parse_box_tree, serialize_box_tree, superbox

DATA = Path(__file__).parent / "data"


def golden(name):
    lines = (ln.split("#", 1)[0] for ln in (DATA / name).read_text().splitlines())
    return bytes.fromhex("".join(lines).replace(" ", ""))


def test_free_leaf():
    box = parse_box_tree(struct.pack(">I", 8) + b"free")
    assert box == Box("free", payload=b"")
    assert not box.is_superbox


def test_empty_leaf_serializes_to_header_only():
    assert serialize_box_tree(leaf("free", b"")) == b"\x00\x00\x00\x08free"


def test_labelled_superbox_without_children():
    data = serialize_box_tree(superbox(c2pa_uuid("c2pa"), "c2pa", []))
    root = parse_box_tree(data)
    assert root.label == "c2pa"
    assert root.children == []
    assert root.uuid == b"c2pa" + bytes.fromhex("00110010800000AA00389B71")


def test_golden_store_parse_and_serialize():
    data = golden("golden_c2pa_store.hex")
    root = parse_box_tree(data)
    assert root.label == "c2pa" and root.requestable
    assert root.children == [Box("json", payload=b"{}")]
    assert serialize_box_tree(root) == data


@pytest.mark.parametrize("data", [
    struct.pack(">I", 4) + b"free",                 # below header size
    struct.pack(">I", 40) + b"free",                # overrun
    struct.pack(">I", 16) + b"jumb" + struct.pack(">I", 8) + b"free",  # no description
    b"\x00\x00\x00",                                # truncated header
    struct.pack(">I", 1) + b"free" + struct.pack(">Q", 8),  # XLBox below 16
])
def test_malformed(data):
    with pytest.raises(MalformedBox):
        parse_box_tree(data)


def test_empty_input_malformed():
    with pytest.raises(MalformedBox):
        parse_box_tree(b"")


def test_trailing_bytes_malformed():
    with pytest.raises(MalformedBox):
        parse_box_tree(b"\x00\x00\x00\x08free" + b"x")


def test_extended_length_parsed():
    data = struct.pack(">I", 1) + b"blob" + struct.pack(">Q", 19) + b"abc"
    assert parse_box_tree(data).payload == b"abc"


def test_lbox_zero_runs_to_end():
    assert parse_box_tree(b"\x00\x00\x00\x00free" + b"xyz").payload == b"xyz"


def test_superbox_missing_description_invalid():
    with pytest.raises(InvalidTree):
        serialize_box_tree(Box("jumb", children=[]))


def test_leaf_xor_superbox():
    with pytest.raises(InvalidTree):
        serialize_box_tree(Box("json", payload=b"", children=[]))
    with pytest.raises(InvalidTree):
        serialize_box_tree(Box("json"))


def test_unknown_box_preserved():
    tree = superbox(c2pa_uuid("c2pa"), "c2pa", [leaf("vndr", b"\x01\x02")])
    assert parse_box_tree(serialize_box_tree(tree)).children[0] == leaf("vndr", b"\x01\x02")


def test_find_box(base_jpeg, signer, now):
    signed = sign_and_embed(base_jpeg, signer, now=now)
    root = parse_box_tree(extract_jumbf(signed).data)
    assert find_box(root, []) is root
    manifest = root.children[0]
    hb = find_box(manifest, ["c2pa.assertions", "c2pa.hash.data"])
    assert hb is not None and hb.label == "c2pa.hash.data"
    assert find_box(root, [manifest.label, "c2pa.assertions", "c2pa.hash.data"]) == hb
    assert find_box(root, ["nope"]) is None


labels = st.one_of(st.none(), st.text(st.characters(blacklist_characters="\x00",
                                                    blacklist_categories=("Cs",)), max_size=12))
leaf_types = st.text(st.characters(min_codepoint=0x61, max_codepoint=0x7A), min_size=4, max_size=4).filter(
    lambda t: t not in ("jumb", "jumd"))
leaves = st.builds(lambda t, p: Box(t, payload=p), leaf_types, st.binary(max_size=64))


def _superboxes(children):
    return st.builds(
        lambda u, lab, req, bid, kids: Box("jumb", children=kids, uuid=u, label=lab,
                                           requestable=req, box_id=bid),
        st.binary(min_size=16, max_size=16), labels, st.booleans(),
        st.one_of(st.none(), st.integers(0, 2**32 - 1)), st.lists(children, max_size=8))


trees = st.recursive(leaves, _superboxes, max_leaves=20)


@settings(max_examples=200)
@given(trees)
def test_roundtrip_property(tree):
    data = serialize_box_tree(tree)
    back = parse_box_tree(data)
    assert back == tree
    assert len(back.raw) == len(data)

    def check(box):
        # lengths re-read during parse equal those written
        assert struct.unpack_from(">I", box.raw)[0] == len(box.raw)
        for c in box.children or ():
            check(c)

    check(back)


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_parse_total(data):
    try:
        parse_box_tree(data)
    except MalformedBox:
        pass
