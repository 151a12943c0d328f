"""JUMBF box tree parsing and serialization.

A box is ``LBox (u32) | TBox (4 bytes) | [XLBox (u64)] | content``. A
superbox (``jumb``) always starts with a description box (``jumd``) whose
fields are folded into the superbox's :class:`Box` attributes here, so
``children`` only lists the boxes after the description.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import InvalidTree, MalformedBox

SUPERBOX = "jumb"
DESCRIPTION = "jumd"

TOGGLE_REQUESTABLE = 0x01
TOGGLE_LABEL = 0x02
TOGGLE_ID = 0x04
TOGGLE_SIGNATURE = 0x08
TOGGLE_PRIVATE = 0x10

MAX_DEPTH = 64


def c2pa_uuid(tag: str) -> bytes:
    """The 16-byte type UUID for a 4-character C2PA content type."""
    return tag.encode("ascii") + bytes.fromhex("00110010800000AA00389B71")


@dataclass
class Box:
    type_code: str
    payload: bytes | None = None
    children: list[Box] | None = None
    uuid: bytes | None = None
    label: str | None = None
    requestable: bool = True
    box_id: int | None = None
    signature: bytes | None = None
    private: bytes | None = None
    raw: bytes = field(default=b"", compare=False, repr=False)

    @property
    def is_superbox(self) -> bool:
        return self.children is not None

    def child(self, label: str) -> Box | None:
        for c in self.children or ():
            if c.label == label:
                return c
        return None


def superbox(uuid: bytes, label: str | None, children: list[Box]) -> Box:
    return Box(SUPERBOX, children=list(children), uuid=uuid, label=label)


def leaf(type_code: str, payload: bytes) -> Box:
    return Box(type_code, payload=payload)


# -- parsing --------------------------------------------------------------------


def _read_header(data: bytes, pos: int, end: int) -> tuple[str, int, int]:
    """Return (type, content_start, box_end) for the box at ``pos``."""
    if pos + 8 > end:
        raise MalformedBox(f"truncated box header at offset {pos}")
    lbox, tbox = struct.unpack_from(">I4s", data, pos)
    type_code = tbox.decode("latin-1")
    if lbox == 1:
        if pos + 16 > end:
            raise MalformedBox(f"truncated XLBox at offset {pos}")
        (size,) = struct.unpack_from(">Q", data, pos + 8)
        if size < 16:
            raise MalformedBox(f"extended length {size} below minimum at offset {pos}")
        content = pos + 16
    elif lbox == 0:
        size = end - pos
        content = pos + 8
    else:
        if lbox < 8:
            raise MalformedBox(f"declared length {lbox} below header size at offset {pos}")
        size = lbox
        content = pos + 8
    if pos + size > end:
        raise MalformedBox(f"box at offset {pos} declares {size} bytes, overruns parent")
    return type_code, content, pos + size


def _parse_description(box: Box, content: bytes) -> None:
    if len(content) < 17:
        raise MalformedBox("description box shorter than uuid + toggles")
    box.uuid = content[:16]
    toggles = content[16]
    box.requestable = bool(toggles & TOGGLE_REQUESTABLE)
    pos = 17
    if toggles & TOGGLE_LABEL:
        nul = content.find(b"\x00", pos)
        if nul < 0:
            raise MalformedBox("description label is not null-terminated")
        try:
            box.label = content[pos:nul].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedBox(f"description label is not UTF-8: {exc}") from None
        pos = nul + 1
    if toggles & TOGGLE_ID:
        if pos + 4 > len(content):
            raise MalformedBox("description box truncates ID field")
        (box.box_id,) = struct.unpack_from(">I", content, pos)
        pos += 4
    if toggles & TOGGLE_SIGNATURE:
        if pos + 32 > len(content):
            raise MalformedBox("description box truncates signature field")
        box.signature = content[pos : pos + 32]
        pos += 32
    if toggles & TOGGLE_PRIVATE:
        box.private = content[pos:]
    elif pos != len(content):
        raise MalformedBox("trailing bytes in description box")


def _parse_box(data: bytes, pos: int, end: int, depth: int) -> tuple[Box, int]:
    if depth > MAX_DEPTH:
        raise MalformedBox(f"superbox nesting deeper than {MAX_DEPTH}")
    type_code, content, box_end = _read_header(data, pos, end)
    raw = data[pos:box_end]
    if type_code != SUPERBOX:
        return Box(type_code, payload=data[content:box_end], raw=raw), box_end

    box = Box(SUPERBOX, children=[], raw=raw)
    if content >= box_end:
        raise MalformedBox(f"superbox at offset {pos} lacks a description box")
    d_type, d_content, d_end = _read_header(data, content, box_end)
    if d_type != DESCRIPTION:
        raise MalformedBox(f"superbox at offset {pos} starts with {d_type!r}, not a description box")
    _parse_description(box, data[d_content:d_end])
    cur = d_end
    while cur < box_end:
        child, cur = _parse_box(data, cur, box_end, depth + 1)
        box.children.append(child)
    return box, box_end


def parse_box_tree(data: bytes) -> Box:
    """Parse one root box spanning all of ``data``."""
    data = bytes(data)
    if not data:
        raise MalformedBox("empty input")
    root, end = _parse_box(data, 0, len(data), 0)
    if end != len(data):
        raise MalformedBox(f"{len(data) - end} trailing bytes after root box")
    return root


# -- serialization ------------------------------------------------------------


def _type_bytes(type_code: str) -> bytes:
    try:
        tb = type_code.encode("latin-1")
    except UnicodeEncodeError:
        raise InvalidTree(f"box type {type_code!r} is not a 4-byte code") from None
    if len(tb) != 4:
        raise InvalidTree(f"box type {type_code!r} is not a 4-byte code")
    return tb


def _frame(type_code: str, content: bytes) -> bytes:
    tb = _type_bytes(type_code)
    if len(content) + 8 > 0xFFFFFFFF:
        return struct.pack(">I", 1) + tb + struct.pack(">Q", len(content) + 16) + content
    return struct.pack(">I", len(content) + 8) + tb + content


def _description_content(box: Box) -> bytes:
    if box.uuid is None or len(box.uuid) != 16:
        raise InvalidTree("superbox is missing its description box (16-byte uuid)")
    toggles = TOGGLE_REQUESTABLE if box.requestable else 0
    out = bytearray()
    if box.label is not None:
        if "\x00" in box.label:
            raise InvalidTree("label may not contain NUL")
        toggles |= TOGGLE_LABEL
        out += box.label.encode("utf-8") + b"\x00"
    if box.box_id is not None:
        toggles |= TOGGLE_ID
        out += struct.pack(">I", box.box_id)
    if box.signature is not None:
        if len(box.signature) != 32:
            raise InvalidTree("description signature must be 32 bytes")
        toggles |= TOGGLE_SIGNATURE
        out += box.signature
    if box.private is not None:
        toggles |= TOGGLE_PRIVATE
        out += box.private
    return box.uuid + bytes((toggles,)) + bytes(out)


def _serialize(box: Box, depth: int) -> bytes:
    if depth > MAX_DEPTH:
        raise InvalidTree(f"tree deeper than {MAX_DEPTH}")
    if (box.payload is None) == (box.children is None):
        raise InvalidTree(f"box {box.type_code!r} must be a leaf xor a superbox")
    if box.children is not None:
        if box.type_code != SUPERBOX:
            raise InvalidTree(f"superbox must have type {SUPERBOX!r}, got {box.type_code!r}")
        content = _frame(DESCRIPTION, _description_content(box))
        content += b"".join(_serialize(c, depth + 1) for c in box.children)
        return _frame(SUPERBOX, content)
    if box.type_code == SUPERBOX:
        raise InvalidTree("leaf box may not use the superbox type")
    return _frame(box.type_code, box.payload)


def serialize_box_tree(root: Box) -> bytes:
    return _serialize(root, 0)


def find_box(root: Box, label_path: list[str]) -> Box | None:
    node = root
    for label in label_path:
        node = node.child(label)
        if node is None:
            return None
    return node
