"""EXIF / IPTC / PNG-text extraction and the AI-generator signature rules."""

from __future__ import annotations

import enum
import json
import re
import struct
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import MalformedMetadata

EXIF_HEADER = b"Exif\x00\x00"
PHOTOSHOP_HEADER = b"Photoshop 3.0\x00"
MAX_INFLATED_TEXT = 8 * 1024 * 1024
EXCERPT_LEN = 80


class Source(enum.Enum):
    EXIF = "exif"
    IPTC = "iptc"
    PNG_TEXT = "png_text"


@dataclass(frozen=True)
class Record:
    source: Source
    key: str
    value: str


@dataclass
class MetadataRecordSet:
    records: list[Record] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def extend(self, other: MetadataRecordSet) -> None:
        self.records.extend(other.records)

    def get(self, source: Source, key: str) -> str | None:
        for r in self.records:
            if r.source is source and r.key == key:
                return r.value
        return None


def _binary(data: bytes) -> str:
    return f"{data.hex()} (binary)"


def _text(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        return _binary(data)


# -- EXIF ------------------------------------------------------------------------

EXIF_TAGS = {
    0x010E: "ImageDescription",
    0x010F: "Make",
    0x0110: "Model",
    0x0112: "Orientation",
    0x0131: "Software",
    0x0132: "DateTime",
    0x013B: "Artist",
    0x8298: "Copyright",
    0x9003: "DateTimeOriginal",
    0x9004: "DateTimeDigitized",
    0x9286: "UserComment",
    0x9C9C: "XPComment",
    0x9C9F: "XPSubject",
    0xA420: "ImageUniqueID",
    0xA430: "CameraOwnerName",
    0xA433: "LensMake",
    0xA434: "LensModel",
}
EXIF_IFD_POINTER = 0x8769

# TIFF field type -> (byte size, struct code)
_TIFF_TYPES = {
    1: (1, "B"), 2: (1, None), 3: (2, "H"), 4: (4, "I"), 5: (8, "II"),
    6: (1, "b"), 7: (1, None), 8: (2, "h"), 9: (4, "i"), 10: (8, "ii"),
    11: (4, "f"), 12: (8, "d"), 13: (4, "I"),
}
_XP_TAGS = {0x9C9C, 0x9C9F}


def _decode_user_comment(raw: bytes, order: str) -> str:
    code, body = raw[:8], raw[8:]
    if code == b"ASCII\x00\x00\x00":
        try:
            return body.decode("ascii").rstrip("\x00")
        except UnicodeDecodeError:
            return _binary(raw)
    if code == b"UNICODE\x00":
        if body[:2] in (b"\xff\xfe", b"\xfe\xff"):
            codec = "utf-16"
        else:
            codec = "utf-16-le" if order == "<" else "utf-16-be"
        try:
            return body.decode(codec).rstrip("\x00")
        except UnicodeDecodeError:
            return _binary(raw)
    return _binary(raw)


def _decode_value(tag: int, ftype: int, count: int, raw: bytes, order: str) -> str:
    if tag == 0x9286:
        return _decode_user_comment(raw, order)
    if tag in _XP_TAGS and ftype == 1:
        try:
            return raw.decode("utf-16-le").rstrip("\x00")
        except UnicodeDecodeError:
            return _binary(raw)
    if ftype == 2:
        return _text(raw.rstrip(b"\x00"))
    if ftype == 7:
        return _binary(raw)
    size, code = _TIFF_TYPES[ftype]
    values = struct.unpack(order + code * count, raw)
    if ftype in (5, 10):
        return " ".join(f"{values[i]}/{values[i + 1]}" for i in range(0, len(values), 2))
    return " ".join(str(v) for v in values)


def parse_tiff(tiff: bytes) -> MetadataRecordSet:
    """Decode IFD0, its chained IFDs and the Exif sub-IFD of a TIFF stream."""
    out = MetadataRecordSet()
    if len(tiff) < 8:
        raise MalformedMetadata("TIFF header truncated")
    if tiff[:2] == b"II":
        order = "<"
    elif tiff[:2] == b"MM":
        order = ">"
    else:
        raise MalformedMetadata(f"bad TIFF byte-order mark {tiff[:2]!r}")
    magic, first = struct.unpack_from(order + "HI", tiff, 2)
    if magic != 42:
        raise MalformedMetadata(f"bad TIFF magic {magic}")

    queue = [first]
    visited: set[int] = set()
    n = len(tiff)
    while queue:
        offset = queue.pop(0)
        if offset == 0:
            continue
        if offset in visited:
            raise MalformedMetadata(f"IFD offset loop at {offset}")
        visited.add(offset)
        if offset + 2 > n:
            raise MalformedMetadata(f"IFD offset {offset} outside TIFF data")
        (count,) = struct.unpack_from(order + "H", tiff, offset)
        table_end = offset + 2 + 12 * count
        if table_end + 4 > n:
            raise MalformedMetadata(f"IFD at {offset} with {count} entries overruns data")
        for i in range(count):
            tag, ftype, vcount = struct.unpack_from(order + "HHI", tiff, offset + 2 + 12 * i)
            field_at = offset + 2 + 12 * i + 8
            if ftype not in _TIFF_TYPES:
                continue
            size = _TIFF_TYPES[ftype][0] * vcount
            if size <= 4:
                raw = tiff[field_at : field_at + size]
            else:
                (voff,) = struct.unpack_from(order + "I", tiff, field_at)
                if voff + size > n:
                    raise MalformedMetadata(f"tag 0x{tag:04X} value overruns TIFF data")
                raw = tiff[voff : voff + size]
            if tag == EXIF_IFD_POINTER and ftype in (4, 13) and vcount == 1:
                queue.append(struct.unpack(order + "I", raw)[0])
            elif tag in EXIF_TAGS:
                out.records.append(
                    Record(Source.EXIF, EXIF_TAGS[tag], _decode_value(tag, ftype, vcount, raw, order))
                )
        (next_ifd,) = struct.unpack_from(order + "I", tiff, table_end)
        queue.append(next_ifd)
    return out


def parse_exif(app1_payload: bytes) -> MetadataRecordSet:
    if not app1_payload.startswith(EXIF_HEADER):
        raise MalformedMetadata("APP1 payload lacks the Exif identifier")
    return parse_tiff(app1_payload[len(EXIF_HEADER):])


# -- IPTC -------------------------------------------------------------------------

IPTC_DATASETS = {(2, 120): "Caption/Abstract", (2, 110): "Credit", (2, 115): "Source"}
IPTC_RESOURCE_ID = 0x0404


def _parse_iim(data: bytes, out: MetadataRecordSet) -> None:
    pos, n = 0, len(data)
    while pos < n and data[pos] == 0x1C:
        if pos + 5 > n:
            raise MalformedMetadata(f"IIM dataset header truncated at {pos}")
        record, dataset, length = struct.unpack_from(">BBH", data, pos + 1)
        pos += 5
        if length & 0x8000:
            width = length & 0x7FFF
            if width > 8 or pos + width > n:
                raise MalformedMetadata("bad IIM extended length")
            length = int.from_bytes(data[pos : pos + width], "big")
            pos += width
        if pos + length > n:
            raise MalformedMetadata(f"IIM dataset {record}:{dataset} overruns payload")
        name = IPTC_DATASETS.get((record, dataset))
        if name:
            value = data[pos : pos + length]
            try:
                text = value.decode("utf-8")
            except UnicodeDecodeError:
                text = value.decode("latin-1")
            out.records.append(Record(Source.IPTC, name, text))
        pos += length


def parse_iptc(app13_payload: bytes) -> MetadataRecordSet:
    """Extract Caption/Abstract, Credit and Source from a Photoshop IRB block."""
    out = MetadataRecordSet()
    if not app13_payload.startswith(PHOTOSHOP_HEADER):
        return out
    data = app13_payload
    pos, n = len(PHOTOSHOP_HEADER), len(app13_payload)
    while pos + 4 <= n and data[pos : pos + 4] == b"8BIM":
        if pos + 7 > n:
            raise MalformedMetadata("IRB resource header truncated")
        (res_id,) = struct.unpack_from(">H", data, pos + 4)
        name_len = data[pos + 6]
        pos += 6 + ((name_len + 2) & ~1)
        if pos + 4 > n:
            raise MalformedMetadata("IRB resource size truncated")
        (size,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + size > n:
            raise MalformedMetadata(f"IRB resource 0x{res_id:04X} overruns payload")
        if res_id == IPTC_RESOURCE_ID:
            _parse_iim(data[pos : pos + size], out)
        pos += size + (size & 1)
    return out


# -- PNG text ---------------------------------------------------------------------


def _inflate(data: bytes) -> bytes:
    d = zlib.decompressobj()
    try:
        out = d.decompress(data, MAX_INFLATED_TEXT)
    except zlib.error as exc:
        raise MalformedMetadata(f"corrupt deflate stream: {exc}") from None
    if d.unconsumed_tail:
        raise MalformedMetadata("compressed text exceeds size cap")
    if not d.eof:
        raise MalformedMetadata("truncated deflate stream")
    return out


def _split_key(payload: bytes, ctype: str) -> tuple[str, bytes]:
    nul = payload.find(b"\x00")
    if nul < 1:
        raise MalformedMetadata(f"{ctype} chunk has no keyword separator")
    return payload[:nul].decode("latin-1"), payload[nul + 1 :]


def parse_png_text(chunks) -> MetadataRecordSet:
    """Decode tEXt, zTXt and iTXt chunks into records, keyword as key."""
    out = MetadataRecordSet()
    for chunk in chunks:
        ctype, payload = chunk.type_code, chunk.payload
        if ctype == "tEXt":
            key, rest = _split_key(payload, ctype)
            out.records.append(Record(Source.PNG_TEXT, key, rest.decode("latin-1")))
        elif ctype == "zTXt":
            key, rest = _split_key(payload, ctype)
            if not rest or rest[0] != 0:
                raise MalformedMetadata("zTXt uses an unknown compression method")
            out.records.append(Record(Source.PNG_TEXT, key, _inflate(rest[1:]).decode("latin-1")))
        elif ctype == "iTXt":
            key, rest = _split_key(payload, ctype)
            if len(rest) < 2:
                raise MalformedMetadata("iTXt chunk truncated")
            compressed, method = rest[0], rest[1]
            parts = rest[2:].split(b"\x00", 2)
            if len(parts) != 3:
                raise MalformedMetadata("iTXt chunk lacks language/translated-key fields")
            text = parts[2]
            if compressed:
                if method != 0:
                    raise MalformedMetadata("iTXt uses an unknown compression method")
                text = _inflate(text)
            out.records.append(Record(Source.PNG_TEXT, key, _text(text)))
    return out


# -- AI signature rules -----------------------------------------------------------


class FieldScope(enum.Enum):
    ANY_TEXT = "AnyText"
    EXIF_SOFTWARE = "ExifSoftware"
    EXIF_DESCRIPTION = "ExifDescription"
    PNG_PARAMETERS = "PngParameters"
    CLAIM_GENERATOR = "ClaimGenerator"


@dataclass(frozen=True)
class AiSignatureRule:
    rule_id: str
    field_scope: FieldScope
    pattern: str
    generator_name: str

    def __post_init__(self):
        if not self.pattern:
            raise ValueError(f"rule {self.rule_id!r} has an empty pattern")

    def search(self, value: str):
        return re.search(re.escape(self.pattern), value, re.IGNORECASE)


@dataclass(frozen=True)
class AiMatch:
    rule_id: str
    generator_name: str
    matched_source: Source
    matched_key: str
    matched_excerpt: str


def _in_scope(scope: FieldScope, record: Record) -> bool:
    # IPTC records are displayed as evidence but never classified.
    if scope is FieldScope.ANY_TEXT:
        return record.source in (Source.EXIF, Source.PNG_TEXT)
    if scope is FieldScope.EXIF_SOFTWARE:
        return record.source is Source.EXIF and record.key == "Software"
    if scope is FieldScope.EXIF_DESCRIPTION:
        return record.source is Source.EXIF and record.key in (
            "ImageDescription", "UserComment", "XPComment")
    if scope is FieldScope.PNG_PARAMETERS:
        return record.source is Source.PNG_TEXT and record.key.lower() == "parameters"
    return False


def excerpt_around(value: str, start: int, end: int) -> str:
    if end - start >= EXCERPT_LEN:
        return value[start : start + EXCERPT_LEN]
    lo = max(0, start - (EXCERPT_LEN - (end - start)) // 2)
    hi = min(len(value), lo + EXCERPT_LEN)
    lo = max(0, hi - EXCERPT_LEN)
    return value[lo:hi]


def detect_ai_signatures(records, rules) -> list[AiMatch]:
    """Match every rule against every in-scope record; record order first."""
    matches = []
    for record in records:
        for rule in rules:
            if not _in_scope(rule.field_scope, record):
                continue
            m = rule.search(record.value)
            if m:
                matches.append(AiMatch(rule.rule_id, rule.generator_name, record.source,
                                       record.key, excerpt_around(record.value, m.start(), m.end())))
    return matches


def parse_rules(entries) -> list[AiSignatureRule]:
    if not isinstance(entries, list):
        raise ValueError("rule table must be a JSON array")
    rules, seen = [], set()
    for entry in entries:
        try:
            rule = AiSignatureRule(
                rule_id=str(entry["rule_id"]),
                field_scope=FieldScope(entry["field_scope"]),
                pattern=str(entry["pattern"]),
                generator_name=str(entry["generator_name"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"bad rule entry {entry!r}: {exc}") from None
        if rule.rule_id in seen:
            raise ValueError(f"duplicate rule_id {rule.rule_id!r}")
        seen.add(rule.rule_id)
        rules.append(rule)
    return rules


def load_rules(path: str | Path | None = None) -> list[AiSignatureRule]:
    """Load a rule table; the embedded default when ``path`` is None."""
    if path is None:
        text = resources.files("originlens").joinpath("data/ai_rules.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_rules(json.loads(text))


_default_rules: list[AiSignatureRule] | None = None


def default_rules() -> list[AiSignatureRule]:
    global _default_rules
    if _default_rules is None:
        _default_rules = load_rules()
    return _default_rules
