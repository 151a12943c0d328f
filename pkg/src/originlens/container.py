"""JPEG and PNG container scanning.

Walks the marker segments of a JPEG (up to start-of-scan) or the chunk list
of a PNG, pulls out the embedded JUMBF provenance payload and reports the
byte ranges it occupies so the hard binding can exclude them.

The second half of the module is the matching writer used by the fixture
signer and the tests: it builds segments/chunks, splices a provenance
carrier into an existing file and strips it back out.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

from .errors import MalformedContainer, UnsupportedFormat

JPEG_SOI = b"\xff\xd8"
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

SOI, EOI, SOS = 0xD8, 0xD9, 0xDA
APP0, APP1, APP11, APP13, COM = 0xE0, 0xE1, 0xEB, 0xED, 0xFE

# JPEG XT / C2PA APP11 framing: common identifier "JP", u16 box instance,
# u32 packet sequence number (1-based), then the repeated JUMBF box header.
APP11_COMMON_ID = b"JP"
PROVENANCE_CHUNK = "caBX"

MAX_JUMBF_SIZE = 64 * 1024 * 1024
MAX_SEGMENT_PAYLOAD = 0xFFFF - 2


class ImageFormat(enum.Enum):
    JPEG = "jpeg"
    PNG = "png"
    UNKNOWN = "unknown"


def detect_format(data: bytes) -> ImageFormat:
    if data[:2] == JPEG_SOI:
        return ImageFormat.JPEG
    if data[:8] == PNG_SIGNATURE:
        return ImageFormat.PNG
    return ImageFormat.UNKNOWN


@dataclass(frozen=True)
class ImageBytes:
    """Immutable image input; ``format`` is derived from the leading bytes."""

    data: bytes
    format: ImageFormat = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "data", bytes(self.data))
        object.__setattr__(self, "format", detect_format(self.data))

    def __len__(self):
        return len(self.data)


@dataclass(frozen=True)
class Segment:
    marker: int
    file_offset: int
    payload: bytes
    total_range: tuple[int, int]


@dataclass(frozen=True)
class Chunk:
    type_code: str
    payload: bytes
    crc_valid: bool
    total_range: tuple[int, int]


@dataclass(frozen=True)
class JumbfCarrier:
    """Reassembled JUMBF bytes plus the file ranges of their carrier."""

    data: bytes
    covered_ranges: list[tuple[int, int]]


# -- scanning -----------------------------------------------------------------


def _walk_jpeg(data: bytes):
    if data[:2] != JPEG_SOI:
        raise MalformedContainer("missing SOI marker")
    pos = 2
    n = len(data)
    while True:
        if pos >= n:
            raise MalformedContainer(f"unexpected end of data at {pos} (no SOS/EOI)")
        if data[pos] != 0xFF:
            raise MalformedContainer(f"expected marker at offset {pos}")
        start = pos
        # fill bytes: any run of 0xFF may precede the marker code
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            raise MalformedContainer("file ends inside marker fill")
        marker = data[pos]
        pos += 1
        if marker in (EOI, SOS):
            return
        if marker == 0x01 or 0xD0 <= marker <= 0xD7:
            continue
        if marker == 0x00 or marker == SOI:
            raise MalformedContainer(f"invalid marker 0xFF{marker:02X} at offset {start}")
        if pos + 2 > n:
            raise MalformedContainer(f"truncated length field at offset {pos}")
        (length,) = struct.unpack_from(">H", data, pos)
        if length < 2:
            raise MalformedContainer(f"segment length {length} below minimum at offset {pos}")
        end = pos + length
        if end > n:
            raise MalformedContainer(
                f"segment at offset {start} declares {length} bytes, overruns file"
            )
        if 0xE0 <= marker <= 0xEF or marker == COM:
            yield Segment(marker, start, data[pos + 2 : end], (start, end - start))
        pos = end


def scan_jpeg_segments(image: ImageBytes, strict: bool = True) -> list[Segment]:
    """Return the APPn and COM segments of a JPEG in file order.

    Scanning stops at SOS or EOI; entropy-coded data is never touched. With
    ``strict=False`` a structural defect ends the scan quietly and the
    segments found before it are returned.
    """
    if image.format is not ImageFormat.JPEG:
        raise MalformedContainer("not a JPEG stream")
    segments: list[Segment] = []
    try:
        for seg in _walk_jpeg(image.data):
            segments.append(seg)
    except MalformedContainer:
        if strict:
            raise
    return segments


def _walk_png(data: bytes):
    if data[:8] != PNG_SIGNATURE:
        raise MalformedContainer("missing PNG signature")
    pos = 8
    n = len(data)
    while True:
        if pos + 8 > n:
            raise MalformedContainer(f"truncated chunk header at offset {pos} (missing IEND)")
        length, ctype = struct.unpack_from(">I4s", data, pos)
        if length > 0x7FFFFFFF:
            raise MalformedContainer(f"chunk length {length} exceeds 2^31-1 at offset {pos}")
        if not ctype.isalpha():
            raise MalformedContainer(f"invalid chunk type {ctype!r} at offset {pos}")
        end = pos + 12 + length
        if end > n:
            raise MalformedContainer(f"chunk at offset {pos} overruns file")
        payload = data[pos + 8 : pos + 8 + length]
        (crc,) = struct.unpack_from(">I", data, pos + 8 + length)
        crc_ok = zlib.crc32(ctype + payload) & 0xFFFFFFFF == crc
        type_code = ctype.decode("ascii")
        yield Chunk(type_code, payload, crc_ok, (pos, end - pos))
        if type_code == "IEND":
            return
        pos = end


def scan_png_chunks(image: ImageBytes, strict: bool = True) -> list[Chunk]:
    """Return every chunk of a PNG in order, IEND included."""
    if image.format is not ImageFormat.PNG:
        raise MalformedContainer("not a PNG stream")
    chunks: list[Chunk] = []
    try:
        for chunk in _walk_png(image.data):
            chunks.append(chunk)
    except MalformedContainer:
        if strict:
            raise
    return chunks


def _parse_app11(seg: Segment):
    p = seg.payload
    if len(p) < 16 or p[:2] != APP11_COMMON_ID:
        return None
    instance, seq, lbox = struct.unpack_from(">HII", p, 2)
    header_end = 16
    if lbox == 1:
        if len(p) < 24:
            raise MalformedContainer(f"APP11 segment at {seg.file_offset} truncates XLBox")
        header_end = 24
    return instance, seq, p[8:header_end], p[header_end:]


def _assemble_app11(segments) -> JumbfCarrier | None:
    groups: dict[int, list[tuple[int, bytes, bytes, Segment]]] = {}
    order: list[int] = []
    for seg in segments:
        if seg.marker != APP11:
            continue
        parsed = _parse_app11(seg)
        if parsed is None:
            continue
        instance, seq, header, body = parsed
        if instance not in groups:
            groups[instance] = []
            order.append(instance)
        groups[instance].append((seq, header, body, seg))

    chosen = None
    for instance in order:
        first = min(groups[instance], key=lambda item: item[0])
        if first[1][4:8] == b"jumb":
            chosen = groups[instance]
            break
    if chosen is None:
        return None

    seqs = sorted(item[0] for item in chosen)
    if seqs != list(range(1, len(seqs) + 1)):
        raise MalformedContainer(f"APP11 sequence numbers not contiguous from 1: {seqs}")
    chosen.sort(key=lambda item: item[0])
    header = chosen[0][1]
    if any(item[1] != header for item in chosen):
        raise MalformedContainer("APP11 continuation segments disagree on box header")

    total = len(header) + sum(len(item[2]) for item in chosen)
    if total > MAX_JUMBF_SIZE:
        raise MalformedContainer(f"reassembled JUMBF of {total} bytes exceeds cap")
    (lbox,) = struct.unpack_from(">I", header)
    declared = struct.unpack_from(">Q", header, 8)[0] if lbox == 1 else lbox
    if declared not in (0, total):
        raise MalformedContainer(
            f"reassembled JUMBF is {total} bytes but box header declares {declared}"
        )
    jumbf = header + b"".join(item[2] for item in chosen)
    ranges = sorted(item[3].total_range for item in chosen)
    return JumbfCarrier(jumbf, ranges)


def _extract_jpeg(image: ImageBytes, strict: bool) -> JumbfCarrier | None:
    return _assemble_app11(scan_jpeg_segments(image, strict=strict))


def _single_provenance_chunk(found: list[Chunk]) -> JumbfCarrier | None:
    if not found:
        return None
    if len(found) > 1:
        raise MalformedContainer(f"{len(found)} {PROVENANCE_CHUNK} chunks present")
    chunk = found[0]
    if len(chunk.payload) > MAX_JUMBF_SIZE:
        raise MalformedContainer("provenance chunk exceeds JUMBF size cap")
    return JumbfCarrier(chunk.payload, [chunk.total_range])


def _extract_png(image: ImageBytes, strict: bool) -> JumbfCarrier | None:
    return _single_provenance_chunk(
        [c for c in scan_png_chunks(image, strict=strict) if c.type_code == PROVENANCE_CHUNK])


def salvage_jumbf(data: bytes) -> JumbfCarrier | None:
    """Find a provenance carrier by byte signature, ignoring file structure.

    Only meant for files whose structural walk failed: APP11 segments are
    recognised by ``FF EB len "JP"`` and caBX chunks by a matching CRC,
    wherever they sit. Ranges are still reported, so the hard binding is
    checked exactly as for an intact file.
    """
    n = len(data)
    segments = []
    pos = data.find(b"\xff\xeb")
    while pos != -1:
        resume = pos + 2
        if pos + 6 <= n and data[pos + 4 : pos + 6] == APP11_COMMON_ID:
            (length,) = struct.unpack_from(">H", data, pos + 2)
            end = pos + 2 + length
            if end <= n:
                segments.append(Segment(APP11, pos, data[pos + 4 : end], (pos, end - pos)))
                resume = end
        pos = data.find(b"\xff\xeb", resume)
    if segments:
        return _assemble_app11(segments)

    chunks = []
    ctype = PROVENANCE_CHUNK.encode("ascii")
    pos = data.find(ctype, 4)
    while pos != -1:
        start = pos - 4
        (length,) = struct.unpack_from(">I", data, start)
        end = start + 12 + length
        if end <= n:
            payload = data[pos + 4 : pos + 4 + length]
            if zlib.crc32(ctype + payload) & 0xFFFFFFFF == struct.unpack_from(">I", data, end - 4)[0]:
                chunks.append(Chunk(PROVENANCE_CHUNK, payload, True, (start, end - start)))
        pos = data.find(ctype, pos + 4)
    return _single_provenance_chunk(chunks)


def extract_jumbf(image: ImageBytes, strict: bool = True) -> JumbfCarrier | None:
    """Locate and reassemble the JUMBF provenance payload, or return None."""
    if image.format is ImageFormat.JPEG:
        return _extract_jpeg(image, strict)
    if image.format is ImageFormat.PNG:
        return _extract_png(image, strict)
    return None


# -- writing ------------------------------------------------------------------


def make_segment(marker: int, payload: bytes) -> bytes:
    if len(payload) > MAX_SEGMENT_PAYLOAD:
        raise ValueError(f"segment payload of {len(payload)} bytes does not fit")
    return bytes((0xFF, marker)) + struct.pack(">H", len(payload) + 2) + payload


def build_jpeg(segments: list[tuple[int, bytes]], scan: bytes | None = None) -> bytes:
    """Assemble SOI, the given (marker, payload) segments, an optional SOS
    segment followed by ``scan`` bytes, then EOI."""
    out = bytearray(JPEG_SOI)
    for marker, payload in segments:
        out += make_segment(marker, payload)
    if scan is not None:
        out += make_segment(SOS, b"\x01\x01\x00\x00\x3f\x00") + scan
    out += b"\xff\xd9"
    return bytes(out)


def app11_segments(jumbf: bytes, instance: int = 1, max_payload: int = MAX_SEGMENT_PAYLOAD) -> list[bytes]:
    """Split a serialized JUMBF box across APP11 segments (marker included)."""
    (lbox,) = struct.unpack_from(">I", jumbf)
    header_len = 16 if lbox == 1 else 8
    header, body = jumbf[:header_len], jumbf[header_len:]
    room = max_payload - 8 - header_len
    if room <= 0:
        raise ValueError("max_payload too small for APP11 framing")
    pieces = [body[i : i + room] for i in range(0, len(body), room)] or [b""]
    return [
        make_segment(APP11, APP11_COMMON_ID + struct.pack(">HI", instance, seq) + header + piece)
        for seq, piece in enumerate(pieces, start=1)
    ]


def app11_carrier_size(jumbf_len: int, xlbox: bool = False) -> int:
    header_len = 16 if xlbox else 8
    room = MAX_SEGMENT_PAYLOAD - 8 - header_len
    body = jumbf_len - header_len
    count = max(1, -(-body // room))
    return count * (4 + 8 + header_len) + body


def jpeg_insertion_offset(data: bytes) -> int:
    """Offset just past SOI and any leading APP0/APP1 segments."""
    pos = 2
    for seg in _walk_jpeg(data):
        if seg.file_offset != pos or seg.marker not in (APP0, APP1):
            break
        pos = seg.file_offset + seg.total_range[1]
    return pos


def make_chunk(type_code: str, payload: bytes) -> bytes:
    ctype = type_code.encode("ascii")
    crc = zlib.crc32(ctype + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + ctype + payload + struct.pack(">I", crc)


def build_png(chunks: list[tuple[str, bytes]]) -> bytes:
    return PNG_SIGNATURE + b"".join(make_chunk(t, p) for t, p in chunks)


def png_insertion_offset(data: bytes) -> int:
    """Offset just past the IHDR chunk."""
    for chunk in _walk_png(data):
        if chunk.type_code == "IHDR":
            return chunk.total_range[0] + chunk.total_range[1]
        break
    raise MalformedContainer("PNG does not start with IHDR")


def splice(data: bytes, offset: int, insert: bytes) -> bytes:
    return data[:offset] + insert + data[offset:]


def strip_provenance(image: ImageBytes) -> bytes:
    """Return the file bytes with every provenance carrier removed."""
    if image.format is ImageFormat.JPEG:
        drop = [s.total_range for s in scan_jpeg_segments(image)
                if s.marker == APP11 and s.payload[:2] == APP11_COMMON_ID]
    elif image.format is ImageFormat.PNG:
        drop = [c.total_range for c in scan_png_chunks(image) if c.type_code == PROVENANCE_CHUNK]
    else:
        raise UnsupportedFormat("only JPEG and PNG carry provenance")
    out = bytearray()
    pos = 0
    for start, length in sorted(drop):
        out += image.data[pos:start]
        pos = start + length
    out += image.data[pos:]
    return bytes(out)
