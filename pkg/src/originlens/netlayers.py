"""Opt-in network layers: watermark detection and reverse image search.

Both are disabled by default. When a layer is disabled its function
returns ``SKIPPED`` without touching the transport, so no image bytes
leave the process.

Wire contract (both endpoints take the raw image as the POST body with
``Content-Type: application/octet-stream``)::

    POST {endpoint}/v1/detect -> {"detected": bool, "kind": str, "confidence": float}
    POST {endpoint}/v1/search -> {"hits": [{"url": str, "first_seen": str|null,
                                            "title": str|null}]}
"""

from __future__ import annotations

import enum
import json
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass
from datetime import date, datetime
from typing import Protocol
from urllib.parse import urlparse

from .container import ImageBytes
from .errors import TransportError

DEFAULT_TIMEOUT = 10.0


class Skipped(enum.Enum):
    SKIPPED = "skipped"


SKIPPED = Skipped.SKIPPED


class Transport(Protocol):
    def post(self, url: str, body: bytes, headers: dict[str, str], timeout: float) -> tuple[int, bytes]:
        ...


class UrllibTransport:
    """Plain HTTP(S) transport on top of urllib."""

    def post(self, url, body, headers, timeout):
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read() or b""
        except (urllib.error.URLError, socket.timeout, OSError) as exc:
            raise TransportError(f"request to {url} failed: {exc}") from None


@dataclass(frozen=True)
class NetPolicy:
    watermark_enabled: bool = False
    reverse_search_enabled: bool = False
    timeout: float = DEFAULT_TIMEOUT
    watermark_endpoint: str | None = None
    search_endpoint: str | None = None
    api_token: str | None = None

    @property
    def any_enabled(self) -> bool:
        return self.watermark_enabled or self.reverse_search_enabled


@dataclass(frozen=True)
class WatermarkResult:
    detected: bool
    watermark_kind: str
    provider_confidence: float | None
    provider: str


@dataclass(frozen=True)
class ReverseSearchHit:
    url: str
    first_seen: date | None = None
    title: str | None = None


def _call(endpoint: str | None, path: str, image: ImageBytes, policy: NetPolicy, transport) -> object:
    if not endpoint:
        raise TransportError(f"no endpoint configured for {path}")
    headers = {"Content-Type": "application/octet-stream"}
    if policy.api_token:
        headers["Authorization"] = f"Bearer {policy.api_token}"
    url = endpoint.rstrip("/") + path
    status, body = transport.post(url, image.data, headers, policy.timeout)
    if not 200 <= status < 300:
        raise TransportError(f"{url} answered HTTP {status}")
    try:
        return json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise TransportError(f"{url} returned malformed JSON: {exc}") from None


def check_watermark(image: ImageBytes, policy: NetPolicy, transport=None) -> WatermarkResult | Skipped:
    if not policy.watermark_enabled:
        return SKIPPED
    reply = _call(policy.watermark_endpoint, "/v1/detect", image, policy, transport or UrllibTransport())
    if not isinstance(reply, dict) or not isinstance(reply.get("detected"), bool):
        raise TransportError("watermark reply lacks a boolean 'detected'")
    detected = reply["detected"]
    confidence = None
    if detected:
        confidence = reply.get("confidence")
        if isinstance(confidence, bool) or not isinstance(confidence, (int, float)) or not 0 <= confidence <= 1:
            raise TransportError("watermark reply confidence must be a number in [0, 1]")
        confidence = float(confidence)
    kind = reply.get("kind") or "unknown"
    if not isinstance(kind, str):
        raise TransportError("watermark reply 'kind' is not text")
    return WatermarkResult(detected, kind, confidence, urlparse(policy.watermark_endpoint).netloc)


def _parse_date(value) -> date | None:
    if not isinstance(value, str):
        return None
    try:
        return date.fromisoformat(value[:10])
    except ValueError:
        try:
            return datetime.fromisoformat(value.replace("Z", "+00:00")).date()
        except ValueError:
            return None


def reverse_search(image: ImageBytes, policy: NetPolicy, transport=None) -> list[ReverseSearchHit] | Skipped:
    """Look the image up at the search provider; hits come back oldest first."""
    if not policy.reverse_search_enabled:
        return SKIPPED
    reply = _call(policy.search_endpoint, "/v1/search", image, policy, transport or UrllibTransport())
    if not isinstance(reply, dict) or not isinstance(reply.get("hits"), list):
        raise TransportError("search reply lacks a 'hits' array")
    hits = []
    for h in reply["hits"]:
        if not isinstance(h, dict) or not isinstance(h.get("url"), str) or not h["url"]:
            raise TransportError(f"search hit without url: {h!r}")
        title = h.get("title")
        hits.append(ReverseSearchHit(h["url"], _parse_date(h.get("first_seen")),
                                     title if isinstance(title, str) else None))
    hits.sort(key=lambda hit: (hit.first_seen is None, hit.first_seen or date.min))
    return hits
