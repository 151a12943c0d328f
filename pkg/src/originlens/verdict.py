"""Verdict decision table and report rendering.

``decide`` maps per-layer evidence onto one of five statuses. Precedence,
first match wins:

1. manifest present, binding mismatch / chain untrusted, revoked or
   pin-mismatched / bad signature            -> Invalid
2. manifest valid and declares generative origin -> AIGenerated (high)
3. manifest valid                             -> Verified (high)
4. manifest present but unreadable, expired or with a bad assertion
   digest                                     -> Warning
5. no manifest, AI metadata or watermark      -> AIGenerated (medium)
6. no manifest otherwise                      -> NoData (low with search
   hits, none without)
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

from .trust import BindingResult, ChainStatus

SCHEMA_ID = "origin-lens/1"


class Layer(enum.Enum):
    PROVENANCE = "provenance"
    METADATA = "metadata"
    WATERMARK = "watermark"
    CONTEXT = "context"


LAYER_ORDER = list(Layer)


class Status(enum.Enum):
    VERIFIED = "verified"
    AI_GENERATED = "ai_generated"
    WARNING = "warning"
    INVALID = "invalid"
    NO_DATA = "no_data"


class Color(enum.Enum):
    GREEN = "green"
    PURPLE = "purple"
    ORANGE = "orange"
    RED = "red"
    GRAY = "gray"


class Confidence(enum.Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    NONE = "none"


STATUS_COLOR = {
    Status.VERIFIED: Color.GREEN,
    Status.AI_GENERATED: Color.PURPLE,
    Status.WARNING: Color.ORANGE,
    Status.INVALID: Color.RED,
    Status.NO_DATA: Color.GRAY,
}

STATUS_TITLE = {
    Status.VERIFIED: "Verified",
    Status.AI_GENERATED: "AI Generated",
    Status.WARNING: "Warning",
    Status.INVALID: "Invalid",
    Status.NO_DATA: "No Data",
}

_BROKEN_CHAIN = {ChainStatus.UNTRUSTED, ChainStatus.REVOKED, ChainStatus.PIN_MISMATCH}


@dataclass
class LayerEvidence:
    """Outcome of one layer.

    ``facts`` keys by layer:

    * provenance: ``manifest`` ("absent" | "present"), ``parse_error``,
      ``chain`` (ChainStatus), ``signature_valid``, ``binding``
      (BindingResult), ``assertions_ok``, ``generator``
    * metadata: ``ai_matches`` (list of AiMatch)
    * watermark: ``result`` (WatermarkResult), ``error``
    * context: ``hits`` (list of ReverseSearchHit), ``error``
    """

    layer: Layer
    executed: bool
    findings: list[str] = field(default_factory=list)
    facts: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.executed and self.findings:
            raise ValueError("a layer that did not execute cannot carry findings")


@dataclass(frozen=True)
class Verdict:
    status: Status
    confidence: Confidence
    reasons: tuple[str, ...] = ()

    @property
    def color(self) -> Color:
        return STATUS_COLOR[self.status]


@dataclass
class Report:
    verdict: Verdict
    layers: list[LayerEvidence]
    edit_history: list = field(default_factory=list)
    timings: dict[Layer, float] = field(default_factory=dict)
    input_digest: bytes = b""


def _facts(by_layer: dict[Layer, LayerEvidence], layer: Layer) -> dict[str, Any]:
    ev = by_layer.get(layer)
    return ev.facts if ev is not None and ev.executed else {}


def _manifest_verdict(pf: dict[str, Any]) -> Verdict:
    if pf.get("parse_error"):
        return Verdict(Status.WARNING, Confidence.HIGH, (f"manifest could not be read: {pf['parse_error']}",))

    chain, sig, binding = pf.get("chain"), pf.get("signature_valid"), pf.get("binding")
    invalid = []
    if binding is BindingResult.MISMATCH:
        invalid.append("hash mismatch: image content changed after signing")
    if chain in _BROKEN_CHAIN:
        invalid.append(f"certificate chain rejected ({chain.value})")
    if sig is False:
        invalid.append("claim signature does not verify")
    if invalid:
        return Verdict(Status.INVALID, Confidence.HIGH, tuple(invalid))

    valid = (chain is ChainStatus.TRUSTED and sig is True
             and binding is BindingResult.MATCH and pf.get("assertions_ok") is True)
    if valid:
        if pf.get("generator"):
            return Verdict(Status.AI_GENERATED, Confidence.HIGH,
                           (f"signed manifest declares generative origin: {pf['generator']}",))
        return Verdict(Status.VERIFIED, Confidence.HIGH,
                       ("valid manifest signed by a trusted certificate chain",))

    warnings = []
    if chain is ChainStatus.EXPIRED:
        warnings.append("signing certificate expired or not yet valid")
    elif chain is ChainStatus.MALFORMED:
        warnings.append("signing certificate chain could not be decoded")
    if pf.get("assertions_ok") is False:
        warnings.append("an assertion or ingredient does not match its digest in the claim")
    if sig is None:
        warnings.append("claim signature could not be checked")
    if binding is None:
        warnings.append("manifest has no usable hard binding")
    return Verdict(Status.WARNING, Confidence.HIGH, tuple(warnings) or ("manifest incomplete",))


def decide(evidence: list[LayerEvidence]) -> Verdict:
    by_layer: dict[Layer, LayerEvidence] = {}
    for ev in evidence:
        if ev.layer in by_layer:
            raise ValueError(f"duplicate evidence for layer {ev.layer.value}")
        by_layer[ev.layer] = ev

    pf = _facts(by_layer, Layer.PROVENANCE)
    matches = _facts(by_layer, Layer.METADATA).get("ai_matches") or []
    wm = _facts(by_layer, Layer.WATERMARK).get("result")
    hits = _facts(by_layer, Layer.CONTEXT).get("hits") or []
    wm_detected = wm is not None and wm.detected

    side = []
    for gen in dict.fromkeys(m.generator_name for m in matches):
        side.append(f"metadata matches AI generator signature: {gen}")
    if wm_detected:
        side.append(f"{wm.watermark_kind} watermark detected by {wm.provider} "
                    f"(provider confidence {wm.provider_confidence:.2f})")
    context = [f"prior appearance: {h.url}" + (f" (first seen {h.first_seen.isoformat()})" if h.first_seen else "")
               for h in hits]

    if pf.get("manifest") == "present":
        v = _manifest_verdict(pf)
        return Verdict(v.status, v.confidence, v.reasons + tuple(side) + tuple(context))
    if matches or wm_detected:
        return Verdict(Status.AI_GENERATED, Confidence.MEDIUM,
                       ("no provenance manifest",) + tuple(side) + tuple(context))
    if hits:
        return Verdict(Status.NO_DATA, Confidence.LOW,
                       ("no provenance manifest; reverse search results need your interpretation",)
                       + tuple(context))
    return Verdict(Status.NO_DATA, Confidence.NONE, ("no provenance manifest and no AI markers found",))


# -- rendering -------------------------------------------------------------------------

_ANSI = {Color.GREEN: "32", Color.PURPLE: "35", Color.ORANGE: "33", Color.RED: "31", Color.GRAY: "90"}


def _ts(value) -> str | None:
    return value.isoformat().replace("+00:00", "Z") if value is not None else None


def report_to_dict(report: Report) -> dict[str, Any]:
    v = report.verdict
    return {
        "schema": SCHEMA_ID,
        "status": v.status.value,
        "color": v.color.value,
        "confidence": v.confidence.value,
        "reasons": list(v.reasons),
        "layers": [
            {
                "layer": ev.layer.value,
                "executed": ev.executed,
                "findings": list(ev.findings),
                "timing_ms": round(report.timings[ev.layer], 3) if ev.layer in report.timings else None,
            }
            for ev in report.layers
        ],
        "edit_history": [
            {
                "manifest_label": e.manifest_label,
                "claim_generator": e.claim_generator,
                "timestamp": _ts(e.timestamp),
                "action": e.action,
                "ingredient_digest": e.ingredient_digest.hex() if e.ingredient_digest else None,
            }
            for e in report.edit_history
        ],
        "input_sha256": report.input_digest.hex(),
    }


def render_report(report: Report, mode: str = "human", ansi: bool = False) -> str:
    if mode == "json":
        return json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n"
    if mode != "human":
        raise ValueError(f"unknown render mode {mode!r}")

    v = report.verdict
    color = v.color.value.upper()
    if ansi:
        color = f"\x1b[{_ANSI[v.color]}m{color}\x1b[0m"
    lines = [
        f"status: {STATUS_TITLE[v.status]}",
        f"color: {color}",
        f"confidence: {v.confidence.value}",
        f"sha256: {report.input_digest.hex()}",
        "reasons:",
    ]
    lines += [f"  - {r}" for r in v.reasons]
    if report.edit_history:
        lines.append("edit history (oldest first):")
        lines.append(f"  {'#':>2}  {'timestamp':<20}  {'generator':<28}  {'action':<24}  ingredient")
        for i, e in enumerate(report.edit_history, 1):
            ts = _ts(e.timestamp) or "unknown"
            digest = e.ingredient_digest.hex()[:16] if e.ingredient_digest else "-"
            flag = "  [cycle]" if e.cycle_detected else ""
            lines.append(f"  {i:>2}  {ts:<20}  {e.claim_generator[:28]:<28}  "
                         f"{(e.action or '-')[:24]:<24}  {digest}{flag}")
    lines.append("layers:")
    for ev in report.layers:
        if not ev.executed:
            lines.append(f"  {ev.layer.value}: skipped")
            continue
        lines.append(f"  {ev.layer.value}: {report.timings.get(ev.layer, 0.0):.2f} ms")
        lines += [f"    * {f}" for f in ev.findings]
    return "\n".join(lines) + "\n"
