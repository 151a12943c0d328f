"""Runs the four verification layers over one image and builds the report."""

from __future__ import annotations

import concurrent.futures
import hashlib
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .container import (ImageBytes, ImageFormat, extract_jumbf, salvage_jumbf, scan_jpeg_segments,
                        scan_png_chunks)
from .container import APP1, APP13
from .errors import (MalformedBox, MalformedContainer, MalformedMetadata, ManifestParseError,
                     RangeOutOfBounds, TransportError, UnreadableInput, UnsupportedAlgorithm)
from .jumbf import c2pa_uuid, parse_box_tree
from .manifest import (classify_generative_origin, extract_edit_history, parse_manifest_store,
                       resolve_assertions)
from .metadata import (EXIF_HEADER, MetadataRecordSet, detect_ai_signatures, load_rules,
                       parse_exif, parse_iptc, parse_png_text, parse_tiff)
from .netlayers import NetPolicy, check_watermark, reverse_search
from .trust import (BindingCheck, BindingResult, TrustStore, load_trust_store, normalize_exclusions,
                    verify_chain, verify_claim_signature, verify_hard_binding)
from .verdict import Layer, LayerEvidence, Report, decide

log = logging.getLogger(__name__)

PIPELINE_DEADLINE = 30.0
MAX_FINDING_VALUE = 120
# description box of a C2PA manifest store: type code, then the store uuid
STORE_SIGNATURE = b"jumd" + c2pa_uuid("c2pa")


@dataclass
class EngineConfig:
    trust_store_paths: list = field(default_factory=list)
    pin_list_path: str | None = None
    revocation_list_path: str | None = None
    rule_table_path: str | None = None
    net_policy: NetPolicy = field(default_factory=NetPolicy)
    clock_override: datetime | None = None
    # Preloaded material takes precedence over the paths above.
    trust_store: TrustStore | None = None
    rules: list | None = None
    transport: object | None = None
    deadline: float = PIPELINE_DEADLINE


def _within(spans, covering) -> bool:
    return all(any(cs <= s and s + n <= cs + cn for cs, cn in covering) for s, n in spans)


def _check_binding(binding, image: ImageBytes, carrier_ranges) -> BindingCheck:
    # A binding may only exclude the provenance carrier itself; wider
    # exclusions would leave content unbound.
    try:
        spans = normalize_exclusions(binding.exclusions, len(image))
    except RangeOutOfBounds:
        return verify_hard_binding(binding, image)
    if not _within(spans, normalize_exclusions(carrier_ranges, len(image))):
        return BindingCheck(BindingResult.MISMATCH, None, "binding excludes bytes outside the provenance carrier")
    return verify_hard_binding(binding, image)


def _provenance(image: ImageBytes, store: TrustStore, rules, now: datetime):
    ev = LayerEvidence(Layer.PROVENANCE, True, facts={"manifest": "absent"})
    f, facts = ev.findings, ev.facts
    carrier = None
    damaged = image.format is ImageFormat.UNKNOWN
    if damaged:
        f.append("unrecognized container format")
    else:
        try:
            carrier = extract_jumbf(image)
        except MalformedContainer as exc:
            f.append(f"container structure damaged: {exc}")
            damaged = True
    if damaged:
        # a broken walk must not hide a manifest: look for the carrier by signature
        broken = STORE_SIGNATURE in image.data
        try:
            carrier = salvage_jumbf(image.data)
        except MalformedContainer as exc:
            f.append(f"provenance carrier unreadable: {exc}")
            broken = True
        if carrier is not None:
            f.append("provenance carrier recovered by signature search")
        elif broken:
            facts.update(manifest="present", parse_error="provenance carrier is damaged")
            return ev, []
    if carrier is None:
        f.append("no provenance manifest embedded")
        return ev, []

    facts["manifest"] = "present"
    f.append(f"provenance carrier: {len(carrier.data)} bytes in {len(carrier.covered_ranges)} segment(s)")
    try:
        mstore = parse_manifest_store(parse_box_tree(carrier.data))
    except (MalformedBox, ManifestParseError) as exc:
        facts["parse_error"] = str(exc)
        f.append(f"manifest parse error: {exc}")
        return ev, []

    active = mstore.active
    f.append(f"active manifest {active.label} by {active.claim.claim_generator!r} "
             f"({len(mstore.manifests)} manifest(s) in store)")

    digests = resolve_assertions(active)
    facts["assertions_ok"] = all(ok for _, ok in digests)
    for label, ok in digests:
        if not ok:
            f.append(f"assertion {label} does not match its claimed digest")

    chain = verify_chain(active.signature.cert_chain, store, now)
    facts["chain"] = chain.status
    f.append(f"certificate chain: {chain.status.value} (leaf {chain.leaf_subject or '?'}, "
             f"{chain.chain_length} cert(s))")
    f.extend(f"  {note}" for note in chain.notes)

    try:
        facts["signature_valid"] = verify_claim_signature(active.signature, active.claim_bytes)
        f.append(f"claim signature ({active.signature.algorithm}): "
                 + ("valid" if facts["signature_valid"] else "INVALID"))
    except UnsupportedAlgorithm as exc:
        facts["signature_valid"] = None
        f.append(str(exc))

    if active.hard_binding is None:
        facts["binding"] = None
        f.append(f"hard binding unavailable: {active.hard_binding_error}")
    else:
        check = _check_binding(active.hard_binding, image, carrier.covered_ranges)
        facts["binding"] = check.result
        f.append(f"hard binding (sha256): {check.result.value}" + (f"; {check.note}" if check.note else ""))

    facts["generator"] = classify_generative_origin(active, rules)
    if facts["generator"]:
        f.append(f"manifest declares generative origin: {facts['generator']}")

    for m in mstore.manifests.values():
        for ref in m.claim.ingredient_refs:
            if ref.internal:
                ok = hashlib.sha256(mstore.manifests[ref.target].raw).digest() == ref.digest
                f.append(f"ingredient {ref.target} of {m.label}: digest {'ok' if ok else 'MISMATCH'}")
                # an altered ingredient breaks the recorded history like a bad assertion would
                facts["assertions_ok"] = facts["assertions_ok"] and ok
            elif ref.missing:
                f.append(f"ingredient {ref.target} of {m.label} is MISSING from the store")
                facts["assertions_ok"] = False
            else:
                f.append(f"ingredient {ref.target} of {m.label} is external (not checked)")
    return ev, extract_edit_history(mstore)


def _metadata(image: ImageBytes, rules):
    ev = LayerEvidence(Layer.METADATA, True)
    records = MetadataRecordSet()

    def run(parser, payload, what):
        try:
            records.extend(parser(payload))
        except MalformedMetadata as exc:
            ev.findings.append(f"{what} unreadable: {exc}")

    if image.format is ImageFormat.JPEG:
        try:
            segments = scan_jpeg_segments(image)
        except MalformedContainer:
            segments = scan_jpeg_segments(image, strict=False)
        for seg in segments:
            if seg.marker == APP1 and seg.payload.startswith(EXIF_HEADER):
                run(parse_exif, seg.payload, "EXIF block")
            elif seg.marker == APP13:
                run(parse_iptc, seg.payload, "IPTC block")
    elif image.format is ImageFormat.PNG:
        try:
            chunks = scan_png_chunks(image)
        except MalformedContainer:
            chunks = scan_png_chunks(image, strict=False)
        for c in chunks:
            # one chunk at a time so a corrupt zTXt does not hide its neighbours
            if c.type_code in ("tEXt", "zTXt", "iTXt"):
                run(parse_png_text, [c], f"{c.type_code} chunk")
            elif c.type_code == "eXIf":
                run(parse_tiff, c.payload, "eXIf chunk")

    matches = detect_ai_signatures(records, rules)
    for r in records:
        value = r.value if len(r.value) <= MAX_FINDING_VALUE else r.value[:MAX_FINDING_VALUE] + "..."
        ev.findings.append(f"{r.source.value} {r.key}: {value}")
    for m in matches:
        ev.findings.append(f"AI signature {m.rule_id} -> {m.generator_name} "
                           f"({m.matched_source.value} {m.matched_key}: {m.matched_excerpt!r})")
    ev.facts.update(records=records, ai_matches=matches)
    return ev


def _timed_call(fn, *args):
    start = time.perf_counter()
    try:
        return fn(*args), None, time.perf_counter() - start
    except TransportError as exc:
        return None, str(exc), time.perf_counter() - start


def _network_layers(image: ImageBytes, policy: NetPolicy, transport, deadline_at: float):
    """Run the enabled network layers concurrently; results in layer order."""
    jobs = []
    if policy.watermark_enabled:
        jobs.append((Layer.WATERMARK, check_watermark))
    if policy.reverse_search_enabled:
        jobs.append((Layer.CONTEXT, reverse_search))
    out: dict[Layer, tuple] = {}
    if not jobs:
        return out
    pool = concurrent.futures.ThreadPoolExecutor(max_workers=len(jobs))
    try:
        started = time.perf_counter()
        give_up = min(started + policy.timeout + 1.0, deadline_at)
        futures = {layer: pool.submit(_timed_call, fn, image, policy, transport) for layer, fn in jobs}
        for layer, fut in futures.items():
            try:
                out[layer] = fut.result(timeout=max(0.0, give_up - time.perf_counter()))
            except concurrent.futures.TimeoutError:
                out[layer] = (None, f"no reply within {policy.timeout:g} s", time.perf_counter() - started)
    finally:
        pool.shutdown(wait=False, cancel_futures=True)
    return out


class Engine:
    """Loaded trust material and rules, reusable across many images."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        c = self.config
        self.store = c.trust_store or load_trust_store(c.trust_store_paths, c.pin_list_path,
                                                      c.revocation_list_path)
        self.rules = c.rules if c.rules is not None else load_rules(c.rule_table_path)

    def analyze(self, image) -> Report:
        if not isinstance(image, ImageBytes):
            image = ImageBytes(image)
        if len(image) == 0:
            raise UnreadableInput("input is empty")
        c = self.config
        deadline_at = time.perf_counter() + c.deadline
        now = c.clock_override or datetime.now(timezone.utc)
        timings: dict[Layer, float] = {}

        t0 = time.perf_counter()
        prov, history = _provenance(image, self.store, self.rules, now)
        t1 = time.perf_counter()
        meta = _metadata(image, self.rules)
        t2 = time.perf_counter()
        timings[Layer.PROVENANCE] = (t1 - t0) * 1000
        timings[Layer.METADATA] = (t2 - t1) * 1000

        layers = [prov, meta]
        net = _network_layers(image, c.net_policy, c.transport, deadline_at)
        for layer in (Layer.WATERMARK, Layer.CONTEXT):
            if layer not in net:
                layers.append(LayerEvidence(layer, False))
                continue
            value, error, elapsed = net[layer]
            timings[layer] = elapsed * 1000
            ev = LayerEvidence(layer, True)
            if error is not None:
                ev.facts["error"] = error
                ev.findings.append(f"layer unavailable: {error}")
            elif layer is Layer.WATERMARK:
                ev.facts["result"] = value
                ev.findings.append(
                    f"{value.watermark_kind} watermark detected (confidence {value.provider_confidence:.2f})"
                    if value.detected else "no watermark detected")
            else:
                ev.facts["hits"] = value
                ev.findings.append(f"{len(value)} prior appearance(s)")
                ev.findings.extend(f"{h.first_seen or 'unknown date'}: {h.url}" for h in value)
            layers.append(ev)

        return Report(
            verdict=decide(layers),
            layers=layers,
            edit_history=history,
            timings=timings,
            input_digest=hashlib.sha256(image.data).digest(),
        )


def analyze(image, config: EngineConfig | None = None) -> Report:
    return Engine(config).analyze(image)
