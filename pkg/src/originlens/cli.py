"""originlens command line.

Subcommands: ``analyze``, ``fixture``, ``bench``, ``trust``. Every
``analyze`` flag has an environment twin with the ``ORIGINLENS_`` prefix
(``--trust-store`` -> ``ORIGINLENS_TRUST_STORE``); a flag on the command
line wins. ``ORIGINLENS_API_TOKEN`` is read from the environment only.

Exit codes: 0 verified, 2 AI generated, 3 warning, 4 invalid, 5 no data,
1 operational error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import statistics
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from cryptography import x509

from . import __version__
from .container import APP1, ImageBytes, scan_jpeg_segments
from .errors import OriginLensError
from .metadata import EXIF_HEADER, parse_exif
from .netlayers import DEFAULT_TIMEOUT, NetPolicy
from .pipeline import Engine, EngineConfig
from .trust import TrustStore, issuer_name_hash, load_trust_store, spki_digest
from .verdict import Layer, Status, render_report

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CODES = {
    Status.VERIFIED: 0,
    Status.AI_GENERATED: 2,
    Status.WARNING: 3,
    Status.INVALID: 4,
    Status.NO_DATA: 5,
}
ENV_PREFIX = "ORIGINLENS_"
BENCH_SIZE = (4000, 3000)  # 12 MP


def _env(name: str):
    return os.environ.get(ENV_PREFIX + name)


def _env_flag(name: str) -> bool:
    return (_env(name) or "").strip().lower() in {"1", "true", "yes", "on"}


def parse_time(text: str) -> datetime:
    """RFC 3339 timestamp; a missing offset means UTC."""
    value = datetime.fromisoformat(text.strip().replace("Z", "+00:00").replace("z", "+00:00"))
    return value if value.tzinfo else value.replace(tzinfo=timezone.utc)


def _fail(msg: str) -> int:
    print(f"originlens: error: {msg}", file=sys.stderr)
    return EXIT_ERROR


def build_config(args, transport=None) -> EngineConfig:
    """Merge flags over ``ORIGINLENS_*`` environment variables."""
    stores = args.trust_store or [p for p in (_env("TRUST_STORE") or "").split(os.pathsep) if p]
    timeout_ms = args.timeout_ms if args.timeout_ms is not None else _env("TIMEOUT_MS")
    now = args.now or _env("NOW")
    policy = NetPolicy(
        watermark_enabled=args.enable_watermark or _env_flag("ENABLE_WATERMARK"),
        reverse_search_enabled=args.enable_reverse_search or _env_flag("ENABLE_REVERSE_SEARCH"),
        timeout=float(timeout_ms) / 1000 if timeout_ms is not None else DEFAULT_TIMEOUT,
        watermark_endpoint=args.watermark_endpoint or _env("WATERMARK_ENDPOINT"),
        search_endpoint=args.search_endpoint or _env("SEARCH_ENDPOINT"),
        api_token=_env("API_TOKEN"),
    )
    return EngineConfig(
        trust_store_paths=stores,
        pin_list_path=args.pins or _env("PINS"),
        revocation_list_path=args.crl or _env("CRL"),
        rule_table_path=args.rules or _env("RULES"),
        net_policy=policy,
        clock_override=parse_time(now) if now else None,
        transport=transport,
    )


def cmd_analyze(args, transport=None) -> int:
    try:
        config = build_config(args, transport)
    except ValueError as exc:
        return _fail(f"bad option value: {exc}")
    try:
        data = sys.stdin.buffer.read() if args.input == "-" else Path(args.input).read_bytes()
    except OSError as exc:
        return _fail(f"cannot read {args.input}: {exc.strerror or exc}")
    try:
        report = Engine(config).analyze(ImageBytes(data))
    except (OriginLensError, OSError, ValueError) as exc:
        return _fail(str(exc))
    mode = "json" if args.json else "human"
    sys.stdout.write(render_report(report, mode, ansi=not args.json and sys.stdout.isatty()))
    return EXIT_CODES[report.verdict.status]


def cmd_fixture(args) -> int:
    from .fixtures import write_corpus

    try:
        now = parse_time(args.now) if args.now else datetime.now(timezone.utc).replace(microsecond=0)
    except ValueError as exc:
        return _fail(f"bad --now: {exc}")
    try:
        expected = write_corpus(args.out, now, args.seed)
    except OSError as exc:
        return _fail(f"cannot write corpus to {args.out}: {exc.strerror or exc}")
    for name, status in sorted(expected.items()):
        print(f"{name}\t{status}")
    print(f"wrote {len(expected)} images, roots.pem, crl.txt and corpus.json to {args.out}")
    return EXIT_OK


def _exif_payload(image: ImageBytes) -> bytes | None:
    for seg in scan_jpeg_segments(image):
        if seg.marker == APP1 and seg.payload.startswith(EXIF_HEADER):
            return seg.payload
    return None


def _bench_fixture():
    from .fixtures import build_exif, make_test_ca, plain_jpeg, sign_and_embed

    now = datetime.now(timezone.utc).replace(microsecond=0)
    ca = make_test_ca(now, 30, seed="originlens-bench")
    exif = build_exif({0x010F: "Acme", 0x0110: "Bench Cam", 0x0131: "Acme Firmware 1.0"},
                      {0x9003: "2026:01:01 12:00:00"})
    image = sign_and_embed(plain_jpeg(*BENCH_SIZE, exif=exif), ca.issue_leaf("Bench Signer"), now=now)
    return image, ca.certificate


def cmd_bench(args) -> int:
    try:
        if args.input:
            image = ImageBytes(Path(args.input).read_bytes())
            store = load_trust_store(args.trust_store or [])
        else:
            image, root = _bench_fixture()
            store = TrustStore(roots=(root,))
    except (OSError, OriginLensError, ValueError) as exc:
        return _fail(f"cannot prepare benchmark image: {exc}")
    if args.iterations < 1:
        return _fail("--iterations must be >= 1")

    engine = Engine(EngineConfig(trust_store=store))
    exif = _exif_payload(image) if image.format.value == "jpeg" else None
    rows = []
    status = None
    for i in range(1, args.iterations + 1):
        report = engine.analyze(image)
        status = report.verdict.status
        t0 = time.perf_counter()
        if exif is not None:
            parse_exif(exif)
        exif_ms = (time.perf_counter() - t0) * 1000
        rows.append({"iteration": i,
                     "provenance_ms": report.timings[Layer.PROVENANCE],
                     "metadata_ms": report.timings[Layer.METADATA],
                     "exif_ms": exif_ms})

    print("iteration\tprovenance_ms\tmetadata_ms\texif_ms")
    for r in rows:
        print(f"{r['iteration']}\t{r['provenance_ms']:.3f}\t{r['metadata_ms']:.3f}\t{r['exif_ms']:.3f}")
    med_l1 = statistics.median(r["provenance_ms"] for r in rows)
    med_exif = statistics.median(r["exif_ms"] for r in rows)
    print(f"image: {len(image)} bytes, status {status.value}")
    print(f"median layer 1 (provenance): {med_l1:.2f} ms (budget {args.budget_l1:g} ms)")
    print(f"median EXIF parse: {med_exif:.3f} ms (budget {args.budget_exif:g} ms)")
    if med_l1 > args.budget_l1:
        print(f"WARN: layer 1 median {med_l1:.2f} ms exceeds budget {args.budget_l1:g} ms")
    if med_exif > args.budget_exif:
        print(f"WARN: EXIF parse median {med_exif:.3f} ms exceeds budget {args.budget_exif:g} ms")

    if args.report:
        from .plotting import plot_bench

        out = Path(args.report)
        try:
            out.mkdir(exist_ok=True)
            with open(out / "bench.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
            plot_bench(rows, {"provenance": args.budget_l1, "exif": args.budget_exif}, out / "bench.png")
        except OSError as exc:
            return _fail(f"cannot write report to {out}: {exc.strerror or exc}")
        print(f"wrote {out / 'bench.csv'} and {out / 'bench.png'}")
    return EXIT_OK


def _load_certs(path) -> list[x509.Certificate]:
    data = Path(path).read_bytes()
    if b"-----BEGIN" in data:
        return x509.load_pem_x509_certificates(data)
    return [x509.load_der_x509_certificate(data)]


def cmd_trust(args) -> int:
    try:
        certs = [c for p in args.certs for c in _load_certs(p)]
    except (OSError, ValueError) as exc:
        return _fail(f"cannot load certificates: {exc}")
    for c in certs:
        if args.action == "list":
            print(f"{c.subject.rfc4514_string()}\tnotAfter={c.not_valid_after_utc.isoformat()}\t"
                  f"spki-sha256={spki_digest(c).hex()}")
        elif args.action == "pin":
            print(f"{spki_digest(c).hex()}  # {c.subject.rfc4514_string()}")
        else:
            print(f"{issuer_name_hash(c).hex()}:{c.serial_number:x}  # {c.subject.rfc4514_string()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="originlens", description="Local image provenance verification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log diagnostics to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="verify one image and print a report")
    a.add_argument("input", help="image path, or - for standard input")
    a.add_argument("--json", action="store_true", help="emit the JSON report")
    a.add_argument("--trust-store", action="append", metavar="PEM", help="root certificates (repeatable)")
    a.add_argument("--pins", metavar="FILE", help="hex SPKI SHA-256 digests, one per line")
    a.add_argument("--crl", metavar="FILE", help="revoked 'issuerhash:serial' entries, one per line")
    a.add_argument("--rules", metavar="JSON", help="AI signature rule table (replaces the built-in one)")
    a.add_argument("--enable-watermark", action="store_true", help="send the image to the watermark API")
    a.add_argument("--enable-reverse-search", action="store_true", help="send the image to reverse search")
    a.add_argument("--watermark-endpoint", metavar="URL")
    a.add_argument("--search-endpoint", metavar="URL")
    a.add_argument("--timeout-ms", type=int, metavar="MS", help="network timeout per request")
    a.add_argument("--now", metavar="RFC3339", help="validation clock (default: system UTC)")

    f = sub.add_parser("fixture", help="write a signed test corpus")
    f.add_argument("--out", required=True, help="output directory (its parent must exist)")
    f.add_argument("--seed", default="origin-lens-fixtures", help="key derivation seed")
    f.add_argument("--now", metavar="RFC3339", help="signing clock (fix it for byte-identical output)")

    b = sub.add_parser("bench", help="time layer 1 and EXIF parsing on a 12 MP image")
    b.add_argument("--input", help="signed JPEG to time instead of a generated one")
    b.add_argument("--trust-store", action="append", metavar="PEM")
    b.add_argument("--iterations", type=int, default=10)
    b.add_argument("--budget-l1", type=float, default=500.0, metavar="MS")
    b.add_argument("--budget-exif", type=float, default=50.0, metavar="MS")
    b.add_argument("--report", metavar="DIR", help="write bench.csv and bench.png here")

    t = sub.add_parser("trust", help="inspect certificates for trust-store, pin and CRL files")
    t.add_argument("action", choices=["list", "pin", "revoke"],
                   help="list: summary; pin: pin-list line; revoke: CRL line")
    t.add_argument("certs", nargs="+", metavar="CERT", help="PEM bundle or DER certificate")
    return p


def main(argv=None, transport=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="originlens: %(levelname)s: %(message)s")
    if args.command == "analyze":
        return cmd_analyze(args, transport)
    if args.command == "fixture":
        return cmd_fixture(args)
    if args.command == "bench":
        return cmd_bench(args)
    return cmd_trust(args)


if __name__ == "__main__":
    sys.exit(main())
