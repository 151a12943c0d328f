from datetime import datetime, timezone

import pytest
from cryptography import x509

from originlens.fixtures import build_corpus, make_test_ca, plain_jpeg, plain_png
from originlens.pipeline import Engine, EngineConfig
from originlens.trust import TrustStore, load_revocations

NOW = datetime(2026, 1, 15, 12, 0, 0, tzinfo=timezone.utc)


class CountingTransport:
    """Records every call; answers with a canned reply per path suffix."""

    def __init__(self, replies=None):
        self.calls = []
        self.replies = replies or {}

    def post(self, url, body, headers, timeout):
        self.calls.append((url, len(body), dict(headers), timeout))
        for suffix, reply in self.replies.items():
            if url.endswith(suffix):
                return reply
        return 404, b""


@pytest.fixture(scope="session")
def now():
    return NOW


@pytest.fixture(scope="session")
def ca():
    return make_test_ca(NOW, 365, seed="tests")


@pytest.fixture(scope="session")
def signer(ca):
    return ca.issue_leaf("Test Signer")


@pytest.fixture(scope="session")
def store(ca):
    return TrustStore(roots=(ca.certificate,))


@pytest.fixture(scope="session")
def engine(store):
    return Engine(EngineConfig(trust_store=store, clock_override=NOW))


@pytest.fixture(scope="session")
def base_jpeg():
    return plain_jpeg()


@pytest.fixture(scope="session")
def base_png():
    return plain_png()


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    c = build_corpus(NOW, seed="tests-corpus")
    d = tmp_path_factory.mktemp("corpus")
    (d / "roots.pem").write_bytes(c["roots_pem"])
    (d / "crl.txt").write_text(c["crl"])
    for name, data in c["files"].items():
        (d / name).write_bytes(data)
    c["store"] = TrustStore(roots=tuple(x509.load_pem_x509_certificates(c["roots_pem"])),
                            revoked_serials=load_revocations(d / "crl.txt"))
    c["dir"] = d
    return c


@pytest.fixture(scope="session")
def corpus_engine(corpus):
    return Engine(EngineConfig(trust_store=corpus["store"], clock_override=NOW))


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``record(number, ok, detail)``. A test that
    dies before recording is reported as a failure under its own name."""
    seen = []

    def record(number, ok, detail, label=None):
        seen.append(number)
        ACCEPTANCE[number] = f"criterion {number}: {label or ('PASS' if ok else 'FAIL')}  {detail}"

    yield record
    if not seen:
        ACCEPTANCE[100 + len(ACCEPTANCE)] = f"{request.node.name}: FAIL  errored before recording a result"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
