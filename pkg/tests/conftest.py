import os
import shutil

import pytest

from nmpo.synth import SynthConfig, generate_synthetic_corpus

# criterion number -> (title, passed, detail)
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}
N_CRITERIA = 9


@pytest.fixture
def acceptance():
    def record(n: int, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE[n] = (title, bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in ACCEPTANCE:
            title, ok, detail = ACCEPTANCE[n]
            tr.write_line(f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))
        else:
            tr.write_line(f"ACCEPTANCE {n} NOT RUN")


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """Default corpus (9 apps, sigma 0.05), generated once per session."""
    root = tmp_path_factory.mktemp("synth")
    return generate_synthetic_corpus(SynthConfig(), root / "corpus")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Cheap corpus for plumbing tests: 3 apps x 3 levels x 1 thread count."""
    root = tmp_path_factory.mktemp("small")
    cfg = SynthConfig(n_apps=3, levels_per_app=3, threads=(8,), seed=3)
    return generate_synthetic_corpus(cfg, root / "corpus")


@pytest.fixture
def corpus_copy(small_corpus, tmp_path):
    dst = tmp_path / "corpus"
    shutil.copytree(small_corpus.root, dst)
    return dst


@pytest.fixture(autouse=True)
def _fixed_timestamp(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    if "NMPO_THREADS" not in os.environ:
        monkeypatch.setenv("NMPO_THREADS", "0")


@pytest.fixture(scope="session")
def synth_records(synth_corpus):
    from nmpo.ingest import load_corpus
    from nmpo.metrics import annotate
    return annotate(load_corpus(synth_corpus.manifest))
