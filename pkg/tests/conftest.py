import contextlib
import time

import numpy as np
import pytest

from histopipe.synth import synth_corpus

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six 512-px slides; level 2 is 128x128."""
    root = tmp_path_factory.mktemp("small_corpus")
    return synth_corpus(seed=7, n_slides=6, class_balance=0.5, out_dir=root, size=512)


def write_config(path, corpus, out, seed=7, extra=""):
    path.write_text(
        f"""seed = {seed}

[paths]
corpus = "{corpus.as_posix()}"
template = "auto"
out = "{out.as_posix()}"

[tile]
size_px = 32
stride_px = 32
min_coverage = 0.8

[model]
kind = "svm"

[eval]
k_folds = 3
{extra}
"""
    )
    return path


@pytest.fixture
def accept():
    """Record one acceptance criterion's outcome for the end-of-run summary."""

    @contextlib.contextmanager
    def run(number, title):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException:
            _ACCEPTANCE.append((number, title, "FAIL", time.perf_counter() - t0))
            print(f"[criterion {number}] FAIL  {title}")
            raise
        _ACCEPTANCE.append((number, title, "PASS", time.perf_counter() - t0))
        print(f"[criterion {number}] PASS  {title}")

    return run


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, secs in sorted(_ACCEPTANCE, key=lambda r: (r[0], r[1])):
        terminalreporter.write_line(f"{status}  {number:>2}. {title}  ({secs:.2f}s)")
