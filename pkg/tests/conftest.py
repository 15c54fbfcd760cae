from functools import lru_cache

import numpy as np
import pytest

from kornlab.geometry import DomainSpec, generate_mesh


@lru_cache(maxsize=None)
def catalog_mesh(name, n, labels="all-t", **kw):
    """Meshes are immutable, so tests share them."""
    return generate_mesh(DomainSpec(name, n, labels, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance bookkeeping -------------------------------------------------

_ACCEPTANCE = {}


class _Criterion:
    def __init__(self, number, title, limit_s):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.notes = []

    def note(self, text):
        self.notes.append(text)


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion's verdict and wall time."""
    import contextlib
    import time

    @contextlib.contextmanager
    def _run(number, title, limit_s):
        c = _Criterion(number, title, limit_s)
        t0 = time.perf_counter()
        try:
            yield c
        except BaseException as exc:
            _ACCEPTANCE[number] = (title, False, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}".splitlines()[0])
            print(f"ACCEPTANCE {number:>2} FAIL  {title}")
            raise
        elapsed = time.perf_counter() - t0
        ok = elapsed < limit_s
        detail = "; ".join(c.notes) + ("" if ok else f"; runtime {elapsed:.1f}s exceeds {limit_s}s")
        _ACCEPTANCE[number] = (title, ok, elapsed, detail)
        print(f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title} ({elapsed:.2f}s) {detail}")
        assert ok, f"runtime {elapsed:.1f}s exceeds the {limit_s}s budget"

    return _run


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, elapsed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}  [{elapsed:.2f}s]  {detail}")
