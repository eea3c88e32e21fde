import numpy as np
import pytest

from rgbdglass.gradcheck import toy_network_config

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg():
    return toy_network_config()


class _Verdict:
    def __init__(self, store, number, title):
        self.store, self.number, self.title = store, number, title
        self.recorded = False

    def __call__(self, ok, detail=""):
        self.store[self.number] = (self.title, bool(ok), detail)
        self.recorded = True
        print(_line(self.number, self.title, bool(ok), detail))
        assert ok, detail


def _line(number, title, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}  {title}: {detail}"


@pytest.fixture
def criterion(request):
    """``criterion(n, title)`` returns a callable ``verdict(ok, detail)`` that records and asserts."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})
    made = []

    def make(number, title):
        v = _Verdict(store, number, title)
        made.append(v)
        return v

    yield make
    for v in made:
        if not v.recorded:
            store[v.number] = (v.title, False, "raised before reaching its verdict")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        terminalreporter.write_line(_line(number, *store[number]))
