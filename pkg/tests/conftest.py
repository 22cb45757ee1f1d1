import numpy as np
import pytest

from bbnn_imc.toy import preset_model


@pytest.fixture(scope="session")
def toy_cnn():
    return preset_model("toy-cnn", seed=0)


@pytest.fixture(scope="session")
def vgg_bc():
    return preset_model("vgg-binaryconnect", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance report ---------------------------------------------------------

_CRITERIA: dict[str, list] = {}


class Criterion:
    """Collects the sub-checks of one acceptance criterion."""

    def __init__(self, key: str, title: str):
        self.key, self.title = key, title
        self.checks: list[tuple[str, bool, str]] = []
        self.elapsed = 0.0

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(c[1] for c in self.checks)

    def verify(self) -> None:
        failed = [f"{n}: {d}" for n, ok, d in self.checks if not ok]
        assert not failed, "; ".join(failed)


@pytest.fixture(scope="session")
def criterion():
    def get(key: str, title: str) -> Criterion:
        entry = _CRITERIA.setdefault(key, [Criterion(key, title)])
        return entry[0]
    return get


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int("".join(filter(str.isdigit, k)) or 0), k)):
        c = _CRITERIA[key][0]
        status = "PASS" if c.ok else "FAIL"
        tr.write_line(f"criterion {c.key}: {status}  {c.title} ({c.elapsed:.1f} s)")
        for name, ok, detail in c.checks:
            tr.write_line(f"    [{'ok' if ok else 'FAIL'}] {name}: {detail}")
