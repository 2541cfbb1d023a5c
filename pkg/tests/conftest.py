import numpy as np
import pytest

from sflab.core import DistortionMatrix


@pytest.fixture
def hamming2():
    return DistortionMatrix.hamming(2)


def random_normalized(rng, K, J, scale=1.0):
    e = rng.random((K, J)) * scale
    e[np.arange(K), rng.integers(0, J, size=K)] = 0.0
    return DistortionMatrix(e)


# --- acceptance report: one PASS/FAIL line per criterion --------------------------------

_ACCEPTANCE: dict = {}


def record_criterion(number: int, detail: str) -> None:
    _ACCEPTANCE.setdefault(number, {})["detail"] = detail


def _criterion_number(nodeid: str):
    name = nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return None
    return int(name.split("_")[2])


def pytest_runtest_logreport(report):
    k = _criterion_number(report.nodeid)
    if k is None:
        return
    entry = _ACCEPTANCE.setdefault(k, {})
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry["ok"] = report.passed
        entry["seconds"] = report.duration


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[k]
        status = "PASS" if e.get("ok") else "FAIL"
        terminalreporter.write_line(
            f"criterion {k}: {status} ({e.get('seconds', 0.0):.1f} s) {e.get('detail', '')}")
