from __future__ import annotations

import numpy as np
import pytest


def pytest_configure(config):
    config.acceptance_results = {}


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "acceptance_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  "
                                    f"{title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion(request):
    """Store one PASS/FAIL line for the acceptance summary."""
    def record(number, title, checks):
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name} {'ok' if good else 'FAILED'} ({info})"
                           for name, good, info in checks)
        request.config.acceptance_results[number] = (title, ok, detail)
        failed = [f"{name}: {info}" for name, good, info in checks if not good]
        assert not failed, "; ".join(failed)
    return record
