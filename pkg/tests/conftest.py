import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PTB_LEADS = ["i", "ii", "iii", "avr", "avl", "avf", "v1", "v2", "v3", "v4", "v5", "v6", "vx", "vy", "vz"]


def ptb_style_header(name="s0010_re", n_samples=38400, reason="Myocardial infarction", checksums=None):
    """A 15-lead header in the PTB diagnostic database layout."""
    lines = [f"{name} 15 1000 {n_samples}"]
    for i, lead in enumerate(PTB_LEADS):
        ck = 0 if checksums is None else checksums[i]
        lines.append(f"{name}.dat 16 2000 16 0 {-489 + i} {ck} 0 {lead}")
    lines += ["# age: 81", "# sex: female", "# ECG date: 01/10/1990",
              f"# Reason for admission: {reason}", "# Acute infarction (localization): infero-latera"]
    return "\n".join(lines) + "\n"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion; printed in the terminal summary."""

    def record(number, ok, detail):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number:>2}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
