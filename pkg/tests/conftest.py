"""Shared fixtures plus the acceptance-criteria summary.

Tests named ``test_criterion_NN*`` (in test_acceptance.py) are tracked per
criterion number; after the run a summary section prints one PASS/FAIL line
for each of the eleven criteria, aggregating multiple tests per criterion
with AND.
"""

import re

import pytest

import cevsim as cs

CRITERIA = {
    1: "positivity suite (zero negatives / clamps, 9 step sizes)",
    2: "finite-life-time demonstration (EM goes negative)",
    3: "strong-error table reproduction (+-20%)",
    4: "convergence-order fits (3-point / 5-point bands)",
    5: "distance table (factor 2 of d(SD,HAL), d(SD,ALF))",
    6: "ALF oracle equivalence (bisection / quadratic)",
    7: "SV price-error tables at rho = 0, -0.4, -0.8 (+-25%)",
    8: "byte-identical CSV across reruns and worker counts",
    9: "lattice invariants (telescoping, correlation, variance)",
    10: "algebraic step identities",
    11: "ALF/SD relative cost >= 50x",
}

_results: dict[int, list[str]] = {}

_CRITERION_RE = re.compile(r"test_criterion_(\d+)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    match = _CRITERION_RE.match(item.name)
    if match and report.when == "call":
        _results.setdefault(int(match.group(1)), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        outcomes = _results.get(number)
        if outcomes is None:
            verdict = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            verdict = "PASS"
        elif any(o == "failed" for o in outcomes):
            verdict = "FAIL"
        else:
            verdict = "SKIPPED"
        terminalreporter.write_line(
            f"criterion {number:2d}: {verdict:7s} {CRITERIA[number]}"
        )


@pytest.fixture(scope="session")
def paper_params():
    """The benchmark parameter set (x0, k1, k2, k3, q, T)."""
    return cs.CevParams(k1=1 / 16, k2=1.0, k3=0.4, q=0.75, x0=1 / 16, T=1.0)


@pytest.fixture(scope="session")
def implicit_config():
    return cs.SchemeConfig(theta=1.0, big_theta=0.5)


@pytest.fixture
def write_config(tmp_path):
    """Write config text to a temp file and return its path."""

    def write(text, name="run.cfg"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    return write


PAPER_CONFIG_TEXT = """\
k1 = 0.0625
k2 = 1
k3 = 0.4
q  = 0.75
x0 = 0.0625
t  = 1
theta = 1
big_theta = 0.5
"""
