import pytest

from mlpheat.analysis import RunConfig, run_experiment

EXAMPLE1_SEEDS = range(10)

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def example1_reports():
    """One report per seed for d=100, T=1, x=0, reference mlp(6,6), n=1..7 with M_n.

    Each seed contributes a single realisation per depth.
    """
    return [run_experiment(RunConfig(seed=s, repetitions=1, threads=1)) for s in EXAMPLE1_SEEDS]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
