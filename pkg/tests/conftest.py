import hypothesis
import numpy as np
import pytest

from clepcast.synthetic import epidemic_panel, linear_panel, write_inputs

np.seterr(all="warn", under="ignore")

hypothesis.settings.register_profile("ci", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture(scope="session")
def epidemic():
    panel, pairs = epidemic_panel(n_counties=40, n_days=70, seed=3, grid_width=8)
    return panel, pairs


@pytest.fixture(scope="session")
def panel(epidemic):
    return epidemic[0]


@pytest.fixture(scope="session")
def fixture_files(tmp_path_factory):
    panel, pairs = epidemic_panel(n_counties=12, n_days=45, seed=11, grid_width=4)
    paths = write_inputs(panel, pairs, tmp_path_factory.mktemp("inputs"), seed=11)
    return panel, paths


@pytest.fixture(scope="session")
def linear_files(tmp_path_factory):
    panel, pairs = linear_panel(n_counties=3, n_days=30)
    paths = write_inputs(panel, pairs, tmp_path_factory.mktemp("linear"), seed=1)
    return panel, paths


# --- acceptance reporting -------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion.

    Usage: ``criterion(n, title)`` at the start of the test; the outcome is
    filled in from the test result.
    """
    def register(number: int, title: str, detail: str = ""):
        _ACCEPTANCE[number] = (title, "FAIL", detail)
        request.node._criterion = number

    return register


def note(number: int, detail: str) -> None:
    title, status, _ = _ACCEPTANCE[number]
    _ACCEPTANCE[number] = (title, status, detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item, "_criterion", None)
    if number is None or number not in _ACCEPTANCE:
        return
    title, _, detail = _ACCEPTANCE[number]
    if rep.skipped:
        _ACCEPTANCE[number] = (title, "SKIP", detail or str(rep.longrepr[-1]))
    elif rep.when == "call":
        _ACCEPTANCE[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
