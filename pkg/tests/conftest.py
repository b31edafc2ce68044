import numpy as np
import pytest

from cckm.core import BAR, DAY, ControlSchedule, Mode, WellSpec, build_model
from cckm.harness import RunConfig, make_scenario, run_experiment
from cckm.ident import Kind

ALL_KINDS = tuple(k.value for k in Kind)


@pytest.fixture(scope="session")
def case_a():
    cfg = RunConfig(case="a")
    return run_experiment(make_scenario(cfg), cfg, write=False)


@pytest.fixture(scope="session")
def case_b():
    cfg = RunConfig(case="b")
    return run_experiment(make_scenario(cfg), cfg, write=False)


@pytest.fixture(scope="session")
def case_a_all_kinds():
    cfg = RunConfig(case="a", models=ALL_KINDS)
    return run_experiment(make_scenario(cfg), cfg, write=False)


@pytest.fixture(scope="session")
def case_b_all_kinds():
    cfg = RunConfig(case="b", models=ALL_KINDS)
    return run_experiment(make_scenario(cfg), cfg, write=False)


@pytest.fixture
def small_rate_setup():
    model = build_model(7)
    well = WellSpec.centered(model, Mode.RATE)
    sched = ControlSchedule(Mode.RATE, DAY, np.full(10, 20.0 / DAY))
    return model, well, sched


@pytest.fixture
def small_bhp_setup():
    model = build_model(7, {"sw_init": 0.5})
    well = WellSpec.centered(model, Mode.BHP)
    sched = ControlSchedule(Mode.BHP, DAY, np.full(10, 110 * BAR))
    return model, well, sched


# -- acceptance reporting --------------------------------------------------

N_CRITERIA = 10
_acceptance_key = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_acceptance_key] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion: ``criterion(n, title, [(label, ok, detail), ...])``.

    Prints a single PASS/FAIL line and fails the test if any check failed.
    """
    results = request.config.stash[_acceptance_key]

    def record(n, title, checks):
        ok = all(c[1] for c in checks)
        failed = "; ".join(f"{label}: {detail}" for label, good, detail in checks if not good)
        detail = failed if failed else "; ".join(f"{label}: {d}" for label, _, d in checks)
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} | {detail}"
        results[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_acceptance_key, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(results.get(n, f"FAIL criterion {n}: not evaluated"))
