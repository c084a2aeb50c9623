import numpy as np
import pytest

from readmit.cohort import GeneratorConfig, chronological_split, generate_cohort, median_impute
from readmit.model import TrainConfig, fit_gbdt


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(GeneratorConfig(n=6000, seed=11, missing_rate=0.05))


@pytest.fixture(scope="session")
def small_split(small_cohort):
    parts = chronological_split(small_cohort)
    return {
        "train": median_impute(parts.train, parts.train),
        "validation": median_impute(parts.train, parts.validation),
        "test": median_impute(parts.train, parts.test),
    }


@pytest.fixture(scope="session")
def small_model(small_split):
    tr = small_split["train"]
    model, _ = fit_gbdt(tr.X, tr.y, TrainConfig(n_estimators=40, max_depth=4, seed=0))
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting ------------------------------------------------------


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        detail = (detail + "; " if detail else "") + str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr).splitlines()[0]
    item.config._acceptance[number] = ("PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
