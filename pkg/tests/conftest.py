import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from refpose.seqmodel.weights import ModelConfig, init_weights

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (title, [passed per test], [details])
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, (title, [], []))
    entry[1].append(rep.passed)
    detail = dict(item.user_properties).get("detail")
    if detail:
        entry[2].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, results, details = _CRITERIA[n]
        status = "PASS" if all(results) else "FAIL"
        line = f"[{status}] criterion {n:>2}: {title}"
        if details:
            line += " | " + "; ".join(details)
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(token_dim=12, state_dim=4, feat_dim=16, stage_dims=(4, 4, 8, 8), image_size=32,
                       pss_blocks=2, vss_depth=1, knn_k=4)


@pytest.fixture(scope="session")
def tiny_weights(tiny_config):
    return init_weights(tiny_config, seed=3)


@pytest.fixture(scope="session")
def full_weights():
    return init_weights(ModelConfig(), seed=0)
