import numpy as np
import pytest

from carlab.channel_sim import SceneConfig, make_dataset


def small_scene(**overrides) -> SceneConfig:
    base = dict(n_uav_locations=2, ues_per_location=30, seed=11)
    base.update(overrides)
    return SceneConfig(**base)


@pytest.fixture(scope="session")
def small_dataset():
    return make_dataset(small_scene())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
