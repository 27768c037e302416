import numpy as np
import pytest

from lfnet.config import RunConfig
from lfnet.data import generate_synthetic, split_dataset
from lfnet.experiment import prepare

# small enough for many training runs inside the unit suite
TINY_MODEL = dict(hidden=8, gat_dim=4, heads=1, att_dim=4, sie_dim=4, head_width=8, filters=2, gru_hidden=8)
TINY_DATA = dict(num_locations=12, num_steps=25, num_features=3)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic(seed=7, **TINY_DATA)


@pytest.fixture(scope="session")
def tiny_data(tiny_dataset):
    return prepare(tiny_dataset, split_dataset(tiny_dataset.num_steps))


@pytest.fixture(scope="session")
def tiny_iterative_data(tiny_dataset):
    return prepare(tiny_dataset, split_dataset(tiny_dataset.num_steps, "iterative"))


@pytest.fixture
def tiny_cfg():
    return RunConfig(epochs=3, refresh_epochs=2, full_history_epochs=2, **TINY_MODEL)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion; a test that raises records FAIL."""
    state = {"done": False}
    lines = request.config._acceptance_lines

    def record(name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        lines.append(line)
        state["done"] = True
        print(line)

    yield record
    if not state["done"]:
        lines.append(f"[FAIL] {request.node.name}: raised before the criterion was evaluated")


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
