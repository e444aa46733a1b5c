import numpy as np
import pytest

from fedne.geometry import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_blobs(n_per=20, classes=3, dim=4, sep=8.0, seed=0):
    r = np.random.default_rng(seed)
    centers = r.normal(size=(classes, dim)) * sep
    labels = np.repeat(np.arange(classes), n_per)
    return Dataset(centers[labels] + r.normal(size=(labels.size, dim)), labels)


def pytest_terminal_summary(terminalreporter):
    from summary import lines
    found = lines()
    if found:
        terminalreporter.section("acceptance criteria")
        for line in found:
            terminalreporter.write_line(line)
