import numpy as np
import pytest

from flowradio.core import AffineTransform, GridShape


class StubField:
    """Test double for a velocity field: ``fn(t, z)`` with model metadata."""

    def __init__(self, fn, shape=(4, 4), transform=None):
        self.fn = fn
        self.shape_ = GridShape(*shape)
        self.transform_ = transform or AffineTransform()
        self.theta_ = np.zeros(0)

    def __call__(self, t, z):
        return self.fn(t, np.asarray(z, dtype=np.float64))


def zero_field(shape=(4, 4), transform=None):
    return StubField(lambda t, z: np.zeros_like(z), shape, transform)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
