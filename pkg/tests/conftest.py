import numpy as np
import pytest

from itercdma.codec import CodecSpec, CodedBpskSource, estimate_gcurve, make_codec
from itercdma.config import derive_stream

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def conv_codec():
    return make_codec(CodecSpec())


@pytest.fixture(scope="session")
def turbo_codec():
    return make_codec(CodecSpec.turbo())


@pytest.fixture(scope="session")
def conv_gcurve(conv_codec):
    """Monte Carlo decoder curve of the rate-1/2 convolutional chain.

    Estimated once per session; the grid is finer through the waterfall.
    """
    rng = derive_stream(1234, "tests/gcurve-conv", 0)
    grid = np.concatenate([np.linspace(0.25, 1.5, 11), np.linspace(1.75, 4.0, 6)])
    return estimate_gcurve(CodedBpskSource(conv_codec), grid, rng,
                           target_errors=120, max_codewords=300, label="conv")
