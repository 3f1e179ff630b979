import numpy as np
import pytest

from pcanet import instrument
from pcanet import tensor as T


@pytest.fixture(autouse=True)
def _clean_state():
    T.set_precision(32)
    instrument.reset()
    yield
    T.set_precision(32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with T.precision(64):
        yield


TINY = {
    "input_size": 16, "stage_channels": [4, 8], "image_size": 16, "glyph_size": 5, "distractors": 1,
    "num_classes": 3, "images_per_class": 4, "test_images_per_class": 2, "epochs": 2, "batch_size": 4,
}


def tiny_config(**overrides):
    from pcanet.config import RunConfig

    return RunConfig().updated({**TINY, **overrides})


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
