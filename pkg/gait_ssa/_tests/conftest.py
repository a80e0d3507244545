import multiprocessing
import os

import numpy as np
import pytest
from pytest_trio.enable_trio_mode import *
from pytest_trio.enable_trio_mode import (
    pytest_collection_modifyitems as _trio_collection_modifyitems,
)

from .._dataset import GaitDataset
from .._synth import SynthConfig, generate_synthetic

RUN_SLOW = os.environ.get("GAIT_SSA_RUN_SLOW", "") not in ("", "0")


def pytest_collection_modifyitems(config, items):
    _trio_collection_modifyitems(items)
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set GAIT_SSA_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="package")
def manager():
    with multiprocessing.get_context("spawn").Manager() as mgr:
        yield mgr


@pytest.fixture(scope="package")
def small_dataset() -> GaitDataset:
    return generate_synthetic(SynthConfig(n_samples=24, seed=3, n_actors=4))


@pytest.fixture
def walk(small_dataset) -> np.ndarray:
    return small_dataset.data[0].copy()
