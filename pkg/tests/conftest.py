"""
Shared fixtures and the slow-test switch (set XRAYDPN_RUN_SLOW=1 to run them).
"""
import os

import numpy as np
import pytest

from src.models import DpnSeConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance runs, enabled with XRAYDPN_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("XRAYDPN_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set XRAYDPN_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def small_config(se_enabled=True, input_size=24, strides=(1, 1, 2, 2), substages=(1, 2, 1, 1)):
    """A network small enough for finite-difference checks."""
    return DpnSeConfig(
        input_channels=1,
        input_size=input_size,
        stem={"out_channels": 4},
        stages=[
            {"num_substages": n, "residual_width": 4 + 2 * i, "dense_increment": 2,
             "bottleneck_width": 4, "stride": s}
            for i, (n, s) in enumerate(zip(substages, strides))
        ],
        se_enabled=se_enabled,
        se_reduction=2,
        num_classes=4,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return small_config()
