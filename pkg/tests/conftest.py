"""
Shared fixtures. Long acceptance runs are marked slow and only run with
TURBDIP_RUN_SLOW=1.
"""
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from engine.generator import HourglassConfig
from engine.optimize import EsConfig, OptimizerConfig
from engine.pipeline import PipelineConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance run (set TURBDIP_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("TURBDIP_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set TURBDIP_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_gen_cfg():
    return HourglassConfig(scales=2, channels=8, skip_channels=2, latent_channels=4)


@pytest.fixture
def tiny_pipeline_cfg(tiny_gen_cfg):
    """A pipeline that fits each block for a handful of iterations"""
    return PipelineConfig(
        block_size=5,
        gen_cfg=tiny_gen_cfg,
        opt_cfg=OptimizerConfig(max_epoch=6),
        es_cfg=EsConfig(patience=100, patience_start=2, window=2),
        seed=3,
    )


@pytest.fixture
def ramp_frames():
    """n frames of a horizontal ramp, shifted one column per frame"""
    def make(n, h=8, w=8):
        base = np.linspace(0.1, 0.9, w + n)
        return [np.tile(base[k:k + w], (h, 1)) for k in range(n)]
    return make
