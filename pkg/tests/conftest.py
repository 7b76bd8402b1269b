import os
import sys
from pathlib import Path

import numpy as np
import pytest

# src/ 配下をトップレベルパッケージとして import する
sys.path.append(str(Path(__file__).resolve().parents[1] / "src"))

from Domain.model_config import ModelConfig  # noqa: E402
from Network.unet import build_unet  # noqa: E402
from Services.synth_data import SOURCE_DOMAIN, generate_domain, scaled_domain  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical / timing checks (DGST_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("DGST_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set DGST_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(base_width=2, depth=2)


@pytest.fixture
def tiny_model(tiny_config):
    return build_unet(tiny_config, seed=0)


@pytest.fixture
def tiny_samples():
    return generate_domain(scaled_domain(SOURCE_DOMAIN, 8), 4, seed=3).samples


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
