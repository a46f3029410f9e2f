import pytest
import torch

from nmrf.config import ModelConfig, RunConfig, validate_config

from tests.helpers import tiny_model_tree, tiny_run_tree


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(**tiny_model_tree())


@pytest.fixture
def tiny_run_config() -> RunConfig:
    return validate_config(tiny_run_tree())


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
