import pytest
import torch

from vibart import model as M

torch.set_num_threads(1)


@pytest.fixture
def tiny_config():
    return M.ModelConfig.preset("tiny", 40, dropout=0.0, max_positions=64)


@pytest.fixture
def tiny_params(tiny_config):
    return M.init_params(tiny_config, seed=0)
