import numpy as np
import pytest
import torch

from vesseldiff.config import RunConfig


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def desk_config(**overrides) -> RunConfig:
    """Small model + short horizons: fast enough for unit tests on one core."""
    cfg = RunConfig()
    cfg.data.history_len = 8
    cfg.data.horizon_len = 24
    cfg.model.embed_dim = 16
    cfg.model.lstm_hidden = 32
    cfg.model.cnn_channels = (8, 16, 32)
    cfg.model.model_dim = 64
    cfg.model.ff_dim = 128
    cfg.scene.grid_size = 32
    cfg.training.batch_size = 16
    cfg.training.max_steps = 10
    cfg.training.log_every = 5
    for key, val in overrides.items():
        section, _, name = key.partition(".")
        if name:
            setattr(getattr(cfg, section), name, val)
        else:
            setattr(cfg, section, val)
    cfg.validate()
    return cfg


@pytest.fixture
def tiny_cfg() -> RunConfig:
    return desk_config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
