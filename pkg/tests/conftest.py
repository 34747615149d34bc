import pytest
import torch

from kvconsist.encoders import TransformerConfig, TreeLstmConfig
from kvconsist.model import KvModelConfig
from kvconsist.synthgen import GenConfig, generate_all


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return KvModelConfig(
        transformer=TransformerConfig(layers=1, heads=2, d=32, ff=64,
                                      max_len=64, dropout=0.0),
        tree=TreeLstmConfig(d_in=16, d_tree=8),
        d_struct=8)


@pytest.fixture(scope="session")
def tiny_splits():
    cfg = GenConfig(counts={"train": 240, "valid": 80, "test": 80},
                    seed=11, keyswap_fraction=0.1)
    return generate_all(cfg)


@pytest.fixture(autouse=True)
def _default_dtype():
    # Tests that switch to float64 for finite differences must not leak it.
    saved = torch.get_default_dtype()
    yield
    torch.set_default_dtype(saved)
