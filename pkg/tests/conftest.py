import numpy as np
import pytest
import torch

from polyvox.synthetic import smoke_pipeline


@pytest.fixture(scope="session")
def smoke(tmp_path_factory):
    """Toy pipeline trained once per session on the 20-utterance synthetic corpus."""
    return smoke_pipeline(tmp_path_factory.mktemp("smoke"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
