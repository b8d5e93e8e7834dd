import os

import numpy as np
import pytest

from pkge.kg import build_store
from pkge.model import ModelConfig
from pkge.synth import memorization_kg, random_kg

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def tiny_store():
    """20 entities, 4 relations, 120 random triples split 80/10/10."""
    splits = random_kg(np.random.default_rng(0))
    return build_store(splits["train"], splits["valid"], splits["test"])


@pytest.fixture(scope="session")
def memo_store():
    """30 entities, train == valid == test."""
    splits = memorization_kg(np.random.default_rng(7))
    return build_store(splits["train"], splits["valid"], splits["test"])


@pytest.fixture
def tiny_config():
    """Smallest config that still has multiple patches and heads."""
    return ModelConfig(d_e=8, d_r=12, d=4, heads=2, layers=2, d_f=8,
                       p1=0.0, p2=0.0, p3=0.0)
