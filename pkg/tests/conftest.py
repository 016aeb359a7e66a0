import numpy as np
import pytest

from boolclf.datakit import SyntheticConfig, synth_generate
from boolclf.numcore import rng_stream
from boolclf.primitives import Classifier, PrimitiveBank


@pytest.fixture(scope="session")
def small_dataset():
    """Quick correlated dataset: 8 primitives, 24-dim features, 1500 images."""
    cfg = SyntheticConfig(m=8, d=24, n=1500, blocks=2, rho=0.8, noise=0.8, seed=7)
    return synth_generate(cfg)


@pytest.fixture()
def random_bank():
    """Random (untrained) bank of 4 classifiers at d=5, for algebra tests."""
    rng = rng_stream(11, "test-bank")
    names = ("a", "b", "c", "d_")
    return PrimitiveBank(
        d=5,
        names=names,
        classifiers={n: Classifier(rng.standard_normal(6)) for n in names},
    )
