"""Shared fixtures: one small synthetic dataset reused across test modules."""

import numpy as np
import pytest

from prism.data import SplitSpec, split
from prism.synth import ScmConfig, generate


@pytest.fixture(scope="session")
def small_dataset():
    """60 genes, short windows, confounded; split by chromosome."""
    cfg = ScmConfig(genes=60, length=96, tracks=3, confound_strength=1.0, seed=11)
    records, truths = generate(cfg)
    train, val, test = split(records, SplitSpec())
    assert train and val and test
    return {"config": cfg, "records": records, "truths": truths,
            "train": train, "val": val, "test": test}
