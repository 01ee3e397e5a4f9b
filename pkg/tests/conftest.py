import numpy as np
import pytest

from negseq import datagen
from negseq.data import (assign_cohorts, build_dataset, build_popularity,
                         temporal_split)


@pytest.fixture(scope="session")
def synth_small():
    """A small synthetic corpus shared by pipeline/runner tests."""
    interactions = datagen.generate_interactions(
        num_users=60, num_items=120, mean_len=30, seed=11)
    dataset = build_dataset(interactions, min_len=3)
    split = temporal_split(dataset, 0.8, 0.9)
    pop = build_popularity(split.train)
    cohorts = assign_cohorts(pop, 0.5, 0.8)
    return dataset, split, pop, cohorts


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
