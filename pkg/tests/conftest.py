"""Shared fixtures. Heavy artifacts (datasets, trained nets) are cached on
disk under tests/_artifacts so repeated runs do not regenerate them; all
generation is seeded, so cached and fresh artifacts are identical."""

import os
from pathlib import Path

import numpy as np
import pytest

from roughvol import gridgen
from roughvol.experiments import train_on
from roughvol.gridgen import GridSpec, read_dataset, write_dataset
from roughvol.neuralnet import SurrogateNet
from roughvol.rheston import RoughHestonPricer

ARTIFACTS = Path(__file__).parent / "_artifacts"
N_JOBS = min(2, os.cpu_count() or 1)


def get_dataset(tag, builder):
    ARTIFACTS.mkdir(exist_ok=True)
    path = ARTIFACTS / f"{tag}.csv"
    if path.exists():
        return read_dataset(path)
    quotes = builder()
    write_dataset(path, quotes)
    return quotes


def get_net(tag, dataset_builder, train_seed, **net_kwargs):
    ARTIFACTS.mkdir(exist_ok=True)
    path = ARTIFACTS / f"{tag}.json"
    if path.exists():
        return SurrogateNet.load(path)
    net = train_on(dataset_builder(), train_seed, **net_kwargs)
    net.save(path)
    return net


@pytest.fixture(scope="session")
def rh_pricer():
    return RoughHestonPricer()


@pytest.fixture(scope="session")
def small_flat_dataset():
    """40 random-grid flat-curve rHeston surfaces (5720 quotes)."""
    return get_dataset(
        "rh_flat_grid_q40_s101",
        lambda: gridgen.generate_dataset(
            "rheston", "flat", GridSpec("random_grid"), 40, 101, n_jobs=N_JOBS
        ),
    )


@pytest.fixture(scope="session")
def small_net(small_flat_dataset):
    """Quickly trained surrogate for calibration/noarb module tests."""
    return get_net(
        "net_small_flat_s101",
        lambda: small_flat_dataset,
        train_seed=202,
        max_epochs=220,
        patience=60,
    )
