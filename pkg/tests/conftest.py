import os
from pathlib import Path

import numpy as np
import pytest

from survsynth.data_io import load_dataset, mice_impute
from survsynth.demo_data import DATASET_NAMES, make_dataset, packaged_schema

REAL_DATA_DIR = Path(os.environ.get("SURVSYNTH_REAL_DATA", Path(__file__).resolve().parents[1] / "data" / "real"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def demo():
    """The four simulated benchmark stand-ins, keyed by name."""
    return {name: make_dataset(name) for name in DATASET_NAMES}


@pytest.fixture(scope="session")
def gbsg2(demo):
    return demo["gbsg2"]


@pytest.fixture(scope="session")
def flchain_imputed(demo):
    return mice_impute(demo["flchain"], n_iterations=5)


def real_dataset(name: str):
    """Load a user-supplied real benchmark CSV, or skip the calling test."""
    path = REAL_DATA_DIR / f"{name}.csv"
    if not path.exists():
        pytest.skip(
            f"real {name} data not supplied: place the CSV at {path} "
            "(see README 'Real benchmark data') to run the published-value replication"
        )
    dataset = load_dataset(path, packaged_schema(name))
    if np.isnan(dataset.features).any():
        dataset = mice_impute(dataset, n_iterations=5)
    return dataset
