"""Pytest configuration and fixtures."""

import tempfile
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from src.matrix_core import SymmetricMatrix, random_pool


@pytest.fixture
def temp_data_dir() -> Generator[Path, None, None]:
    """Create a temporary data directory."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so every test is reproducible."""
    return np.random.Generator(np.random.Philox(1234))


@pytest.fixture
def sample_matrix() -> SymmetricMatrix:
    """Small dense matrix with distinct eigenvalues."""
    return SymmetricMatrix.from_array([
        [4.0, 0.5, 0.0],
        [0.5, 3.0, 0.1],
        [0.0, 0.1, 1.0],
    ])


@pytest.fixture
def matrix_pool() -> list[SymmetricMatrix]:
    """Eight seeded 4x4 matrices."""
    return random_pool(4, 8, seed=11)
