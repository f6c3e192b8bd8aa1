import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240911)


def random_measure(rng, n_atoms, dim=1, span=2.0, lattice=None):
    """Random empirical measure with optional lattice-aligned atoms."""
    from mfcpoisson.measures import EmpiricalMeasure

    atoms = rng.uniform(-span, span, size=(n_atoms, dim))
    if lattice is not None:
        atoms = np.round(atoms / lattice) * lattice
    w = rng.uniform(0.2, 1.0, size=n_atoms)
    return EmpiricalMeasure(atoms, w / w.sum())
