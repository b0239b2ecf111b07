import numpy as np
import pytest

from slvq.labels import SoftLabelMatrix


def random_labels(rng, n, c, alpha=0.5):
    """Dirichlet-distributed label rows (smaller alpha -> peakier)."""
    return SoftLabelMatrix(rng.dirichlet(np.full(c, alpha), size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
