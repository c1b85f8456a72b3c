import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0DE)


def make_unit_vectors(n: int, dimension: int, seed: int) -> np.ndarray:
    gen = np.random.default_rng(seed)
    mat = gen.standard_normal((n, dimension)).astype(np.float32)
    mat /= np.linalg.norm(mat.astype(np.float64), axis=1, keepdims=True)
    return mat
