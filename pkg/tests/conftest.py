import numpy as np
import pytest

from wfmini.kernels import SCRATCH_ENV


@pytest.fixture(autouse=True)
def isolated_scratch(tmp_path, monkeypatch):
    """Every test gets its own scratch root so file I/O never collides."""
    root = tmp_path / "scratch"
    root.mkdir()
    monkeypatch.setenv(SCRATCH_ENV, str(root))
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
