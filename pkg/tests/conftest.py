import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def tiny_run_kwargs(tmp_path):
    """A pipeline configuration small enough for sub-second runs."""
    return dict(
        phantom="spheres", size=32, detector_rows=2, rotations=3,
        per_rotation=8, window=8, iterations=2, noise_i0=0.0,
        ground_truth_iters=20, out=str(tmp_path / "run"))
