import numpy as np
import pytest
import torch

from groupdet.synth import SynthParams, generate_synthetic_scene


@pytest.fixture(scope="session", autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_clip():
    return generate_synthetic_scene(SynthParams(n_groups=3, n_loners=2, frame_count=6, seed=11))


@pytest.fixture(scope="session")
def clip_batch():
    return [
        generate_synthetic_scene(SynthParams(n_groups=3, n_loners=1, frame_count=6, motion_model=m, seed=20 + i))
        for i, m in enumerate(("walk-together", "gather", "queue", "random-walk"))
    ]


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
