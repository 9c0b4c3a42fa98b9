import hashlib

import numpy as np
import pytest
import torch

from evovid.curriculum import CurriculumConfig
from evovid.data import SyntheticSpec, generate_synthetic_dataset

TINY_SPEC = SyntheticSpec(frame_size=16, clips_per_class=4, radius=3.0,
                          speed=1.0, seed=11)


def tiny_config(**overrides) -> CurriculumConfig:
    base = dict(n=2, iters_stage1=3, iters_per_step=2, batch_size=2,
                frame_size=16, code_dim=8, raw_dim=64, noise_dim=8,
                hidden_dim=16, g_base_channels=4, d_base_channels=4, seed=5)
    base.update(overrides)
    return CurriculumConfig(**base)


@pytest.fixture(scope="session")
def tiny_index():
    return generate_synthetic_dataset(TINY_SPEC)


def param_checksum(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


def state_param_checksum(state) -> str:
    h = hashlib.sha256()
    for model_name, named in state.named_model_params().items():
        for n, p in named:
            h.update(f"{model_name}.{n}".encode())
            h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


def rand_frames(rng: np.random.Generator, n: int, c: int, size: int) -> torch.Tensor:
    return torch.from_numpy(
        rng.uniform(-1, 1, size=(n, c, size, size)).astype(np.float32)
    )
