"""Shared fixtures and helpers for the diffnas test suite."""

import numpy as np
import pytest

from diffnas.denoiser import ArchitectureConfig, ArchSpace, build


MINIMAL_ARCH = ArchitectureConfig(8, 1, (1, 1, 1, 1), (False, False, False, False))

# CIFAR-scale reference configurations used throughout the calibration tests.
ORIG_DDPM = ArchitectureConfig(128, 2, (1, 2, 2, 2), (False, True, False, False))
SRCH_DDPM = ArchitectureConfig(96, 3, (1, 2, 3, 3), (False, True, False, True))
SRCH_IDDPM = ArchitectureConfig(96, 4, (1, 2, 3, 3), (True, True, True, False))
ORIG_IDDPM = ArchitectureConfig(128, 3, (1, 2, 2, 2), (False, True, True, False))


def random_arch(rng: np.random.Generator, space: ArchSpace = ArchSpace()) -> ArchitectureConfig:
    """Uniform draw from the desk search space (no budget filtering)."""
    return ArchitectureConfig(
        base_channel=int(rng.choice(space.base_channel_choices())),
        num_blocks=int(rng.integers(space.num_blocks_min, space.num_blocks_max + 1)),
        channel_mult=tuple(int(rng.integers(space.mult_min, space.mult_max + 1))
                           for _ in range(4)),
        attn=tuple(bool(rng.integers(0, 2)) for _ in range(4)),
    )


@pytest.fixture
def minimal_params():
    return build(MINIMAL_ARCH, 16, seed=0)
