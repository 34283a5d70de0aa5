"""Analytic MAC estimation: desk instrumentation and CIFAR calibration."""

import numpy as np
import pytest

from diffnas import autodiff as ad
from diffnas.denoiser import ArchitectureConfig, build, forward
from diffnas.flops import flops_cifar_unet, flops_desk, within_budget

from conftest import (MINIMAL_ARCH, ORIG_DDPM, ORIG_IDDPM, SRCH_DDPM,
                      SRCH_IDDPM, random_arch)


def test_minimal_config_hand_total():
    # Hand enumeration for (8, 1, [1,1,1,1], no attention) at L=16.
    temb = 2 * 32 * 32
    stem = 8 * 3 * 16
    head = 8 * 3 * 16
    enc = sum((8 * 8 * 3 * L) * 2 + 32 * 8 for L in (16, 8, 4, 2))
    dec = sum(8 * 16 * 3 * L + 32 * 8 + 8 * 8 * 3 * L + 8 * 16 * L
              for L in (16, 8, 4, 2))
    expected = temb + stem + enc + dec + head
    assert expected == 37504
    r = flops_desk(MINIMAL_ARCH, 16)
    assert r.total == expected
    assert sum(r.per_stage) + temb + stem + head == r.total


def test_attention_strictly_increases_total():
    base = flops_desk(MINIMAL_ARCH, 16).total
    with_attn = flops_desk(
        ArchitectureConfig(8, 1, (1, 1, 1, 1), (False, True, False, False)), 16).total
    assert with_attn > base


@pytest.mark.parametrize("seed", range(10))
def test_desk_estimate_matches_instrumented_macs(seed):
    rng = np.random.default_rng(seed)
    a = random_arch(rng)
    params = build(a, 16, seed=seed)
    ad.mac_counter.reset()
    ad.mac_counter.enabled = True
    try:
        forward(params, np.zeros((1, 1, 16)), 1, schedule_T=10)
        measured = ad.mac_counter.total
    finally:
        ad.mac_counter.enabled = False
    estimate = flops_desk(a, 16).total
    assert abs(estimate - measured) <= 0.01 * measured


def _monotone_pairs():
    base = ArchitectureConfig(16, 2, (1, 2, 2, 2), (False, True, False, False))
    yield base, ArchitectureConfig(24, 2, (1, 2, 2, 2), base.attn)
    yield base, ArchitectureConfig(16, 3, (1, 2, 2, 2), base.attn)
    yield base, ArchitectureConfig(16, 2, (2, 2, 2, 2), base.attn)
    yield base, ArchitectureConfig(16, 2, (1, 2, 2, 3), base.attn)
    yield base, ArchitectureConfig(16, 2, (1, 2, 2, 2), (True, True, False, False))


@pytest.mark.parametrize("scale_fn", [flops_desk, flops_cifar_unet])
def test_estimators_monotone(scale_fn):
    for smaller, larger in _monotone_pairs():
        assert scale_fn(smaller).total < scale_fn(larger).total


# ---------------------------------------------------------------------------
# CIFAR calibration targets


CIFAR_TARGETS = [
    (ORIG_DDPM, 6.06e9),
    (ORIG_IDDPM, 8.14e9),
    (SRCH_DDPM, 5.36e9),
    (SRCH_IDDPM, 7.13e9),
]


@pytest.mark.parametrize("arch,target", CIFAR_TARGETS)
def test_cifar_calibration_targets(arch, target):
    total = flops_cifar_unet(arch).total
    assert abs(total - target) <= 0.25 * target


def test_cifar_calibration_ordering():
    vals = {name: flops_cifar_unet(a).total
            for name, a in [("srch_ddpm", SRCH_DDPM), ("orig_ddpm", ORIG_DDPM),
                            ("srch_iddpm", SRCH_IDDPM), ("orig_iddpm", ORIG_IDDPM)]}
    assert (vals["srch_ddpm"] < vals["orig_ddpm"]
            < vals["srch_iddpm"] < vals["orig_iddpm"])


# ---------------------------------------------------------------------------
# Budget gate


def test_budget_boundary_inclusive():
    est = flops_desk(MINIMAL_ARCH, 16).total
    assert within_budget(MINIMAL_ARCH, est, scale="desk")
    assert not within_budget(MINIMAL_ARCH, 0.9 * est, scale="desk")


def test_budget_cifar_reference_configs():
    b0 = flops_cifar_unet(ORIG_DDPM).total
    assert within_budget(ORIG_DDPM, b0, scale="cifar")
    assert within_budget(SRCH_DDPM, b0, scale="cifar")


def test_flops_report_structure():
    r = flops_desk(MINIMAL_ARCH, 16)
    assert len(r.per_stage) == 4
    assert r.params == 8793
    assert "total" in str(r)
