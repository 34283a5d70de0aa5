"""Analytic multiply-accumulate estimates and the budget gate.

Two estimators share the FlopsReport shape: `flops_desk` walks the exact
desk-scale layer inventory, `flops_cifar_unet` prices the same genome on a
reference 2-D 32x32 UNet template (two 3x3 convs per residual block,
attention at flagged stages, skip concatenation, strided down/up sampling).
One MAC is counted as one FLOP throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import NUM_STAGES, ArchitectureConfig, layer_inventory
from .errors import InvalidRangeError


@dataclass(frozen=True)
class FlopsReport:
    total: int
    per_stage: tuple[int, int, int, int]
    params: int
    stem_head: int

    def __str__(self) -> str:
        lines = [f"total MACs : {self.total:,}", f"params     : {self.params:,}",
                 f"stem/head  : {self.stem_head:,}"]
        for i, s in enumerate(self.per_stage):
            lines.append(f"stage {i}    : {s:,}")
        return "\n".join(lines)


def flops_desk(arch: ArchitectureConfig, data_length: int = 16) -> FlopsReport:
    """Per-sample MAC count of the realized desk UNet."""
    per_stage = [0] * NUM_STAGES
    stem_head = 0
    params = 0
    for entry in layer_inventory(arch, data_length):
        params += int(np.prod(entry.shape))
        if entry.stage < 0:
            stem_head += entry.macs
        else:
            per_stage[entry.stage] += entry.macs
    return FlopsReport(total=stem_head + sum(per_stage),
                       per_stage=tuple(per_stage), params=params,
                       stem_head=stem_head)


def _cifar_block(in_ch: int, out_ch: int, res: int, temb_dim: int,
                 attn: bool) -> tuple[int, int]:
    """(macs, params) of one 2-D residual block, optional attention appended."""
    macs = in_ch * out_ch * 9 * res * res + out_ch * out_ch * 9 * res * res
    macs += temb_dim * out_ch
    params = (in_ch * out_ch * 9 + out_ch) + (out_ch * out_ch * 9 + out_ch)
    params += temb_dim * out_ch + out_ch
    if in_ch != out_ch:
        macs += in_ch * out_ch * res * res
        params += in_ch * out_ch + out_ch
    if attn:
        # projections only; profiler-style counts skip the score matmuls
        macs += 4 * out_ch * out_ch * res * res
        params += 4 * (out_ch * out_ch + out_ch)
    return macs, params


def flops_cifar_unet(arch: ArchitectureConfig, resolution: int = 32) -> FlopsReport:
    """MAC count of the genome realized as a reference CIFAR-scale 2-D UNet."""
    b = arch.base_channel
    temb = 4 * b
    w = [arch.width(i) for i in range(NUM_STAGES)]
    res = [resolution >> i for i in range(NUM_STAGES)]
    per_stage = [0] * NUM_STAGES
    params = 0

    # time-embedding trunk and stem / head convs
    stem_head = b * temb + temb * temb
    params += b * temb + temb + temb * temb + temb
    stem_head += 3 * w[0] * 9 * resolution * resolution
    params += 3 * w[0] * 9 + w[0]
    stem_head += w[0] * 3 * 9 * resolution * resolution
    params += w[0] * 3 * 9 + 3

    # encoder
    for i in range(NUM_STAGES):
        cin = w[0] if i == 0 else w[i - 1]
        for j in range(arch.num_blocks):
            m, p = _cifar_block(cin if j == 0 else w[i], w[i], res[i], temb,
                                arch.attn[i])
            per_stage[i] += m
            params += p
        if i < NUM_STAGES - 1:  # strided 3x3 downsample conv
            per_stage[i] += w[i] * w[i] * 9 * res[i + 1] * res[i + 1]
            params += w[i] * w[i] * 9 + w[i]

    # middle: block, attention, block at the lowest resolution
    i = NUM_STAGES - 1
    for with_attn in (True, False):
        m, p = _cifar_block(w[i], w[i], res[i], temb, with_attn)
        per_stage[i] += m
        params += p

    # decoder: num_blocks + 1 blocks per stage, each consuming one skip
    for i in reversed(range(NUM_STAGES)):
        incoming = w[i] if i == NUM_STAGES - 1 else w[i + 1]
        tail_skip = w[0] if i == 0 else w[i - 1]
        for j in range(arch.num_blocks + 1):
            skip = w[i] if j < arch.num_blocks else tail_skip
            cin = (incoming if j == 0 else w[i]) + skip
            m, p = _cifar_block(cin, w[i], res[i], temb, arch.attn[i])
            per_stage[i] += m
            params += p
        if i > 0:  # 3x3 conv after nearest upsample
            per_stage[i] += w[i] * w[i] * 9 * res[i - 1] * res[i - 1]
            params += w[i] * w[i] * 9 + w[i]

    return FlopsReport(total=stem_head + sum(per_stage),
                       per_stage=tuple(per_stage), params=params,
                       stem_head=stem_head)


def within_budget(arch: ArchitectureConfig, budget: float, scale: str = "desk",
                  data_length: int = 16, resolution: int = 32) -> bool:
    """True iff the selected estimator's total MACs <= budget (inclusive)."""
    if budget <= 0:
        raise InvalidRangeError(f"budget must be > 0, got {budget}")
    if scale == "desk":
        total = flops_desk(arch, data_length).total
    elif scale == "cifar":
        total = flops_cifar_unet(arch, resolution).total
    else:
        raise InvalidRangeError(f"unknown scale {scale!r}")
    return total <= budget
