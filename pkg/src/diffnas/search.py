"""DiffNAS orchestration: truncated-training RFID evaluation, the
budget-gated iterative search loop, final selection, the training-strategy
search, and the ablation harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diffusion
from .denoiser import (ArchitectureConfig, ArchSpace, StrategySpace,
                       TrainStrategy, build)
from .diffusion import Dataset, RunSettings
from .errors import (DegenerateVarianceError, InvalidRangeError,
                     NoAcceptedCandidatesError, NonFiniteError)
from .flops import flops_desk
from .proxy import SearchMemory, SearchRecord, propose, propose_strategy
from .rankcorr import RankingAccuracy, ranking_accuracy
from .schedule import build_cosine, build_linear

FULL_TRAINING_MULTIPLIER = 10  # "fully trained" proxy = 10x the truncated budget


class StepCounter:
    """Global gradient-update accounting for cost budgets."""

    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += n


@dataclass
class SearchConfig:
    rounds: int = 10
    budget: float = 2.0e6  # desk-scale MACs
    strategy: TrainStrategy = field(
        default_factory=lambda: TrainStrategy(2e-4, 0.1, 50))
    eval_budget: int = 300
    eval_samples: int = 128
    sample_steps: int = 20
    global_seed: int = 0
    backend: str = "mutation"
    settings: RunSettings = field(default_factory=RunSettings)
    arch_space: ArchSpace = field(default_factory=ArchSpace)
    dataset_kind: str = "gaussian_mixture"
    dataset_size: int = 256
    data_length: int = 16

    def __post_init__(self):
        if self.rounds < 1 or self.eval_budget < 1 or self.eval_samples < 2:
            raise InvalidRangeError("rounds >= 1, eval_budget >= 1, eval_samples >= 2")


def _schedule_for(kind: str, T: int):
    return build_cosine(T) if kind == "cosine" else build_linear(T)


def rfid_evaluate(arch: ArchitectureConfig, strategy: TrainStrategy, eval_budget: int,
                  dataset: Dataset, schedule_kind: str, seed,
                  eval_samples: int = 128, sample_steps: int = 20,
                  batch_size: int = 16,
                  counter: Optional[StepCounter] = None) -> float:
    """Train `eval_budget` steps with `strategy`, sample, and score.

    strategy.diffusion_steps overrides the schedule length. Divergence maps
    to the +inf sentinel so the search loop can continue.
    """
    schedule = _schedule_for(schedule_kind, strategy.diffusion_steps)
    params = build(arch, dataset.length, seed)
    rng = np.random.default_rng([2, _seed_int(seed)])
    executed = 0
    try:
        # overflow on a diverging run is expected; it surfaces as NonFiniteError
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(eval_budget):
                idx = rng.integers(0, len(dataset.samples), size=batch_size)
                diffusion.training_step(params, dataset.samples[idx], schedule,
                                        strategy, rng)
                executed += 1
            samples = diffusion.sample(params, schedule, eval_samples,
                                       min(sample_steps, schedule.T),
                                       seed=_seed_int(seed) + 1)
    except NonFiniteError:
        return math.inf
    finally:
        if counter is not None:
            counter.add(executed)
    from .frechet import fid_between
    return fid_between(samples, dataset.samples)


def _seed_int(seed) -> int:
    if isinstance(seed, (tuple, list)):
        out = 0
        for s in seed:
            out = out * 1_000_003 + int(s)
        return out & 0x7FFFFFFF
    return int(seed)


def search_round(memory: SearchMemory, config: SearchConfig, backend,
                 dataset: Dataset, log_path: Optional[str] = None,
                 counter: Optional[StepCounter] = None) -> SearchRecord:
    """Run one proposal round and append exactly one record."""
    if memory.next_round >= config.rounds:
        raise InvalidRangeError("search already ran the configured number of rounds")
    round_index = memory.next_round
    exchange = propose(backend, space=config.arch_space, settings=config.settings,
                       memory=memory, budget=config.budget,
                       round_index=round_index)
    if exchange.parsed is None:
        record = SearchRecord(round=round_index, arch=None, flops=0,
                              rfid=math.inf, accepted=False,
                              rejection_reason="parse_failure")
    else:
        arch = exchange.parsed
        total = flops_desk(arch, dataset.length).total
        if total > config.budget:
            record = SearchRecord(round=round_index, arch=arch, flops=total,
                                  rfid=math.inf, accepted=False,
                                  rejection_reason="over_budget")
        else:
            rfid = rfid_evaluate(arch, config.strategy, config.eval_budget,
                                 dataset, config.settings.schedule_kind,
                                 seed=(config.global_seed, round_index),
                                 eval_samples=config.eval_samples,
                                 sample_steps=config.sample_steps,
                                 batch_size=config.settings.batch_size,
                                 counter=counter)
            if math.isfinite(rfid):
                record = SearchRecord(round=round_index, arch=arch, flops=total,
                                      rfid=rfid, accepted=True)
            else:
                record = SearchRecord(round=round_index, arch=arch, flops=total,
                                      rfid=math.inf, accepted=False,
                                      rejection_reason="training_diverged")
    if log_path is not None:
        memory.append_jsonl(log_path, record)
    else:
        memory.append(record)
    return record


def select_best(memory: SearchMemory) -> tuple[ArchitectureConfig, float]:
    """Minimal-RFID accepted record; ties broken by FLOPs, then round."""
    accepted = memory.accepted_records()
    if not accepted:
        raise NoAcceptedCandidatesError("no accepted record in memory")
    best = min(accepted, key=lambda r: (r.rfid, r.flops, r.round))
    return best.arch, best.rfid


def run_search(config: SearchConfig, backend, dataset: Dataset,
               log_path: Optional[str] = None,
               counter: Optional[StepCounter] = None):
    """Execute (or resume) the full iterative search and select the best.

    If log_path already holds k rounds, execution continues at round k.
    Returns (best_arch, memory, report dict).
    """
    import os
    if log_path is not None and os.path.exists(log_path):
        memory = SearchMemory.load_jsonl(log_path, config.budget)
    else:
        memory = SearchMemory(budget=config.budget)
    while memory.next_round < config.rounds:
        search_round(memory, config, backend, dataset, log_path, counter)
    best_arch, best_rfid = select_best(memory)
    best_so_far: list[float] = []
    cur = math.inf
    for r in memory.records:
        if r.accepted and r.rfid < cur:
            cur = r.rfid
        best_so_far.append(cur)
    report = {
        "rounds": memory.next_round,
        "accepted": len(memory.accepted_records()),
        "best_rfid": best_rfid,
        "best_so_far": best_so_far,
    }
    return best_arch, memory, report


@dataclass(frozen=True)
class StrategyResult:
    strategy: TrainStrategy
    accuracy: Optional[RankingAccuracy]
    rfids: tuple[float, ...]
    failure: Optional[str] = None


def _ground_truth_fids(pilot_archs: Sequence[ArchitectureConfig],
                       full_strategy: TrainStrategy, full_budget: int,
                       dataset: Dataset, config: SearchConfig,
                       counter: Optional[StepCounter] = None) -> list[float]:
    return [rfid_evaluate(a, full_strategy, full_budget, dataset,
                          config.settings.schedule_kind,
                          seed=(config.global_seed, 7000 + i),
                          eval_samples=config.eval_samples,
                          sample_steps=config.sample_steps,
                          batch_size=config.settings.batch_size, counter=counter)
            for i, a in enumerate(pilot_archs)]


def evaluate_strategy(strategy: TrainStrategy,
                      pilot_archs: Sequence[ArchitectureConfig],
                      full_fids: Sequence[float], eval_budget: int,
                      dataset: Dataset, config: SearchConfig,
                      counter: Optional[StepCounter] = None) -> StrategyResult:
    """Truncated RFIDs for every pilot and their correlation with full training."""
    # same seed basis as the ground-truth runs: evaluating the ground-truth
    # protocol at the full budget reproduces it exactly (self-ranking = 1.0)
    rfids = [rfid_evaluate(a, strategy, eval_budget, dataset,
                           config.settings.schedule_kind,
                           seed=(config.global_seed, 7000 + i),
                           eval_samples=config.eval_samples,
                           sample_steps=config.sample_steps,
                           batch_size=config.settings.batch_size, counter=counter)
             for i, a in enumerate(pilot_archs)]
    try:
        acc = ranking_accuracy(rfids, full_fids)
    except DegenerateVarianceError as e:
        return StrategyResult(strategy, None, tuple(rfids), failure=str(e))
    return StrategyResult(strategy, acc, tuple(rfids))


def search_strategy(pilot_archs: Sequence[ArchitectureConfig],
                    strategy_space: StrategySpace, eval_budget: int,
                    dataset: Dataset, config: SearchConfig, backend=None,
                    full_budget: Optional[int] = None,
                    counter: Optional[StepCounter] = None):
    """Pick the strategy whose truncated ranking best matches full training.

    Candidates come from a single backend proposal when one is given, else
    from the strategy-space grid. Returns (best strategy, result table).
    """
    if len(pilot_archs) < 4:
        raise InvalidRangeError("need at least 4 pilot architectures")
    full_budget = full_budget or FULL_TRAINING_MULTIPLIER * eval_budget
    full_fids = _ground_truth_fids(pilot_archs, config.strategy, full_budget,
                                   dataset, config, counter)
    if backend is not None:
        exchange = propose_strategy(backend, space=strategy_space,
                                    cost_budget=eval_budget,
                                    seed=config.global_seed)
        candidates = [exchange.parsed] if exchange.parsed is not None else []
        if not candidates:
            candidates = strategy_space.grid()
    else:
        candidates = strategy_space.grid()
    results = [evaluate_strategy(s, pilot_archs, full_fids, eval_budget, dataset,
                                 config, counter) for s in candidates]
    scored = [r for r in results if r.accuracy is not None]
    if not scored:
        raise NoAcceptedCandidatesError("every candidate strategy failed evaluation")
    best = max(scored, key=lambda r: r.accuracy.objective)
    return best.strategy, results


def ablation_report(pilot_archs: Sequence[ArchitectureConfig],
                    strategies: Sequence[tuple[str, TrainStrategy]],
                    budgets: Sequence[int], dataset: Dataset,
                    config: SearchConfig,
                    full_budget: Optional[int] = None,
                    counter: Optional[StepCounter] = None) -> list[dict]:
    """One row per (strategy, budget): all three correlation coefficients."""
    if len(pilot_archs) < 4 or not strategies or not budgets:
        raise InvalidRangeError("need >= 4 archs, >= 1 strategy, >= 1 budget")
    full_budget = full_budget or FULL_TRAINING_MULTIPLIER * max(budgets)
    full_fids = _ground_truth_fids(pilot_archs, config.strategy, full_budget,
                                   dataset, config, counter)
    rows = []
    for name, strategy in strategies:
        for budget in budgets:
            res = evaluate_strategy(strategy, pilot_archs, full_fids, budget,
                                    dataset, config, counter)
            rows.append({
                "strategy": name,
                "budget": budget,
                "spearman": res.accuracy.spearman if res.accuracy else math.nan,
                "pearson": res.accuracy.pearson if res.accuracy else math.nan,
                "kendall": res.accuracy.kendall if res.accuracy else math.nan,
            })
    return rows
