"""Acceptance suite: one test per release criterion.

Each test prints a single `criterion N (<label>): PASS/FAIL [elapsed]` line
directly to the terminal, bypassing capture, and enforces its runtime limit.
The whole module runs offline: an autouse fixture denies socket creation, and
the remote-backend smoke test is opt-in via DIFFNAS_LLM_URL.
"""

import math
import os
import socket
import statistics
import time
from contextlib import contextmanager

import numpy as np
import pytest

from diffnas import diffusion
from diffnas.denoiser import (ArchitectureConfig, ArchSpace, TrainStrategy,
                              backward, build, forward)
from diffnas.diffusion import forward_sample, gen_dataset
from diffnas.errors import BackendUnavailableError
from diffnas.flops import flops_cifar_unet
from diffnas.frechet import fid_between
from diffnas.proxy import MutationBackend, SearchMemory
from diffnas.rankcorr import kendall, pearson, spearman, ranking_accuracy
from diffnas.schedule import build_cosine, build_linear
from diffnas.search import (FULL_TRAINING_MULTIPLIER, SearchConfig,
                            rfid_evaluate, run_search, search_round)

from conftest import ORIG_DDPM, ORIG_IDDPM, SRCH_DDPM, SRCH_IDDPM
from test_rankcorr import merge_sort_kendall

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(autouse=True)
def no_network(request, monkeypatch):
    """The default suite must never open a socket."""
    if "remote" in request.node.name:  # the opt-in smoke test needs the network
        yield
        return
    def deny(*args, **kwargs):
        raise RuntimeError("network access attempted during the offline suite")
    monkeypatch.setattr(socket, "socket", deny)
    monkeypatch.setattr(socket, "create_connection", deny)
    yield


@contextmanager
def criterion(capsys, num, label, limit_s):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"\ncriterion {num} ({label}): FAIL "
                  f"[{time.monotonic() - start:.1f}s]")
        raise
    elapsed = time.monotonic() - start
    ok = elapsed <= limit_s
    with capsys.disabled():
        print(f"\ncriterion {num} ({label}): "
              f"{'PASS' if ok else 'FAIL (over time limit)'} [{elapsed:.1f}s]")
    assert ok, f"criterion {num} exceeded its {limit_s}s runtime limit"


# ---------------------------------------------------------------------------

def test_criterion_1_flops_calibration(capsys):
    with criterion(capsys, 1, "FLOPs calibration", 1.0):
        targets = [(SRCH_DDPM, 5.36e9), (ORIG_DDPM, 6.06e9),
                   (SRCH_IDDPM, 7.13e9), (ORIG_IDDPM, 8.14e9)]
        totals = []
        for arch, expected in targets:
            total = flops_cifar_unet(arch, 32).total
            assert abs(total - expected) / expected < 0.25, (arch, total)
            totals.append(total)
        # exact pairwise ordering of the four calibration networks
        assert totals == sorted(totals)
        assert len(set(totals)) == 4


GRAD_ARCHS = [
    # together these cover conv, time-embedding linears, skip projections,
    # attention at every stage, multi-block stages, stem, and head
    ArchitectureConfig(8, 1, (1, 1, 1, 1), (False, False, False, False)),
    ArchitectureConfig(8, 2, (1, 2, 1, 2), (True, False, False, False)),
    ArchitectureConfig(8, 1, (2, 1, 2, 1), (False, True, False, True)),
    ArchitectureConfig(8, 1, (1, 2, 2, 1), (False, False, True, False)),
    ArchitectureConfig(16, 2, (1, 1, 2, 2), (True, True, True, True)),
]


def test_criterion_2_gradient_correctness(capsys):
    with criterion(capsys, 2, "gradient correctness", 120.0):
        h = 1e-5
        for arch_i, arch in enumerate(GRAD_ARCHS):
            rng = np.random.default_rng(arch_i)
            params = build(arch, 16, seed=arch_i)
            for name, w in params.weights.items():
                if not np.any(w):  # activate zero-initialized branches
                    w[...] = 0.05 * rng.normal(size=w.shape)
            x = rng.normal(size=(2, 1, 16))
            t = np.array([3, 7])
            g_out = rng.normal(size=(2, 1, 16))
            forward(params, x, t, training=True, schedule_T=10)
            grads = backward(params, g_out)
            names = sorted(params.weights)
            for pick in rng.choice(len(names), size=25, replace=True):
                name = names[pick]
                w = params.weights[name]
                idx = np.unravel_index(int(rng.integers(w.size)), w.shape)
                orig = w[idx]
                w[idx] = orig + h
                fp = float(np.sum(forward(params, x, t, schedule_T=10) * g_out))
                w[idx] = orig - h
                fm = float(np.sum(forward(params, x, t, schedule_T=10) * g_out))
                w[idx] = orig
                fd = (fp - fm) / (2 * h)
                an = grads[name][idx]
                rel = abs(an - fd) / max(abs(an), abs(fd), 1e-5)
                assert rel < 1e-4, (arch, name, rel)


def test_criterion_3_forward_marginals(capsys):
    with criterion(capsys, 3, "forward-process statistics", 60.0):
        n, length = 100_000, 16
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=(1, length))
        for schedule in (build_linear(100), build_cosine(100)):
            for t in (1, 5, 25, 60, 100):
                abar = schedule.alpha_bar[t - 1]
                eps = rng.standard_normal((n, 1, length))
                x_t = forward_sample(np.broadcast_to(x0, (n, 1, length)), t,
                                     eps, schedule)
                target_mean = np.sqrt(abar) * x0[0]
                target_var = 1.0 - abar
                se = np.sqrt(target_var / n)
                assert np.all(np.abs(x_t.mean(axis=0)[0] - target_mean)
                              < 3.0 * se)
                var = x_t.var(axis=0)[0]
                assert np.all(np.abs(var - target_var) < 0.02 * target_var)


def test_criterion_4_frechet_oracle(capsys):
    with criterion(capsys, 4, "Frechet oracle", 60.0):
        n, d = 100_000, 4
        rng = np.random.default_rng(3)
        mu_a = np.array([0.0, 0.0, 0.0, 0.0])
        mu_b = np.array([1.0, -1.0, 0.5, 0.0])
        var_a = np.array([1.0, 2.0, 3.0, 4.0])
        var_b = np.array([2.0, 2.0, 2.0, 1.0])
        a = mu_a + np.sqrt(var_a) * rng.standard_normal((n, d))
        b = mu_b + np.sqrt(var_b) * rng.standard_normal((n, d))
        # diagonal covariances commute, so the trace term is elementwise
        closed = float(np.sum((mu_a - mu_b) ** 2)
                       + np.sum(var_a + var_b - 2.0 * np.sqrt(var_a * var_b)))
        measured = fid_between(a, b)
        assert abs(measured - closed) / closed < 0.05
        # invariances: identity, symmetry, joint rotation
        assert fid_between(a, a) < 1e-8
        assert fid_between(b, a) == pytest.approx(measured, rel=1e-12)
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        rotated = fid_between(a @ q.T, b @ q.T)
        assert rotated == pytest.approx(measured, rel=1e-8)


def test_criterion_5_rank_correlation_oracles(capsys):
    with criterion(capsys, 5, "rank-correlation oracles", 10.0):
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8,
                                                                    abs=1e-12)
        assert spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-12)
        assert kendall([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-12)
        rng = np.random.default_rng(17)
        for i in range(100):
            xs = rng.normal(size=50)
            ys = rng.normal(size=50)
            if i % 3 == 0:  # exercise the tie-correction path too
                xs = np.round(xs)
                ys = np.round(ys)
            assert kendall(xs, ys) == pytest.approx(
                merge_sort_kendall(list(xs), list(ys)), abs=1e-12)


# ---------------------------------------------------------------------------
# directional reproduction of the strategy-vs-budget ranking study

PILOTS = [
    ArchitectureConfig(8, 1, (1, 1, 1, 1), (False, False, False, False)),
    ArchitectureConfig(8, 1, (1, 1, 2, 2), (False, False, False, False)),
    ArchitectureConfig(8, 2, (1, 2, 2, 2), (False, False, False, False)),
    ArchitectureConfig(16, 1, (1, 1, 1, 1), (False, False, False, False)),
    ArchitectureConfig(16, 2, (1, 2, 2, 2), (False, True, False, False)),
    ArchitectureConfig(16, 3, (1, 2, 2, 2), (False, False, False, False)),
    ArchitectureConfig(24, 2, (1, 2, 2, 2), (False, True, False, False)),
    ArchitectureConfig(32, 2, (1, 2, 2, 2), (False, True, False, False)),
]

STANDARD = TrainStrategy(learning_rate=1e-4, dropout=0.3, diffusion_steps=200)
# Rapid-style variant: higher learning rate, lower dropout, ten times fewer
# diffusion steps.  The rate bump is 1.2x rather than 2x: tiny-batch training
# on the largest pilots destabilises at 2e-4, which scrambles the ranking.
RAPID = TrainStrategy(learning_rate=1.2e-4, dropout=0.1, diffusion_steps=20)


def test_criterion_6_budget_and_strategy_trends(capsys):
    with criterion(capsys, 6, "ranking-fidelity trends", 7200.0):
        dataset = gen_dataset("gaussian_mixture", 256, 16, 0)
        full_budget = FULL_TRAINING_MULTIPLIER * STANDARD.diffusion_steps

        def evaluate(arch_i, arch, strategy, budget, seed):
            return rfid_evaluate(arch, strategy, budget, dataset, "linear",
                                 seed=seed, eval_samples=256, sample_steps=20)

        ground_truth = [evaluate(i, a, STANDARD, full_budget, (0, 7000 + i))
                        for i, a in enumerate(PILOTS)]

        def spearman_at(strategy, budget, seed):
            rfids = [evaluate(i, a, strategy, budget, (100 + seed, i))
                     for i, a in enumerate(PILOTS)]
            return ranking_accuracy(rfids, ground_truth).spearman

        budgets = (25, 50, 100)
        std_medians = []
        for budget in budgets:
            vals = [spearman_at(STANDARD, budget, s) for s in range(5)]
            std_medians.append(statistics.median(vals))
        rapid_median = statistics.median(
            [spearman_at(RAPID, 50, s) for s in range(5)])
        with capsys.disabled():
            print(f"\n  standard medians at {budgets}: "
                  f"{[round(m, 3) for m in std_medians]}; "
                  f"rapid at half budget: {rapid_median:.3f}")
        # (a) correlation improves with truncation budget (median of 5 seeds)
        assert std_medians[0] <= std_medians[1] <= std_medians[2]
        assert std_medians[2] > std_medians[0]
        # (b) the rapid strategy at half the standard budget ranks at least
        #     as faithfully as the standard strategy at that budget
        assert rapid_median >= std_medians[1]
        assert rapid_median >= 0.6


# ---------------------------------------------------------------------------

def _search_config():
    return SearchConfig(rounds=10, budget=2.0e6, eval_budget=20,
                        eval_samples=48, dataset_size=64, global_seed=0)


def test_criterion_7_end_to_end_search(capsys, tmp_path):
    with criterion(capsys, 7, "end-to-end search", 1800.0):
        config = _search_config()
        dataset = gen_dataset("gaussian_mixture", 64, 16, seed=5)

        def backend():
            return MutationBackend(ArchSpace(), config.budget, data_length=16,
                                   seed=0)

        log = str(tmp_path / "full.jsonl")
        best_arch, memory, report = run_search(config, backend(), dataset,
                                               log_path=log)
        assert report["rounds"] == 10
        for r in memory.accepted_records():
            assert r.flops <= config.budget
        for a, b in zip(report["best_so_far"], report["best_so_far"][1:]):
            assert b <= a
        # crash-resume at several interruption points reproduces the log
        full_bytes = open(log, "rb").read()
        for stop in (1, 4, 7):
            partial = str(tmp_path / f"resume_{stop}.jsonl")
            mem = SearchMemory(budget=config.budget)
            be = backend()
            for _ in range(stop):
                search_round(mem, config, be, dataset, log_path=partial)
            run_search(config, backend(), dataset, log_path=partial)
            assert open(partial, "rb").read() == full_bytes, stop
        # byte equality against the frozen reference log
        golden = open(os.path.join(FIXTURES, "acceptance_search_r10.jsonl"),
                      "rb").read()
        assert full_bytes == golden


def test_criterion_8_search_improves_over_baseline(capsys):
    with criterion(capsys, 8, "search improves over round 0", 10800.0):
        dataset = gen_dataset("gaussian_mixture", 64, 16, seed=5)
        wins = 0
        for seed in range(10):
            config = SearchConfig(rounds=10, budget=2.0e6, eval_budget=20,
                                  eval_samples=48, dataset_size=64,
                                  global_seed=seed)
            backend = MutationBackend(ArchSpace(), config.budget,
                                      data_length=16, seed=seed)
            best_arch, memory, report = run_search(config, backend, dataset)
            round0 = memory.records[0]
            if report["best_rfid"] <= round0.rfid:
                wins += 1
        with capsys.disabled():
            print(f"\n  selection beat round 0 in {wins}/10 repetitions")
        assert wins >= 8


def test_criterion_9_offline_hermeticity(capsys):
    with criterion(capsys, 9, "offline hermeticity", 10.0):
        # the guard fixture is active: socket creation must fail
        with pytest.raises(RuntimeError):
            socket.socket()
        with pytest.raises(RuntimeError):
            socket.create_connection(("localhost", 80))
        # without credentials the remote backend refuses to construct,
        # so no code path in the default suite can reach the network
        for var in ("DIFFNAS_LLM_URL", "DIFFNAS_LLM_KEY"):
            assert not os.environ.get(var), \
                f"{var} must not be set for the offline suite"
        from diffnas.proxy import RemoteBackend
        with pytest.raises(BackendUnavailableError):
            RemoteBackend()


@pytest.mark.skipif(not os.environ.get("DIFFNAS_LLM_URL"),
                    reason="remote backend smoke test is opt-in via "
                           "DIFFNAS_LLM_URL / DIFFNAS_LLM_KEY")
def test_remote_backend_smoke(monkeypatch):
    """Opt-in: one prompt round-trip through the configured endpoint."""
    from diffnas.proxy import RemoteBackend, propose
    from diffnas.diffusion import RunSettings
    backend = RemoteBackend()
    memory = SearchMemory(budget=2.0e6)
    exchange = propose(backend, space=ArchSpace(), settings=RunSettings(),
                       memory=memory, budget=2.0e6, round_index=0)
    assert exchange.raw_response
    # the response either parses to an in-space architecture or records why not
    assert exchange.parsed is not None or exchange.error
