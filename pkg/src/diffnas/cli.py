"""Operator surface: subcommands, TOML run configuration, run directories.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import math
import os
import shutil
import sys
from dataclasses import replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import denoiser, diffusion, report
from .denoiser import (ArchitectureConfig, ArchSpace, StrategySpace,
                       TrainStrategy)
from .diffusion import RunSettings, gen_dataset
from .errors import ConfigError, DiffNasError
from .flops import flops_cifar_unet, flops_desk
from .frechet import fid_between
from .proxy import MutationBackend, RemoteBackend, ScriptedBackend, SearchMemory
from .schedule import build_cosine, build_linear
from .search import (SearchConfig, StepCounter, ablation_report, run_search,
                     search_strategy, select_best)

MEMORY_LOG = "memory.jsonl"
CONFIG_SNAPSHOT = "config.toml"
LOCK_FILE = ".lock"


# ---------------------------------------------------------------------------
# Run configuration

_TOP_KEYS = {"rounds", "budget", "eval_budget", "eval_samples", "sample_steps",
             "global_seed", "backend", "fixture", "dataset_kind",
             "dataset_size", "data_length"}
_SECTION_KEYS = {
    "strategy": {"learning_rate", "dropout", "diffusion_steps"},
    "settings": {"schedule_kind", "T", "sample_steps", "batch_size"},
    "space": {"base_channel_min", "base_channel_max", "base_channel_step",
              "num_blocks_min", "num_blocks_max", "mult_min", "mult_max"},
    "strategy_space": {"learning_rates", "dropouts", "diffusion_steps"},
}


def load_config(path: str) -> tuple[SearchConfig, StrategySpace, str | None]:
    """Parse a TOML run configuration; unknown keys are hard errors.

    Returns (search config, strategy space, optional fixture path).
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e

    for key in data:
        if key in _SECTION_KEYS:
            if not isinstance(data[key], dict):
                raise ConfigError(f"{path}: section [{key}] must be a table")
            for sub in data[key]:
                if sub not in _SECTION_KEYS[key]:
                    raise ConfigError(f"{path}: unknown key {key}.{sub!r}")
        elif key not in _TOP_KEYS:
            raise ConfigError(f"{path}: unknown key {key!r}")

    config = SearchConfig()
    scalars = {k: data[k] for k in _TOP_KEYS & data.keys()
               if k != "fixture"}
    config = replace(config, **scalars)
    if "strategy" in data:
        config = replace(config, strategy=replace(config.strategy, **data["strategy"]))
    if "settings" in data:
        config = replace(config, settings=replace(config.settings, **data["settings"]))
    if "space" in data:
        config = replace(config, arch_space=replace(config.arch_space, **data["space"]))
    sspace = StrategySpace()
    if "strategy_space" in data:
        sspace = StrategySpace(
            learning_rates=tuple(data["strategy_space"].get(
                "learning_rates", sspace.learning_rates)),
            dropouts=tuple(data["strategy_space"].get("dropouts", sspace.dropouts)),
            diffusion_steps=tuple(data["strategy_space"].get(
                "diffusion_steps", sspace.diffusion_steps)),
        )
    return config, sspace, data.get("fixture")


def dump_config(config: SearchConfig, sspace: StrategySpace | None = None,
                fixture: str | None = None) -> str:
    """TOML text that load_config parses back to an equal configuration."""
    sspace = sspace or StrategySpace()

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, (tuple, list)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    lines = [
        f"rounds = {config.rounds}",
        f"budget = {fmt(config.budget)}",
        f"eval_budget = {config.eval_budget}",
        f"eval_samples = {config.eval_samples}",
        f"sample_steps = {config.sample_steps}",
        f"global_seed = {config.global_seed}",
        f"backend = {fmt(config.backend)}",
        f"dataset_kind = {fmt(config.dataset_kind)}",
        f"dataset_size = {config.dataset_size}",
        f"data_length = {config.data_length}",
    ]
    if fixture:
        lines.append(f"fixture = {fmt(fixture)}")
    lines += [
        "",
        "[strategy]",
        f"learning_rate = {fmt(config.strategy.learning_rate)}",
        f"dropout = {fmt(config.strategy.dropout)}",
        f"diffusion_steps = {config.strategy.diffusion_steps}",
        "",
        "[settings]",
        f'schedule_kind = {fmt(config.settings.schedule_kind)}',
        f"T = {config.settings.T}",
        f"sample_steps = {config.settings.sample_steps}",
        f"batch_size = {config.settings.batch_size}",
        "",
        "[space]",
    ]
    space = config.arch_space
    lines += [
        f"base_channel_min = {space.base_channel_min}",
        f"base_channel_max = {space.base_channel_max}",
        f"base_channel_step = {space.base_channel_step}",
        f"num_blocks_min = {space.num_blocks_min}",
        f"num_blocks_max = {space.num_blocks_max}",
        f"mult_min = {space.mult_min}",
        f"mult_max = {space.mult_max}",
        "",
        "[strategy_space]",
        f"learning_rates = {fmt(sspace.learning_rates)}",
        f"dropouts = {fmt(sspace.dropouts)}",
        f"diffusion_steps = {fmt(sspace.diffusion_steps)}",
    ]
    return "\n".join(lines) + "\n"


def parse_arch_flag(text: str) -> ArchitectureConfig:
    """Parse `base_channel=128,num_blocks=2,mult=1:2:2:2,attn=0:1:0:0`."""
    kv = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        if not val:
            raise ConfigError(f"bad --arch component {part!r}")
        kv[key.strip()] = val.strip()
    try:
        return ArchitectureConfig(
            base_channel=int(kv["base_channel"]),
            num_blocks=int(kv["num_blocks"]),
            channel_mult=tuple(int(x) for x in kv["mult"].split(":")),
            attn=tuple(bool(int(x)) for x in kv["attn"].split(":")),
        )
    except KeyError as e:
        raise ConfigError(f"--arch missing component {e}") from e
    except ValueError as e:
        raise ConfigError(f"bad --arch value: {e}") from e


def make_backend(config: SearchConfig, fixture: str | None):
    if config.backend == "mutation":
        return MutationBackend(config.arch_space, config.budget,
                               config.data_length, seed=config.global_seed)
    if config.backend == "scripted":
        if not fixture:
            raise ConfigError("scripted backend requires a fixture path")
        return ScriptedBackend(fixture)
    if config.backend == "remote":
        return RemoteBackend()
    raise ConfigError(f"unknown backend {config.backend!r}")


class RunLock:
    """One CLI process per run directory."""

    def __init__(self, run_dir: str):
        self.path = os.path.join(run_dir, LOCK_FILE)

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DiffNasError(
                f"run directory is locked by another process: {self.path}")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        os.unlink(self.path)


# ---------------------------------------------------------------------------
# Subcommands

def _schedule_from_args(kind: str, T: int):
    return build_cosine(T) if kind == "cosine" else build_linear(T)


def cmd_gen_data(args) -> int:
    ds = gen_dataset(args.kind, args.n, args.length, args.seed)
    np.savez(args.out, samples=ds.samples, kind=ds.generator_kind, seed=ds.seed)
    print(f"wrote {args.n} x (1, {args.length}) samples to {args.out}")
    return 0


def _load_samples(path: str) -> np.ndarray:
    with np.load(path) as z:
        return z["samples"].copy()


def cmd_train(args) -> int:
    arch = parse_arch_flag(args.arch)
    strategy = TrainStrategy(args.lr, args.dropout, args.T)
    ds = gen_dataset(args.dataset_kind, args.dataset_size, args.length, args.seed)
    schedule = _schedule_from_args(args.schedule, args.T)
    params = denoiser.build(arch, args.length, args.seed)
    rng = np.random.default_rng(args.seed)
    adam = diffusion.AdamState(params) if args.optimizer == "adam" else None
    trace = []
    for step in range(args.steps):
        idx = rng.integers(0, len(ds.samples), size=args.batch_size)
        _, loss = diffusion.training_step(params, ds.samples[idx], schedule,
                                          strategy, rng, adam_state=adam)
        trace.append((step, loss))
    os.makedirs(args.out, exist_ok=True)
    denoiser.save_params(params, os.path.join(args.out, "params.npz"))
    report.write_loss_csv(trace, os.path.join(args.out, "loss.csv"))
    print(f"trained {args.steps} steps, final loss {trace[-1][1]:.5f}; "
          f"artifacts in {args.out}")
    return 0


def cmd_sample(args) -> int:
    params = denoiser.load_params(args.params)
    schedule = _schedule_from_args(args.schedule, args.T)
    x = diffusion.sample(params, schedule, args.n, args.steps, args.seed)
    np.savez(args.out, samples=x, kind="generated", seed=args.seed)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_eval_fid(args) -> int:
    fid = fid_between(_load_samples(args.a), _load_samples(args.b))
    print(f"{fid:.6f}")
    return 0


def cmd_flops(args) -> int:
    arch = parse_arch_flag(args.arch)
    if args.scale == "desk":
        rep = flops_desk(arch, args.length)
    else:
        rep = flops_cifar_unet(arch, args.resolution)
    print(rep)
    if args.csv:
        report.write_flops_csv(rep, args.csv)
    return 0


def _prepare_run_dir(args) -> tuple[SearchConfig, StrategySpace, str | None]:
    os.makedirs(args.run_dir, exist_ok=True)
    snapshot = os.path.join(args.run_dir, CONFIG_SNAPSHOT)
    if os.path.exists(snapshot) and args.resume:
        config, sspace, fixture = load_config(snapshot)
    else:
        config, sspace, fixture = load_config(args.config)
        shutil.copyfile(args.config, snapshot)
    return config, sspace, fixture


def cmd_search(args) -> int:
    config, sspace, fixture = _prepare_run_dir(args)
    backend = make_backend(config, fixture)
    dataset = gen_dataset(config.dataset_kind, config.dataset_size,
                          config.data_length, config.global_seed)
    log_path = os.path.join(args.run_dir, MEMORY_LOG)
    with RunLock(args.run_dir):
        counter = StepCounter()
        best_arch, memory, rep = run_search(config, backend, dataset,
                                            log_path, counter)
        report.write_memory_csv(memory,
                                os.path.join(args.run_dir, "memory.csv"))
        report.write_rfid_svg(memory, os.path.join(args.run_dir, "rfid.svg"))
    print(f"rounds: {rep['rounds']}  accepted: {rep['accepted']}  "
          f"training steps: {counter.total}")
    print(f"best RFID {rep['best_rfid']:.6f} at:")
    print(best_arch.to_kv_block())
    return 0


def cmd_search_strategy(args) -> int:
    config, sspace, fixture = _prepare_run_dir(args)
    backend = make_backend(config, fixture) if config.backend != "mutation" else None
    dataset = gen_dataset(config.dataset_kind, config.dataset_size,
                          config.data_length, config.global_seed)
    pilots = _pilot_archs(config, args.pilots)
    with RunLock(args.run_dir):
        best, results = search_strategy(pilots, sspace, config.eval_budget,
                                        dataset, config, backend=backend)
        rows = [{"strategy": f"lr={r.strategy.learning_rate},"
                             f"do={r.strategy.dropout},"
                             f"steps={r.strategy.diffusion_steps}",
                 "budget": config.eval_budget,
                 "spearman": r.accuracy.spearman if r.accuracy else math.nan,
                 "pearson": r.accuracy.pearson if r.accuracy else math.nan,
                 "kendall": r.accuracy.kendall if r.accuracy else math.nan}
                for r in results]
        report.write_ablation_csv(rows, os.path.join(args.run_dir,
                                                     "strategy_search.csv"))
    print(f"best strategy: learning_rate={best.learning_rate} "
          f"dropout={best.dropout} diffusion_steps={best.diffusion_steps}")
    return 0


def _pilot_archs(config: SearchConfig, n: int) -> list[ArchitectureConfig]:
    """Deterministic budget-feasible pilot set spanning the space."""
    backend = MutationBackend(config.arch_space, config.budget,
                              config.data_length, seed=config.global_seed + 1)
    rng = np.random.default_rng(config.global_seed + 1)
    seen = set()
    pilots = []
    while len(pilots) < n:
        arch = backend._random_feasible(rng)
        if arch not in seen:
            seen.add(arch)
            pilots.append(arch)
    return pilots


def cmd_ablation(args) -> int:
    config, sspace, fixture = _prepare_run_dir(args)
    dataset = gen_dataset(config.dataset_kind, config.dataset_size,
                          config.data_length, config.global_seed)
    pilots = _pilot_archs(config, args.pilots)
    budgets = [int(b) for b in args.budgets.split(",")]
    rapid = TrainStrategy(config.strategy.learning_rate * 2.0, 0.1,
                          max(1, config.strategy.diffusion_steps // 10))
    strategies = [("standard", config.strategy), ("rapid", rapid)]
    with RunLock(args.run_dir):
        rows = ablation_report(pilots, strategies, budgets, dataset, config)
        out = os.path.join(args.run_dir, "ablation.csv")
        report.write_ablation_csv(rows, out)
    for row in rows:
        print(f"{row['strategy']}({row['budget']}): "
              f"spearman={row['spearman']:.3f} pearson={row['pearson']:.3f} "
              f"kendall={row['kendall']:.3f}")
    return 0


def cmd_report(args) -> int:
    snapshot = os.path.join(args.run_dir, CONFIG_SNAPSHOT)
    log_path = os.path.join(args.run_dir, MEMORY_LOG)
    if not os.path.exists(snapshot) or not os.path.exists(log_path):
        raise DiffNasError(f"{args.run_dir} is not a complete run directory")
    config, _, _ = load_config(snapshot)
    memory = SearchMemory.load_jsonl(log_path, config.budget)
    report.write_memory_csv(memory, os.path.join(args.run_dir, "memory.csv"))
    report.write_rfid_svg(memory, os.path.join(args.run_dir, "rfid.svg"))
    arch, rfid = select_best(memory)
    print(f"best RFID {rfid:.6f} at:")
    print(arch.to_kv_block())
    return 0


# ---------------------------------------------------------------------------
# Dispatch

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diffnas", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", parents=[], help="synthesize a dataset")
    p.add_argument("--kind", default="gaussian_mixture",
                   choices=["sine_mixture", "gaussian_mixture"])
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--length", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one architecture")
    p.add_argument("--arch", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--schedule", default="linear", choices=["linear", "cosine"])
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--optimizer", default="sgd", choices=["sgd", "adam"])
    p.add_argument("--dataset-kind", default="gaussian_mixture")
    p.add_argument("--dataset-size", type=int, default=256)
    p.add_argument("--length", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate samples from trained weights")
    p.add_argument("--params", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--schedule", default="linear", choices=["linear", "cosine"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval-fid", help="Frechet distance between sample files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_eval_fid)

    p = sub.add_parser("flops", help="analytic MAC estimate of an architecture")
    p.add_argument("--arch", required=True)
    p.add_argument("--scale", default="desk", choices=["desk", "cifar"])
    p.add_argument("--length", type=int, default=16)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_flops)

    for name, func in (("search", cmd_search),
                       ("search-strategy", cmd_search_strategy),
                       ("ablation", cmd_ablation)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--run-dir", required=True)
        p.add_argument("--resume", action="store_true")
        if name != "search":
            p.add_argument("--pilots", type=int, default=8)
        if name == "ablation":
            p.add_argument("--budgets", default="100,200,400")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="regenerate reports from a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DiffNasError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
