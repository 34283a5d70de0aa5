"""Proposal engine: prompt assembly, response parsing, search memory, and
interchangeable backends (remote LLM, scripted fixture, seeded mutation).

Response contract: the last fenced code block of a response must hold flat
`key=value` lines. Architectures use the 10 keys base_channel, num_blocks,
channel_mult_0..3, attn_0..3; strategies use learning_rate, dropout,
diffusion_steps. Malformed output is retried up to 3 times with the parse
error appended to the prompt.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import requests

from .denoiser import (NUM_STAGES, ArchitectureConfig, ArchSpace,
                       StrategySpace, TrainStrategy)
from .errors import (BackendUnavailableError, FixtureExhaustedError,
                     InvalidRangeError, ParseFailureError, RangeViolationError)
from .flops import flops_desk

MAX_PARSE_RETRIES = 3
_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


# ---------------------------------------------------------------------------
# Search memory

@dataclass(frozen=True)
class SearchRecord:
    round: int
    arch: ArchitectureConfig
    flops: int
    rfid: float
    accepted: bool
    rejection_reason: Optional[str] = None  # over_budget | parse_failure | training_diverged

    def to_json_line(self) -> str:
        d = {
            "round": self.round,
            "arch": None if self.arch is None else {
                "base_channel": self.arch.base_channel,
                "num_blocks": self.arch.num_blocks,
                "channel_mult": list(self.arch.channel_mult),
                "attn": [int(a) for a in self.arch.attn],
            },
            "flops": self.flops,
            "rfid": self.rfid if math.isfinite(self.rfid) else None,
            "accepted": self.accepted,
            "rejection_reason": self.rejection_reason,
        }
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "SearchRecord":
        d = json.loads(line)
        arch = None
        if d["arch"] is not None:
            arch = ArchitectureConfig(
                base_channel=d["arch"]["base_channel"],
                num_blocks=d["arch"]["num_blocks"],
                channel_mult=tuple(d["arch"]["channel_mult"]),
                attn=tuple(bool(a) for a in d["arch"]["attn"]),
            )
        rfid = d["rfid"] if d["rfid"] is not None else math.inf
        return cls(round=d["round"], arch=arch, flops=d["flops"], rfid=rfid,
                   accepted=d["accepted"], rejection_reason=d["rejection_reason"])


class SearchMemory:
    """Append-only record list with strictly increasing round indices."""

    def __init__(self, budget: float, records: Optional[list[SearchRecord]] = None):
        self.budget = budget
        self.records: list[SearchRecord] = []
        for r in records or []:
            self.append(r)

    @property
    def next_round(self) -> int:
        return self.records[-1].round + 1 if self.records else 0

    def append(self, record: SearchRecord) -> None:
        if self.records and record.round <= self.records[-1].round:
            raise InvalidRangeError(
                f"round {record.round} does not extend round {self.records[-1].round}")
        if record.accepted and (record.flops > self.budget
                                or not math.isfinite(record.rfid)):
            raise InvalidRangeError("accepted record violates budget/finite-rfid invariant")
        self.records.append(record)

    def accepted_records(self) -> list[SearchRecord]:
        return [r for r in self.records if r.accepted and math.isfinite(r.rfid)]

    def dump_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(r.to_json_line() + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def append_jsonl(self, path: str, record: SearchRecord) -> None:
        """Append a single record to disk with fsync, then to memory."""
        self.append(record)
        with open(path, "a") as fh:
            fh.write(record.to_json_line() + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    @classmethod
    def load_jsonl(cls, path: str, budget: float) -> "SearchMemory":
        records = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    records.append(SearchRecord.from_json_line(line))
        return cls(budget=budget, records=records)


# ---------------------------------------------------------------------------
# Prompts

def flops_violation_feedback(arch: ArchitectureConfig, budget: float,
                             estimate: float) -> str:
    """Over-budget notice fed back into the next round's history section."""
    if estimate <= budget:
        raise InvalidRangeError(
            f"feedback requires estimate > budget ({estimate} <= {budget})")
    return (f"REJECTED over budget: [{arch.to_kv_block().replace(chr(10), ', ')}] "
            f"estimated {int(estimate)} MACs, exceeding the budget of {int(budget)} MACs.")


def _space_description(space: ArchSpace) -> str:
    return "\n".join([
        "Searchable parameters (10 total):",
        f"  base_channel: integer in [{space.base_channel_min}, "
        f"{space.base_channel_max}], step {space.base_channel_step}",
        f"  num_blocks: integer in [{space.num_blocks_min}, {space.num_blocks_max}]",
        f"  channel_mult_0..channel_mult_3: integers in [{space.mult_min}, "
        f"{space.mult_max}] (stage width = base_channel * channel_mult_i)",
        "  attn_0..attn_3: 0 or 1 (self-attention at that stage)",
    ])


_RESPONSE_FORMAT = (
    "Respond with exactly one fenced code block containing one key=value "
    "line for each of the 10 parameters, e.g.:\n"
    "```\nbase_channel=16\nnum_blocks=2\nchannel_mult_0=1\nchannel_mult_1=2\n"
    "channel_mult_2=2\nchannel_mult_3=2\nattn_0=0\nattn_1=1\nattn_2=0\nattn_3=0\n```"
)


def build_arch_prompt(space: ArchSpace, settings, memory: SearchMemory,
                      budget: float, scale: str = "desk") -> str:
    """Deterministic prompt: space, budget, full history, response format."""
    parts = [
        "You are searching for the best denoising UNet architecture for a "
        "diffusion model under a compute budget.",
        _space_description(space),
        f"Diffusion settings: schedule={settings.schedule_kind}, T={settings.T}, "
        f"sample_steps={settings.sample_steps}, batch_size={settings.batch_size}.",
        f"FLOPs budget: {int(budget)} MACs ({scale} estimator). Proposals above "
        "the budget are rejected without evaluation.",
    ]
    if memory.records:
        hist = ["History of previous proposals (lower RFID is better):"]
        for r in memory.records:
            if r.rejection_reason == "over_budget":
                hist.append(f"  round {r.round}: "
                            + flops_violation_feedback(r.arch, memory.budget, r.flops))
            elif r.rejection_reason == "parse_failure":
                hist.append(f"  round {r.round}: REJECTED unparseable response.")
            elif r.rejection_reason == "training_diverged":
                hist.append(f"  round {r.round}: "
                            f"[{r.arch.to_kv_block().replace(chr(10), ', ')}] "
                            f"flops={r.flops} training diverged.")
            else:
                hist.append(f"  round {r.round}: "
                            f"[{r.arch.to_kv_block().replace(chr(10), ', ')}] "
                            f"flops={r.flops} RFID={r.rfid:.6f}")
        parts.append("\n".join(hist))
    parts.append("Propose the next architecture. " + _RESPONSE_FORMAT)
    return "\n\n".join(parts)


def build_strategy_prompt(space: StrategySpace, cost_budget: int) -> str:
    """Zero-shot prompt for the training-strategy search."""
    return "\n\n".join([
        "You are choosing a truncated-training strategy whose ranking of "
        "candidate diffusion architectures best matches their fully trained "
        "ranking.",
        "Searchable strategy parameters:\n"
        f"  learning_rate: real in [{min(space.learning_rates)}, "
        f"{max(space.learning_rates)}]\n"
        f"  dropout: real in [{min(space.dropouts)}, {max(space.dropouts)}]\n"
        f"  diffusion_steps: integer in [{min(space.diffusion_steps)}, "
        f"{max(space.diffusion_steps)}]",
        f"Training cost budget: {cost_budget} gradient-update steps per candidate.",
        "Respond with exactly one fenced code block of key=value lines:\n"
        "```\nlearning_rate=0.002\ndropout=0.1\ndiffusion_steps=50\n```",
    ])


# ---------------------------------------------------------------------------
# Parsing

def _last_fenced_block(text: str) -> str:
    blocks = _FENCE_RE.findall(text)
    if not blocks:
        raise ParseFailureError("no fenced key=value block found in response")
    return blocks[-1]


def parse_arch_response(text: str, space: ArchSpace) -> ArchitectureConfig:
    """Extract and validate the architecture from the last fenced block."""
    block = _last_fenced_block(text)
    try:
        arch = ArchitectureConfig.from_kv_block(block)
    except KeyError as e:
        raise ParseFailureError(str(e)) from e
    except (ValueError, InvalidRangeError) as e:
        # from_kv_block range errors on the type bounds count as space violations
        if isinstance(e, InvalidRangeError):
            raise RangeViolationError(str(e)) from e
        raise ParseFailureError(f"non-integer value: {e}") from e
    space.validate(arch)
    return arch


def parse_strategy_response(text: str, space: StrategySpace) -> TrainStrategy:
    """Extract and validate the training strategy from the last fenced block."""
    block = _last_fenced_block(text)
    kv: dict[str, str] = {}
    for line in block.strip().splitlines():
        if "=" in line:
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
    missing = {"learning_rate", "dropout", "diffusion_steps"} - kv.keys()
    if missing:
        raise ParseFailureError(f"missing keys: {sorted(missing)}")
    try:
        strategy = TrainStrategy(learning_rate=float(kv["learning_rate"]),
                                 dropout=float(kv["dropout"]),
                                 diffusion_steps=int(kv["diffusion_steps"]))
    except InvalidRangeError as e:
        raise RangeViolationError(str(e)) from e
    except ValueError as e:
        raise ParseFailureError(f"non-numeric value: {e}") from e
    space.validate(strategy)
    return strategy


# ---------------------------------------------------------------------------
# Backends

@dataclass
class ProxyExchange:
    prompt: str
    raw_response: str
    parsed: Union[ArchitectureConfig, TrainStrategy, None]
    backend_id: str
    retry_count: int = 0
    error: Optional[str] = None


class MutationBackend:
    """Deterministic offline proxy: mutate the best architecture seen so far
    by exactly one step in one of the 10 fields."""

    backend_id = "mutation"

    def __init__(self, space: ArchSpace, budget: float, data_length: int = 16,
                 seed: int = 0):
        self.space = space
        self.budget = budget
        self.data_length = data_length
        self.seed = seed

    def _random_feasible(self, rng) -> ArchitectureConfig:
        while True:
            arch = ArchitectureConfig(
                base_channel=int(rng.choice(self.space.base_channel_choices())),
                num_blocks=int(rng.integers(self.space.num_blocks_min,
                                            self.space.num_blocks_max + 1)),
                channel_mult=tuple(int(rng.integers(self.space.mult_min,
                                                    self.space.mult_max + 1))
                                   for _ in range(NUM_STAGES)),
                attn=tuple(bool(rng.integers(0, 2)) for _ in range(NUM_STAGES)),
            )
            if flops_desk(arch, self.data_length).total <= self.budget:
                return arch

    def _mutate(self, parent: ArchitectureConfig, rng) -> ArchitectureConfig:
        field_idx = int(rng.integers(10))
        step = 1 if rng.integers(0, 2) else -1
        if field_idx == 0:
            lo, hi = self.space.base_channel_min, self.space.base_channel_max
            v = parent.base_channel + step * self.space.base_channel_step
            if not lo <= v <= hi:
                v = parent.base_channel - step * self.space.base_channel_step
            v = min(max(v, lo), hi)
            if v == parent.base_channel:  # degenerate single-choice axis
                return self._mutate(parent, rng)
            return replace(parent, base_channel=v)
        if field_idx == 1:
            lo, hi = self.space.num_blocks_min, self.space.num_blocks_max
            v = parent.num_blocks + step
            if not lo <= v <= hi:
                v = parent.num_blocks - step
            v = min(max(v, lo), hi)
            if v == parent.num_blocks:
                return self._mutate(parent, rng)
            return replace(parent, num_blocks=v)
        if field_idx < 6:
            i = field_idx - 2
            lo, hi = self.space.mult_min, self.space.mult_max
            v = parent.channel_mult[i] + step
            if not lo <= v <= hi:
                v = parent.channel_mult[i] - step
            v = min(max(v, lo), hi)
            if v == parent.channel_mult[i]:
                return self._mutate(parent, rng)
            mult = list(parent.channel_mult)
            mult[i] = v
            return replace(parent, channel_mult=tuple(mult))
        i = field_idx - 6
        attn = list(parent.attn)
        attn[i] = not attn[i]
        return replace(parent, attn=tuple(attn))

    def respond(self, prompt: str, memory: SearchMemory, round_index: int) -> str:
        import numpy as np
        rng = np.random.default_rng((self.seed, round_index))
        finite = [r for r in memory.records
                  if r.arch is not None and math.isfinite(r.rfid) and r.accepted]
        if not finite:
            arch = self._random_feasible(rng)
        else:
            parent = min(finite, key=lambda r: r.rfid)
            arch = self._mutate(parent.arch, rng)
        return "```\n" + arch.to_kv_block() + "\n```"

    def respond_strategy(self, prompt: str, space: StrategySpace, seed: int = 0) -> str:
        import numpy as np
        rng = np.random.default_rng((self.seed, seed, 1))
        s = TrainStrategy(
            learning_rate=float(rng.choice(space.learning_rates)),
            dropout=float(rng.choice(space.dropouts)),
            diffusion_steps=int(rng.choice(space.diffusion_steps)),
        )
        return (f"```\nlearning_rate={s.learning_rate}\ndropout={s.dropout}\n"
                f"diffusion_steps={s.diffusion_steps}\n```")


class ScriptedBackend:
    """Replays canned responses from a fixture file.

    Fixture format: plain text, responses separated by a line containing
    only `-----`.
    """

    backend_id = "scripted"
    DELIMITER = "-----"

    def __init__(self, fixture_path: str):
        with open(fixture_path) as fh:
            text = fh.read()
        self.responses = [part.strip() for part in
                          text.split(f"\n{self.DELIMITER}\n")]
        self.responses = [r for r in self.responses if r]
        self.cursor = 0

    def respond(self, prompt: str, memory: SearchMemory = None,
                round_index: int = 0) -> str:
        if self.cursor >= len(self.responses):
            raise FixtureExhaustedError(
                f"fixture exhausted after {len(self.responses)} responses")
        resp = self.responses[self.cursor]
        self.cursor += 1
        return resp

    respond_strategy = None  # scripted strategy replies go through respond()


class RemoteBackend:
    """Chat-completion endpoint; configuration from the environment."""

    backend_id = "remote"

    def __init__(self, timeout: float = 60.0, model: str = "gpt-4"):
        self.url = os.environ.get("DIFFNAS_LLM_URL")
        self.key = os.environ.get("DIFFNAS_LLM_KEY")
        self.timeout = timeout
        self.model = model
        if not self.url or not self.key:
            raise BackendUnavailableError(
                "DIFFNAS_LLM_URL and DIFFNAS_LLM_KEY must be set")

    def respond(self, prompt: str, memory: SearchMemory = None,
                round_index: int = 0) -> str:
        payload = {"model": self.model,
                   "messages": [{"role": "user", "content": prompt}]}
        headers = {"Authorization": f"Bearer {self.key}"}
        last_err = None
        for _ in range(2):  # one reconnection attempt
            try:
                resp = requests.post(self.url, json=payload, headers=headers,
                                     timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError) as e:
                last_err = e
        raise BackendUnavailableError(f"remote backend failed: {last_err}")

    def respond_strategy(self, prompt: str, space=None, seed: int = 0) -> str:
        return self.respond(prompt)


def propose(backend, *, space: ArchSpace, settings, memory: SearchMemory,
            budget: float, round_index: int, scale: str = "desk") -> ProxyExchange:
    """One architecture proposal with up to 3 parse retries."""
    base_prompt = build_arch_prompt(space, settings, memory, budget, scale)
    prompt = base_prompt
    raw = ""
    last_err = None
    for attempt in range(MAX_PARSE_RETRIES):
        raw = backend.respond(prompt, memory, round_index)
        try:
            arch = parse_arch_response(raw, space)
            return ProxyExchange(prompt=base_prompt, raw_response=raw, parsed=arch,
                                 backend_id=backend.backend_id, retry_count=attempt)
        except (ParseFailureError, RangeViolationError) as e:
            last_err = e
            prompt = (base_prompt + "\n\nYour previous response was invalid: "
                      + str(e) + "\nRespond again using the required format.")
    return ProxyExchange(prompt=base_prompt, raw_response=raw, parsed=None,
                         backend_id=backend.backend_id,
                         retry_count=MAX_PARSE_RETRIES, error=str(last_err))


def propose_strategy(backend, *, space: StrategySpace, cost_budget: int,
                     seed: int = 0) -> ProxyExchange:
    """One strategy proposal with up to 3 parse retries."""
    base_prompt = build_strategy_prompt(space, cost_budget)
    prompt = base_prompt
    raw = ""
    last_err = None
    for attempt in range(MAX_PARSE_RETRIES):
        if getattr(backend, "respond_strategy", None):
            raw = backend.respond_strategy(prompt, space, seed)
        else:
            raw = backend.respond(prompt)
        try:
            strategy = parse_strategy_response(raw, space)
            return ProxyExchange(prompt=base_prompt, raw_response=raw,
                                 parsed=strategy, backend_id=backend.backend_id,
                                 retry_count=attempt)
        except (ParseFailureError, RangeViolationError) as e:
            last_err = e
            prompt = (base_prompt + "\n\nYour previous response was invalid: "
                      + str(e) + "\nRespond again using the required format.")
    return ProxyExchange(prompt=base_prompt, raw_response=raw, parsed=None,
                         backend_id=backend.backend_id,
                         retry_count=MAX_PARSE_RETRIES, error=str(last_err))
