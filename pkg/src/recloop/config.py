"""Flat ``key = value`` run configuration shared by every subcommand."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Iterable

from .errors import ParseError
from .factorization import Hyperparams
from .policies import PolicyConfig
from .simulation import FeedbackModel, SimulationConfig


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


@dataclass(frozen=True)
class RunConfig:
    # inputs
    dataset: str = "movielens"          # movielens | synthetic
    ratings: str = ""
    groups: str = ""
    truth: str = ""
    out: str = "out"
    # planted synthetic problem
    synthetic_users: int = 200
    synthetic_items: int = 500
    synthetic_groups: int = 10
    synthetic_rank: int = 3
    synthetic_cold: int = 3
    synthetic_obs_per_user: int = 10
    synthetic_seed: int = 0
    # factorization
    learning_rate: float = 0.001
    latent_dim: int = 10
    l2_coeff: float = 0.01
    epochs: int = 300
    # loop
    seed: int = 0
    runs: int = 10
    iterations: int = 30
    policy: str = "exploit"
    epsilon: float = 0.0
    rec_len: int = 10
    feedback: str = "perfect"
    theta: float = 1.0
    relevance_threshold: int = 4
    retrain: str = "from_scratch"
    seen_from: str = "recommended"
    deltas: tuple[float, ...] = (0.05, 0.01)
    # ranking-assumption test
    sample_users: int = 100
    repetitions: int = 10

    def __post_init__(self):
        if self.dataset not in ("movielens", "synthetic"):
            raise ValueError(f"dataset must be 'movielens' or 'synthetic', got {self.dataset!r}")
        for d in self.deltas:
            if not 0.0 < d <= 1.0:
                raise ValueError(f"delta {d} outside (0, 1]")
        # surface invalid combinations at load time
        self.simulation_config()

    def hyperparams(self, seed: int | None = None) -> Hyperparams:
        return Hyperparams(self.learning_rate, self.latent_dim, self.l2_coeff, self.epochs,
                           self.seed if seed is None else seed)

    def simulation_config(self) -> SimulationConfig:
        return SimulationConfig(
            iterations=self.iterations, runs=self.runs,
            policy=PolicyConfig(self.rec_len, self.epsilon, self.seed, self.policy),
            feedback=FeedbackModel(self.feedback, self.theta, self.seed),
            relevance_threshold=self.relevance_threshold, retrain=self.retrain,
            hyperparams=self.hyperparams(), master_seed=self.seed, seen_from=self.seen_from,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, raw: str):
    kind = _TYPES[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind.startswith("tuple"):
        return _floats(raw)
    return raw


def parse_config(lines: Iterable[str]) -> RunConfig:
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip().replace(".", "_").replace("-", "_")
        if not sep:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        if key not in _TYPES:
            raise ParseError(f"unknown config key {key!r}", lineno)
        try:
            values[key] = coerce(key, raw.strip())
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {exc}", lineno) from None
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
