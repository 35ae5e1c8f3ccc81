"""Application configuration: JSON file, strictly validated.

Resolution order for the config path: the --config CLI flag, then the
LLMR_CONFIG environment variable, then built-in defaults. Unknown keys
are rejected so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .model import SamplerConfig
from .training import KRConfig

ENV_VAR = "LLMR_CONFIG"


@dataclass
class AppConfig:
    # paths
    corpus_dir: str = "corpus"
    artifacts_dir: str = "artifacts"
    report_dir: str = "reports"
    # chunking / retrieval
    chunk_size: int = 300
    chunk_overlap: int = 50
    k: int = 5
    tau: float = 0.35
    retrieval_floor: float = 0.05
    embed_dim: int = 256
    # fine-tuning defaults
    gamma: float = 1.0
    learning_rate: float = 1e-4
    epochs: int = 4
    batch_size: int = 4
    rank: int = 8
    max_length: int = 1024
    grad_tolerance: float = 1e-4
    max_steps: int = 100_000
    # decoding
    temperature: float = 0.7
    max_new_tokens: int = 48
    # model bootstrap (used only when no checkpoint exists yet)
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    vocab_size: int = 4096
    pretrain_steps: int = 300
    # service
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.chunk_overlap < self.chunk_size:
            raise ConfigError("need 0 <= chunk_overlap < chunk_size")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must be in (0, 1)")
        if self.embed_dim < 8:
            raise ConfigError("embed_dim must be >= 8")
        if self.temperature < 0.0:
            raise ConfigError("temperature must be >= 0")
        if self.gamma <= 0.0:
            raise ConfigError("gamma must be > 0 (use 'inf' for pure task loss)")

    def kr_config(self, gamma: Optional[float] = None) -> KRConfig:
        return KRConfig(
            gamma=self.gamma if gamma is None else gamma,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            rank=self.rank,
            max_length=self.max_length,
            grad_tolerance=self.grad_tolerance,
            max_steps=self.max_steps,
        )

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            temperature=self.temperature,
            max_new_tokens=self.max_new_tokens,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if math.isinf(out["gamma"]):
            out["gamma"] = "inf"
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(AppConfig)}


def load_config(path: str | Path) -> AppConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("gamma") == "inf":
        raw["gamma"] = math.inf
    try:
        return AppConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def resolve_config(flag_value: Optional[str]) -> AppConfig:
    """Flag beats environment beats defaults."""
    path = flag_value or os.environ.get(ENV_VAR)
    if path:
        return load_config(path)
    return AppConfig()
