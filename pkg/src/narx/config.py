"""Run configuration: one JSON document, overridden by ``NARX_SEED`` and then by flags."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .motifs import MiningConfig
from .pipeline import StageConfig, graph_stage_defaults, motif_stage_defaults
from .retrieval import DEFAULT_CUTOFFS

SEED_ENV = "NARX_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    corpus: str = "corpus.jsonl"
    vocab: str = ""
    checkpoints: str = "checkpoints"
    index: str = "index.narx"
    output_dir: str = "out"


@dataclass
class GenConfig:
    n: int = 1000
    classes: int = 10
    max_radius: int = 2
    num_cells: int = 3
    separation: int = 6
    split_ratio: float = 0.9


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    generate: GenConfig = field(default_factory=GenConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    stage1: StageConfig = field(default_factory=motif_stage_defaults)
    stage2: StageConfig = field(default_factory=graph_stage_defaults)
    cutoffs: tuple[int, ...] = DEFAULT_CUTOFFS
    seed: int = 0
    loss: str = "ce+cl"
    splitter: str = "ours"
    workers: int = 1

    def __post_init__(self):
        if not self.cutoffs or any(int(c) < 1 for c in self.cutoffs):
            raise ConfigError("cutoffs must be positive integers")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cutoffs"] = list(self.cutoffs)
        return d

    def with_seed(self, seed: int) -> "RunConfig":
        """Same config with ``seed`` pushed into both stage configs."""
        self.seed = int(seed)
        self.stage1.seed = self.seed
        self.stage2.seed = self.seed
        return self

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        _reject_unknown(raw, {f.name for f in fields(cls)}, "config")
        try:
            paths = raw.pop("paths", {})
            _reject_unknown(paths, {f.name for f in fields(Paths)}, "paths")
            gen = raw.pop("generate", {})
            _reject_unknown(gen, {f.name for f in fields(GenConfig)}, "generate")
            mining = raw.pop("mining", {})
            _reject_unknown(mining, {f.name for f in fields(MiningConfig)}, "mining")
            cfg = cls(
                paths=Paths(**paths),
                generate=GenConfig(**gen),
                mining=MiningConfig(**mining),
                stage1=motif_stage_defaults(**raw.pop("stage1", {})),
                stage2=graph_stage_defaults(**raw.pop("stage2", {})),
                cutoffs=tuple(int(c) for c in raw.pop("cutoffs", DEFAULT_CUTOFFS)),
                **raw,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None) -> "RunConfig":
        """Read ``path`` (or defaults), then apply ``NARX_SEED`` from ``env``."""
        raw: dict = {}
        if path:
            try:
                raw = json.loads(Path(path).read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"config {path} must be a JSON object")
        cfg = cls.from_dict(raw)
        stage_seed = raw.get("stage1", {}).get("seed"), raw.get("stage2", {}).get("seed")
        if stage_seed == (None, None):
            cfg.with_seed(cfg.seed)
        env = os.environ if env is None else env
        if env.get(SEED_ENV, "") != "":
            try:
                cfg.with_seed(int(env[SEED_ENV]))
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from exc
        return cfg


def _reject_unknown(d: dict, known: set[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
