"""Run configuration: one INI file with a section per component.

Example::

    [run]
    seed = 0
    source = data/src.json
    target = data/tgt.json

    [train]
    steps = 500
    lr = 0.001
    objectives = c2c,c2r,cpath,mpath

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath

from .corpus import CorpusConfig
from .encoder import EncoderConfig
from .kge import TransEConfig
from .matcher import MatchConfig
from .objectives import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunPaths:
    source: str | None = None
    target: str | None = None
    reference: str | None = None
    out: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: RunPaths = field(default_factory=RunPaths)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    transe: TransEConfig = field(default_factory=TransEConfig)
    match: MatchConfig = field(default_factory=MatchConfig)

    def with_seed(self, seed: int) -> RunConfig:
        """Propagate one global seed into every seeded component."""
        return replace(
            self,
            seed=seed,
            corpus=replace(self.corpus, seed=seed),
            train=replace(self.train, seed=seed),
            transe=replace(self.transe, seed=seed),
        )

    def snapshot(self) -> dict:
        out = {"run": {"seed": self.seed, **dataclasses.asdict(self.paths)}}
        for name in SECTIONS:
            out[name] = {k: _render(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
        return out

    def dumps(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, values in self.snapshot().items():
            parser[section] = {k: "" if v is None else str(v) for k, v in values.items()}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in parser[section].items())
            lines.append("")
        return "\n".join(lines)


SECTIONS = {
    "corpus": CorpusConfig,
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "transe": TransEConfig,
    "match": MatchConfig,
}


def _render(v):
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    return v


def _convert(raw: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if raw == "" and type(None) in args:
        return None
    if origin in (typing.Union, types.UnionType):
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
    try:
        if hint is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if origin is tuple:
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def _build(cls, values: dict[str, str], section: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {k: _convert(v, hints[k], f"{section}.{k}") for k, v in values.items()}
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"[{section}] {e}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    base = base or RunConfig()
    unknown = set(parser.sections()) - set(SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    parts = {}
    for name, cls in SECTIONS.items():
        current = {k: _render(v) for k, v in dataclasses.asdict(getattr(base, name)).items()}
        current = {k: "" if v is None else str(v) for k, v in current.items()}
        if parser.has_section(name):
            current.update(dict(parser[name]))
        parts[name] = _build(cls, current, name)
    run = dict(parser["run"]) if parser.has_section("run") else {}
    seed_raw = run.pop("seed", None)
    paths = _build(RunPaths, {**{k: v for k, v in dataclasses.asdict(base.paths).items() if v is not None}, **run}, "run")
    cfg = RunConfig(base.seed, paths, **parts)
    if seed_raw is not None:
        cfg = cfg.with_seed(_convert(seed_raw, int, "run.seed"))
    return cfg


def load_config(path: str | FsPath, base: RunConfig | None = None) -> RunConfig:
    return parse_config(FsPath(path).read_text(encoding="utf-8"), base)


def desk_preset(seed: int = 0) -> RunConfig:
    """Small encoder, fixed step budget and a from-scratch learning rate."""
    return RunConfig(
        encoder=EncoderConfig(layers=1, heads=2, dim=64, ffn_dim=128),
        train=TrainConfig(steps=500, lr=1e-3),
        transe=TransEConfig(dim=16),
    ).with_seed(seed)
