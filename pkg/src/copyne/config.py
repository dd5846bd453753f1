"""Flat ``key=value`` run configuration shared by every subcommand."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .corpus import SynthConfig
from .decoding import BeamConfig
from .network import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # corpus
    n_chars: int = 60
    n_syllables: int = 24
    n_filler_chars: int = 24
    frame_dim: int = 16
    frames_per_char: tuple[int, int] = (2, 3)
    noise_stddev: float = 0.3
    min_syllable_distance: float = 1.0
    n_train: int = 2000
    n_dev: int = 300
    n_test: int = 300
    n_train_entities: int = 40
    n_test_entities: int = 30
    entity_len: tuple[int, int] = (2, 4)
    filler_len: tuple[int, int] = (4, 10)
    entity_fraction: float = 0.5
    trap_rate: float = 1.0
    zipf_exponent: float = 1.0
    # model
    mode: str = "copyne"
    d_model: int = 64
    n_heads: int = 2
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    d_attention: int = 64
    ne_embed: int = 64
    ne_hidden: int = 64
    ne_lstm_layers: int = 1
    dropout: float = 0.1
    # training
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    clip: float = 5.0
    lam: float = 0.7
    beta: float = 2.0
    no_copy_loss: bool = False
    dev_beam: int = 1
    # decoding
    gamma: float = 0.9
    beam_width: int = 8
    max_actions: int = 64
    # paths
    corpus_dir: str = "corpus"
    out_dir: str = "run"

    # -- parsing ---------------------------------------------------------------

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_items(self, items: dict[str, str]) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        updates = {}
        for key, text in items.items():
            key = "lam" if key == "lambda" else key
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            updates[key] = _parse_value(types[key], str(text), key)
        cfg = replace(self, **updates)
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return (base or cls()).with_items(parse_items(text))

    @classmethod
    def from_file(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), base)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            key = "lambda" if f.name == "lam" else f.name
            lines.append(f"{key}={v}")
        return "\n".join(lines) + "\n"

    def validate(self) -> None:
        try:
            self.synth_config().validate()
            self.model_config().validate()
            self.beam_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if self.beta < 0 or self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("beta >= 0, epochs >= 0, batch_size >= 1 and lr > 0 required")

    # -- views -----------------------------------------------------------------

    def synth_config(self) -> SynthConfig:
        names = {f.name for f in fields(SynthConfig)}
        return SynthConfig(**{k: getattr(self, k) for k in names})

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)} - {"positional"}
        return ModelConfig(**{k: getattr(self, k) for k in names})

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, clip=self.clip,
                           lam=self.lam, beta=self.beta, seed=self.seed,
                           use_copy_loss=not self.no_copy_loss, dev_gamma=self.gamma, dev_beam=self.dev_beam)

    def beam_config(self, mode: str | None = None) -> BeamConfig:
        return BeamConfig(self.beam_width, self.gamma, self.max_actions, mode or self.mode)


def parse_items(text: str) -> dict[str, str]:
    items = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {no}: expected key=value, got {raw!r}")
        items[key.strip()] = value.strip()
    return items


def _parse_value(kind, text: str, key: str):
    try:
        if kind in ("bool", bool):
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(text)
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
        if kind == "tuple[int, int]":
            lo, hi = (int(x) for x in text.split(","))
            return (lo, hi)
        return text
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for {key}") from None
