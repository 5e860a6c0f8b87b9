"""Flat `key = value` run configuration for training."""

from __future__ import annotations

from dataclasses import dataclass, field

from .dsp import StftConfig
from .model import NetConfig
from .training import CurriculumSchedule, LossConfig


class ConfigError(Exception):
    """Config file failed to parse or validate; message carries the line."""


def _parse_stages(text: str) -> list[tuple[int, int]]:
    # "1:2000,2:2000" -> [(1, 2000), (2, 2000)]
    stages = []
    for part in text.split(","):
        n, _, steps = part.partition(":")
        stages.append((int(n), int(steps)))
    return stages


def _parse_phase_steps(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("need three comma-separated step counts")
    return tuple(parts)


@dataclass
class RunConfig:
    preset: str = "toy"
    visual_dim: int | None = None
    mag_channels: int | None = None
    phase_channels: int | None = None
    n_mels: int = 80
    window_len: int = 640
    hop: int = 160
    fft_size: int = 640
    sample_rate: int = 16000
    phase_weight: float = 1.0
    magnitude_reduction: str = "mean"
    stages: list = field(default_factory=lambda: [(1, 2500)])
    phase_steps: tuple = (1800, 350, 350)
    batch_size: int = 4
    learning_rate: float = 1e-4
    seed: int = 0
    segment_frames: int = 60
    val_interval: int = 300
    val_mixtures: int = 6

    def stft_config(self) -> StftConfig:
        return StftConfig(self.window_len, self.hop, self.fft_size, self.sample_rate)

    def net_config(self) -> NetConfig:
        overrides = {}
        for key in ("visual_dim", "mag_channels", "phase_channels"):
            if getattr(self, key) is not None:
                overrides[key] = getattr(self, key)
        overrides["n_mels"] = self.n_mels
        overrides["freq_bins"] = self.stft_config().freq_bins
        if self.preset == "toy":
            return NetConfig.toy(**overrides)
        if self.preset == "paper":
            return NetConfig(**overrides)
        raise ConfigError(f"unknown preset {self.preset!r} (use 'toy' or 'paper')")

    def loss_config(self) -> LossConfig:
        return LossConfig(self.phase_weight, self.magnitude_reduction)

    def schedule(self) -> CurriculumSchedule:
        return CurriculumSchedule(list(self.stages), tuple(self.phase_steps))


_PARSERS = {
    "preset": str,
    "visual_dim": int,
    "mag_channels": int,
    "phase_channels": int,
    "n_mels": int,
    "window_len": int,
    "hop": int,
    "fft_size": int,
    "sample_rate": int,
    "lambda": float,
    "magnitude_reduction": str,
    "stages": _parse_stages,
    "phase_steps": _parse_phase_steps,
    "batch_size": int,
    "learning_rate": float,
    "seed": int,
    "segment_frames": int,
    "val_interval": int,
    "val_mixtures": int,
}

_KEY_ALIASES = {"lambda": "phase_weight"}


def parse_config(path) -> RunConfig:
    """Parse a flat key = value file; `#` starts a comment. Unknown keys and
    malformed values are rejected with the offending line number."""
    cfg = RunConfig()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _PARSERS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                parsed = _PARSERS[key](value)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
            setattr(cfg, _KEY_ALIASES.get(key, key), parsed)
    try:
        cfg.stft_config()
        cfg.net_config()
        cfg.loss_config()
        cfg.schedule()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg
