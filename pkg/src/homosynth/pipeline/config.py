"""System configuration and its JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from ..losses import LossConfig
from ..neural.networks import CarnConfig

CONFIG_KEYS = (
    "win_len",
    "hop",
    "lifter_mode",
    "lifter_N",
    "encoder_channels",
    "kernel",
    "stride",
    "arn_hidden",
    "p",
    "lr",
    "batch",
    "snr_low",
    "snr_high",
    "rir_prob",
    "seed",
)
# accepted on read and always written, so a checkpoint can rebuild its lifter
OPTIONAL_KEYS = ("lifter_hidden",)

LIFTER_MODES = ("intelligent", "traditional")


class ConfigError(ValueError):
    pass


@dataclass
class SystemConfig:
    win_len: int = 512
    hop: int = 256
    lifter_mode: str = "intelligent"
    lifter_N: int = 29
    carn: CarnConfig = field(default_factory=CarnConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-3
    batch: int = 4
    snr_range: tuple = (-5.0, 20.0)
    rir_prob: float = 0.75
    seed: int = 0
    lifter_hidden: int = 256
    lifter_one_sided: bool = False
    crop_seconds: float = 2.0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.lifter_mode not in LIFTER_MODES:
            raise ConfigError(f"lifter_mode must be one of {LIFTER_MODES}, got {self.lifter_mode!r}")
        if not 0 < self.hop <= self.win_len:
            raise ConfigError(f"hop must be in (0, win_len], got hop={self.hop} win_len={self.win_len}")
        if not 1 <= self.lifter_N <= self.win_len // 2:
            raise ConfigError(f"lifter_N must be in [1, {self.win_len // 2}], got {self.lifter_N}")
        low, high = self.snr_range
        if low > high:
            raise ConfigError(f"snr_low {low} exceeds snr_high {high}")
        if not 0.0 <= self.rir_prob <= 1.0:
            raise ConfigError(f"rir_prob must be in [0, 1], got {self.rir_prob}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")

    @property
    def n_bins(self):
        return self.win_len // 2 + 1

    def to_dict(self):
        return {
            "win_len": self.win_len,
            "hop": self.hop,
            "lifter_mode": self.lifter_mode,
            "lifter_N": self.lifter_N,
            "encoder_channels": list(self.carn.encoder_channels),
            "kernel": list(self.carn.kernel),
            "stride": list(self.carn.stride),
            "arn_hidden": self.carn.arn_hidden,
            "p": self.loss.p,
            "lr": self.lr,
            "batch": self.batch,
            "snr_low": self.snr_range[0],
            "snr_high": self.snr_range[1],
            "rir_prob": self.rir_prob,
            "seed": self.seed,
            "lifter_hidden": self.lifter_hidden,
        }

    @classmethod
    def from_dict(cls, data: dict, base: "SystemConfig" = None) -> "SystemConfig":
        """Build a config from file keys; missing keys fall back to ``base``."""
        unknown = set(data) - set(CONFIG_KEYS) - set(OPTIONAL_KEYS)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        base = base or cls()
        merged = base.to_dict()
        merged.update(data)
        try:
            carn = CarnConfig(
                encoder_channels=merged["encoder_channels"],
                kernel=merged["kernel"],
                stride=merged["stride"],
                arn_hidden=int(merged["arn_hidden"]),
            )
            return cls(
                win_len=int(merged["win_len"]),
                hop=int(merged["hop"]),
                lifter_mode=merged["lifter_mode"],
                lifter_N=int(merged["lifter_N"]),
                carn=carn,
                loss=replace(base.loss, p=float(merged["p"])),
                lr=float(merged["lr"]),
                batch=int(merged["batch"]),
                snr_range=(float(merged["snr_low"]), float(merged["snr_high"])),
                rir_prob=float(merged["rir_prob"]),
                seed=int(merged["seed"]),
                lifter_hidden=int(merged["lifter_hidden"]),
                lifter_one_sided=base.lifter_one_sided,
                crop_seconds=base.crop_seconds,
                grad_clip=base.grad_clip,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str, base: "SystemConfig" = None) -> "SystemConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        return cls.from_dict(data, base)


def load_config(path) -> SystemConfig:
    with open(path, encoding="utf-8") as fh:
        return SystemConfig.from_json(fh.read())


def save_config(path, cfg: SystemConfig):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json() + "\n")
