"""Plain-text ``key=value`` run configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .blocks import AblationToggles
from .model import DMNetConfig
from .training import TrainConfig

_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}

# file key -> (attribute, parser)
_KEYS = {
    "scale": ("scale", int),
    "channels": ("channels", int),
    "n_groups": ("n_groups", int),
    "n_blocks": ("n_blocks", int),
    "ffn_ratio": ("ffn_ratio", float),
    "lambda": ("lam", float),
    "lr0": ("lr0", float),
    "iters": ("iters", int),
    "batch": ("batch", int),
    "patch": ("patch", int),
    "seed": ("seed", int),
    "data_dir": ("data_dir", str),
    "out_dir": ("out_dir", str),
    "log_interval": ("log_interval", int),
    "ckpt_interval": ("ckpt_interval", int),
    "augment": ("augment", lambda s: _BOOL[s.lower()]),
    "ablation.dynamic": ("dynamic", lambda s: _BOOL[s.lower()]),
    "ablation.freq_domain": ("freq_domain", str),
    "ablation.freq_loss": ("freq_loss", str),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scale: int = 4
    channels: int = 48
    n_groups: int = 3
    n_blocks: int = 3
    ffn_ratio: float = 2.0
    lam: float = 0.1
    lr0: float = 5e-4
    iters: int = 500_000
    batch: int = 64
    patch: int = 64
    seed: int = 0
    data_dir: str = ""
    out_dir: str = "runs"
    log_interval: int = 100
    ckpt_interval: int = 5000
    augment: bool = True
    dynamic: bool = True
    freq_domain: str = "wavelet"
    freq_loss: str = "fourier"

    def __post_init__(self):
        # surface module-level invariants at parse time
        try:
            self.model_config()
            self.train_config()
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if self.log_interval < 1 or self.ckpt_interval < 0:
            raise ConfigError("log_interval must be >= 1 and ckpt_interval >= 0")

    def model_config(self) -> DMNetConfig:
        return DMNetConfig(self.channels, self.n_groups, self.n_blocks, self.scale, self.ffn_ratio,
                           AblationToggles(self.dynamic, self.freq_domain, self.freq_loss))

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch=self.batch, patch=self.patch, lr0=self.lr0, total_iters=self.iters,
                           lam=self.lam, seed=self.seed, log_interval=self.log_interval,
                           ckpt_interval=self.ckpt_interval, augment=self.augment)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def parse(cls, text: str, origin: str = "<config>") -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _KEYS:
                raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
            attr, conv = _KEYS[key]
            try:
                values[attr] = conv(val)
            except (ValueError, KeyError):
                raise ConfigError(f"{origin}:{lineno}: bad value for {key}: {val!r}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    def to_text(self) -> str:
        lines = []
        for key, (attr, _) in _KEYS.items():
            val = getattr(self, attr)
            if isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{key}={val}")
        return "\n".join(lines) + "\n"
