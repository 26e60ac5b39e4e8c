"""Flat ``key = value`` configuration files and the shipped presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .grid import GridDims
from .train import TrainConfig

PRESETS = ("desk", "n3dv", "meetroom")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # grid / base frame
    base_shape: tuple = (16, 16, 16)
    upsample_stages: int = 2
    world_min: tuple = (-1.0, -1.0, -1.0)
    world_max: tuple = (1.0, 1.0, 1.0)
    init_sigma: float = 0.1
    base_prune_threshold: float = 0.5
    base_iters: int = 1200
    base_batch: int = 2048
    base_lr_sigma: float = 3e1
    base_lr_sh: float = 1e-2
    # per-frame tuning
    stream_lr_sigma: float = 3e1
    stream_lr_sh: float = 1e-2
    pilot_iters: int = 200
    pilot_lr_sigma: float = 3e1
    pilot_lr_sh: float = 1e-2
    full_iters: int = 100
    stream_batch: int = 2048
    pilot_tv_mult: float = 10.0
    stream_prune_threshold: float = 0.0
    rho_d: int = 2
    rho_e: int = 2
    pilot_rho_d: int = 2
    pilot_rho_e: int = 2
    # change thresholds used only to derive the guidance mask from the pilot
    pilot_epsilon: float = 1.0 / 27.0
    pilot_sigma_epsilon: float = 1e-3
    use_band: bool = True
    use_pilot: bool = True
    # shared optimiser settings
    rms_decay: float = 0.95
    lambda_tv_sigma: float = 5e-4
    lambda_tv_sh: float = 5e-3
    background: tuple = (0.0, 0.0, 0.0)
    # delta codec
    epsilon: float = 1.0 / 27.0
    sigma_epsilon: float = 1e-3
    # bookkeeping
    holdout_view: int | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.base_shape) != 3:
            raise ConfigError("base_shape needs 3 integers")
        if self.upsample_stages < 0:
            raise ConfigError("upsample_stages must be >= 0")
        for name in ("rho_d", "rho_e", "pilot_rho_d", "pilot_rho_e"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if min(self.epsilon, self.sigma_epsilon, self.pilot_epsilon, self.pilot_sigma_epsilon) < 0:
            raise ConfigError("codec thresholds must be >= 0")
        try:
            self.base_dims()
            self.base_train_config()
            self.full_train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def base_dims(self) -> GridDims:
        return GridDims(*self.base_shape, self.world_min, self.world_max)

    def final_dims(self) -> GridDims:
        k = 2 ** self.upsample_stages
        return self.base_dims().with_shape(tuple(n * k for n in self.base_shape))

    def _train(self, iters, batch, lr_sigma, lr_sh, tv_mult=1.0) -> TrainConfig:
        return TrainConfig(
            lr_sigma=lr_sigma, lr_sh=lr_sh, rms_decay=self.rms_decay,
            lambda_tv_sigma=self.lambda_tv_sigma * tv_mult, lambda_tv_sh=self.lambda_tv_sh * tv_mult,
            batch_rays=batch, iters=iters, background=tuple(self.background),
        )

    def base_train_config(self) -> TrainConfig:
        return self._train(self.base_iters, self.base_batch, self.base_lr_sigma, self.base_lr_sh)

    def pilot_train_config(self) -> TrainConfig:
        return self._train(self.pilot_iters, self.stream_batch, self.pilot_lr_sigma, self.pilot_lr_sh,
                           self.pilot_tv_mult)

    def full_train_config(self) -> TrainConfig:
        return self._train(self.full_iters, self.stream_batch, self.stream_lr_sigma, self.stream_lr_sh)

    def replace(self, **kw) -> Config:
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = " ".join(repr(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            else:
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _convert(name: str, default, raw: str):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        kind = int if all(isinstance(x, int) for x in default) else float
        return tuple(kind(_number(x)) for x in raw.replace(",", " ").split())
    if name == "holdout_view":
        return None if raw.lower() == "none" else int(raw)
    if isinstance(default, int):
        return int(_number(raw))
    return float(_number(raw))


def _number(tok: str) -> float:
    # allows "1/27" style ratios, matching how the reference thresholds are usually written
    if "/" in tok:
        a, b = tok.split("/", 1)
        return float(a) / float(b)
    return float(tok)


def parse_config(text: str, base: Config | None = None) -> Config:
    """Parse ``key = value`` lines (``#`` comments) on top of ``base`` or the defaults.

    ``preset = name`` pulls in a shipped preset before the remaining keys.
    """
    cfg = base or Config()
    known = {f.name: f for f in fields(Config)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (x.strip() for x in line.split("=", 1))
        if key == "preset":
            cfg = load_preset(raw)
            continue
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _convert(key, getattr(Config(), key), raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return cfg.replace(**updates)


def load_config(path) -> Config:
    """Read a config file, or a preset when ``path`` is a preset name."""
    if str(path) in PRESETS:
        return load_preset(str(path))
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config not found: {p}")
    return parse_config(p.read_text())


def load_preset(name: str) -> Config:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("streamgrid").joinpath("presets", f"{name}.cfg").read_text()
    return parse_config(text, Config())
