"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys are
rejected. :func:`to_text` renders the full effective configuration in a
canonical form, which is what gets echoed into output directories and
embedded (with its digest) in checkpoints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .correlation import parse_corr
from .losses import LossWeights, SsimConfig
from .models import DiscriminatorConfig, SuNetConfig


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)


@dataclass(frozen=True)
class TrainConfig:
    # optimisation
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 4
    n_disc_steps: int = 1
    total_iterations: int = 2000
    seed: int = 0
    # loss
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 100.0
    adv_weight: float = 1.0
    corr: str = "polynomial(2, 1.0, 1.0)"
    alpha_bar: float = 0.1
    n_patches: int = 64
    ssim_window: int = 7
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    ssim_range: float = 1.0
    # acquisition and data
    sampling_rate: float = 0.3
    mask_seed: int = 1
    noise_sigma: float = 0.0
    noise_seed: int = 2
    image_side: int = 32
    n_train: int = 16
    n_val: int = 8
    data_seed: int = 7
    val_seed: int = 1007
    phantom_density: int = 5
    dataset: str = ""
    # generator
    n_units: int = 10
    kernel_sides: str = "2,4,6"
    base_channels: int = 8
    depth: int = 3
    leaky_slope: float = 0.2
    zero_init_output: bool = False
    # discriminator
    disc_norm: str = "auto"
    disc_widths: str = "8,8,16,16,32,32,32,32,32,32,1"
    disc_strides: str = "1,2,1,2,1,2,1,1,1,1,1"
    # logging / evaluation
    eval_every: int = 250
    checkpoint_every: int = 500
    bound_every: int = 100
    lssm_seed: int = 11
    lssm_patch: int = 20
    nmse_mode: str = "ratio"
    c_star_mode: str = "final_params"

    def __post_init__(self):
        positive = ("learning_rate", "adam_eps", "batch_size", "n_disc_steps", "total_iterations",
                    "alpha_bar", "sampling_rate", "image_side", "base_channels")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.noise_sigma < 0 or self.adv_weight < 0:
            raise ConfigError("weight_decay, noise_sigma and adv_weight must be >= 0")
        if self.disc_norm not in ("auto", "batch", "none"):
            raise ConfigError(f"disc_norm must be auto, batch or none, got {self.disc_norm!r}")
        if self.nmse_mode not in ("ratio", "squared"):
            raise ConfigError(f"nmse_mode must be ratio or squared, got {self.nmse_mode!r}")
        if self.c_star_mode not in ("final_params", "best_iterate"):
            raise ConfigError(f"c_star_mode must be final_params or best_iterate")
        if self.image_side % (2 ** self.depth):
            raise ConfigError(f"image_side {self.image_side} must be divisible by 2**depth = "
                              f"{2 ** self.depth}")
        try:
            self.loss_weights()
            self.ssim_config()
            self.correlation()
            self.sunet_config()
            self.disc_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # derived objects
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    def ssim_config(self) -> SsimConfig:
        return SsimConfig(self.ssim_window, self.ssim_sigma, self.ssim_k1, self.ssim_k2, self.ssim_range)

    def correlation(self):
        return parse_corr(self.corr)

    def sunet_config(self) -> SuNetConfig:
        return SuNetConfig(self.n_units, _ints(self.kernel_sides), self.base_channels,
                           self.leaky_slope, self.depth, 1, self.zero_init_output)

    def disc_config(self) -> DiscriminatorConfig:
        widths, strides = _ints(self.disc_widths), _ints(self.disc_strides)
        norm = self.disc_norm
        if norm == "auto":
            norm = "batch" if self.batch_size >= 8 else "none"
        return DiscriminatorConfig(len(widths), 3, self.leaky_slope, norm, widths, strides,
                                   self.image_side)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def _coerce(f: dataclasses.Field, raw: str):
    t = f.type if isinstance(f.type, str) else f.type.__name__
    raw = raw.strip()
    try:
        if t == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot read {raw!r} as {t}") from None
    return raw


def parse_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    known = {f.name: f for f in fields(TrainConfig)}
    values = {}
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(known[key], raw)
    base = base or TrainConfig()
    return dataclasses.replace(base, **values)


def load(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read())


def to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"
