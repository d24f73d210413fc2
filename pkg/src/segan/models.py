"""SU-Net generator, 11-layer CNN discriminator, initialisation and checkpoints."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import SplitMix64
from .tensor import Parameter, Tensor, avg_pool, concat, conv2d, nearest_upsample


def kaiming_std(fan_in: int, slope: float) -> float:
    return float(np.sqrt(2.0 / (1.0 + slope * slope) / fan_in))


def _conv_param(rng: SplitMix64, name: str, cout: int, cin: int, k: int, slope: float,
                zero: bool = False) -> tuple:
    shape = (cout, cin, k, k)
    if zero:
        w = np.zeros(shape)
    else:
        w = rng.normal(int(np.prod(shape))).reshape(shape) * kaiming_std(cin * k * k, slope)
    return Parameter(w, f"{name}.w"), Parameter(np.zeros(cout), f"{name}.b")


class Module:
    """Holds named parameters in creation order."""

    def __init__(self):
        self.params: dict = {}

    def _add(self, *ps: Parameter) -> None:
        for p in ps:
            if p.name in self.params:
                raise ValueError(f"duplicate parameter name {p.name}")
            self.params[p.name] = p

    def parameters(self, trainable_only: bool = True) -> list:
        return [p for p in self.params.values() if p.trainable or not trainable_only]

    def state(self) -> dict:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            p = self.params[name]
            if p.data.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.data.shape}")
            p.data[...] = arr

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


# -- generator -----------------------------------------------------------------

@dataclass(frozen=True)
class SuNetConfig:
    n_units: int = 10
    kernel_sides: tuple = (2, 4, 6)
    base_channels: int = 8
    leaky_slope: float = 0.2
    depth: int = 3
    in_channels: int = 1
    zero_init_output: bool = False

    def __post_init__(self):
        if self.n_units < 2:
            raise ValueError("SU-Net needs at least 2 units")
        if any(k < 1 for k in self.kernel_sides) or not self.kernel_sides:
            raise ValueError(f"kernel sides must be >= 1, got {self.kernel_sides}")
        if self.depth < 0 or 2 * self.depth + 1 > self.n_units:
            raise ValueError(
                f"{self.n_units} units cannot hold an encoder/decoder of depth {self.depth} "
                f"(needs {2 * self.depth + 1})")

    @property
    def n_tail(self) -> int:
        return self.n_units - (2 * self.depth + 1)

    def unit_layout(self) -> list:
        """(unit name, input channels) in forward order."""
        B = self.base_channels
        layout = [(f"enc{i}", self.in_channels if i == 0 else B) for i in range(self.depth)]
        layout.append(("mid", self.in_channels if self.depth == 0 else B))
        layout += [(f"dec{i}", 2 * B) for i in reversed(range(self.depth))]
        layout += [(f"tail{i}", B) for i in range(self.n_tail)]
        return layout


class SUNet(Module):
    """U-Net whose units run parallel convolutions of several kernel sizes.

    Each unit: one conv per kernel side (C_in -> base), channel concat,
    leaky ReLU, 1x1 merge (3*base -> base), leaky ReLU. Encoder units feed
    their mirror decoder units through channel concatenation; a 1x1 head and
    a sigmoid produce the image.
    """

    def __init__(self, config: SuNetConfig = SuNetConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        rng = SplitMix64(seed)
        B, slope = config.base_channels, config.leaky_slope
        for unit, cin in config.unit_layout():
            for k in config.kernel_sides:
                self._add(*_conv_param(rng, f"G.{unit}.k{k}", B, cin, k, slope))
            self._add(*_conv_param(rng, f"G.{unit}.merge", B, B * len(config.kernel_sides), 1, slope))
        self._add(*_conv_param(rng, "G.out", 1, B, 1, slope, zero=config.zero_init_output))

    def _unit(self, name: str, x: Tensor) -> Tensor:
        p, slope = self.params, self.config.leaky_slope
        branches = [conv2d(x, p[f"G.{name}.k{k}.w"], p[f"G.{name}.k{k}.b"], padding="same")
                    for k in self.config.kernel_sides]
        h = concat(branches, axis=1).leaky_relu(slope)
        h = conv2d(h, p[f"G.{name}.merge.w"], p[f"G.{name}.merge.b"])
        return h.leaky_relu(slope)

    def check_input(self, side: int) -> None:
        step = 2 ** self.config.depth
        if side % step:
            raise ValueError(
                f"SU-Net of depth {self.config.depth} needs a side divisible by {step}; "
                f"got {side} (admissible near by: {side // step * step}, {(side // step + 1) * step})")

    def __call__(self, y) -> Tensor:
        y = y if isinstance(y, Tensor) else Tensor(y)
        if y.ndim == 2:
            y = y.reshape(1, 1, *y.shape)
        elif y.ndim == 3:
            y = y.reshape(y.shape[0], 1, y.shape[1], y.shape[2])
        self.check_input(y.shape[-1])
        skips = []
        h = y
        for i in range(self.config.depth):
            h = self._unit(f"enc{i}", h)
            skips.append(h)
            h = avg_pool(h)
        h = self._unit("mid", h)
        for i in reversed(range(self.config.depth)):
            h = concat([nearest_upsample(h), skips[i]], axis=1)
            h = self._unit(f"dec{i}", h)
        for i in range(self.config.n_tail):
            h = self._unit(f"tail{i}", h)
        out = conv2d(h, self.params["G.out.w"], self.params["G.out.b"])
        return out.sigmoid()


def sunet_param_count(config: SuNetConfig) -> int:
    """Closed-form trainable parameter count."""
    B, ks = config.base_channels, config.kernel_sides
    total = 0
    for _, cin in config.unit_layout():
        total += sum(B * cin * k * k + B for k in ks)
        total += B * (B * len(ks)) + B
    return total + B + 1


def sunet_forward(model: SUNet, y) -> Tensor:
    return model(y)


# -- discriminator -------------------------------------------------------------

@dataclass(frozen=True)
class DiscriminatorConfig:
    n_conv_layers: int = 11
    kernel_side: int = 3
    leaky_slope: float = 0.2
    norm: str = "batch"
    widths: tuple = (8, 8, 16, 16, 32, 32, 32, 32, 32, 32, 1)
    strides: tuple = (1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1)
    input_side: int = 32
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if len(self.widths) != self.n_conv_layers or len(self.strides) != self.n_conv_layers:
            raise ValueError("widths and strides need one entry per conv layer")
        if self.widths[-1] != 1:
            raise ValueError("the last conv layer must produce a single channel")
        if self.norm not in ("batch", "none"):
            raise ValueError(f"norm must be 'batch' or 'none', got {self.norm!r}")


class Discriminator(Module):
    """Plain CNN: conv3x3 -> [batch norm] -> leaky ReLU, final conv to one
    channel, global average, sigmoid."""

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 1):
        super().__init__()
        self.config = config
        rng = SplitMix64(seed)
        cin = 1
        for i, cout in enumerate(config.widths):
            self._add(*_conv_param(rng, f"D.conv{i}", cout, cin, config.kernel_side, config.leaky_slope))
            if config.norm == "batch" and i < config.n_conv_layers - 1:
                self._add(Parameter(np.ones(cout), f"D.bn{i}.gamma"),
                          Parameter(np.zeros(cout), f"D.bn{i}.beta"),
                          Parameter(np.zeros(cout), f"D.bn{i}.running_mean", trainable=False),
                          Parameter(np.ones(cout), f"D.bn{i}.running_var", trainable=False))
            cin = cout

    def _batch_norm(self, i: int, h: Tensor, mode: str, update_stats: bool) -> Tensor:
        p, cfg = self.params, self.config
        C = h.shape[1]
        rm, rv = p[f"D.bn{i}.running_mean"], p[f"D.bn{i}.running_var"]
        if mode == "train":
            mean = h.mean(axis=(0, 2, 3), keepdims=True)
            cen = h - mean
            var = cen.square().mean(axis=(0, 2, 3), keepdims=True)
            if update_stats:
                m = cfg.bn_momentum
                rm.data[...] = (1 - m) * rm.data + m * mean.data.reshape(C)
                rv.data[...] = (1 - m) * rv.data + m * var.data.reshape(C)
            normed = cen / (var + cfg.bn_eps).sqrt()
        else:
            normed = (h - Tensor(rm.data.reshape(1, C, 1, 1))) / Tensor(
                np.sqrt(rv.data + cfg.bn_eps).reshape(1, C, 1, 1))
        gamma = p[f"D.bn{i}.gamma"].reshape(1, C, 1, 1)
        beta = p[f"D.bn{i}.beta"].reshape(1, C, 1, 1)
        return normed * gamma + beta

    def __call__(self, img, mode: str = "train", update_stats: bool = True) -> Tensor:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = img if isinstance(img, Tensor) else Tensor(img)
        if x.ndim == 2:
            x = x.reshape(1, 1, *x.shape)
        elif x.ndim == 3:
            x = x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])
        cfg, p = self.config, self.params
        if x.shape[-1] != cfg.input_side or x.shape[-2] != cfg.input_side:
            raise ValueError(f"discriminator expects {cfg.input_side}x{cfg.input_side} inputs, "
                             f"got {x.shape[-2]}x{x.shape[-1]}")
        h = x
        last = cfg.n_conv_layers - 1
        for i in range(cfg.n_conv_layers):
            h = conv2d(h, p[f"D.conv{i}.w"], p[f"D.conv{i}.b"], stride=cfg.strides[i], padding=1)
            if i < last:
                if cfg.norm == "batch":
                    h = self._batch_norm(i, h, mode, update_stats)
                h = h.leaky_relu(cfg.leaky_slope)
        return h.mean(axis=(1, 2, 3)).sigmoid()


def discriminator_forward(model: Discriminator, img, mode: str = "train") -> Tensor:
    return model(img, mode)


# -- checkpoints ---------------------------------------------------------------

MAGIC = b"SEGANCKPT"
VERSION = 1


def config_digest(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()


def save_checkpoint(path, tensors: dict, config_text: str, iteration: int = 0) -> None:
    """Header (magic, version, digest, config, iteration) then named
    little-endian float64 tensors."""
    cfg = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(config_digest(config_text).encode("ascii"))
        fh.write(struct.pack("<Q", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<QI", iteration, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


@dataclass
class Checkpoint:
    digest: str
    config_text: str
    iteration: int
    tensors: dict = field(default_factory=dict)


def load_checkpoint(path, expected_digest: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ValueError(f"{path}: truncated checkpoint at byte {pos} (need {n} more bytes, "
                             f"have {len(buf) - pos})")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    digest = take(64).decode("ascii")
    (n_cfg,) = struct.unpack("<Q", take(8))
    config_text = take(n_cfg).decode("utf-8")
    if config_digest(config_text) != digest:
        raise ValueError(f"{path}: embedded config does not match its digest")
    if expected_digest is not None and digest != expected_digest:
        raise ValueError(f"{path}: config digest {digest[:12]} does not match expected "
                         f"{expected_digest[:12]}")
    iteration, count = struct.unpack("<QI", take(12))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    return Checkpoint(digest, config_text, iteration, tensors)
