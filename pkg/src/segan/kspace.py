"""Acquisition model: orthonormal 2-D DFT, Gaussian variable-density masks,
noisy undersampling and the zero-filled reconstruction.

K-space grids are stored *centred* (DC at ``[side // 2, side // 2]``); use
:func:`fftshift` / :func:`ifftshift` to move between layouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64


def _check_grid(a: np.ndarray) -> None:
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {a.shape}")


def dft2(img) -> np.ndarray:
    """Orthonormal forward DFT (uncentred layout)."""
    a = np.asarray(img)
    _check_grid(a)
    return np.fft.fft2(a, norm="ortho")


def idft2(grid) -> np.ndarray:
    """Orthonormal inverse DFT."""
    a = np.asarray(grid)
    _check_grid(a)
    return np.fft.ifft2(a, norm="ortho")


def fftshift(grid) -> np.ndarray:
    return np.fft.fftshift(grid)


def ifftshift(grid) -> np.ndarray:
    return np.fft.ifftshift(grid)


@dataclass(frozen=True)
class SamplingMask:
    side: int
    selected: np.ndarray  # bool [side, side], centred layout
    target_rate: float
    seed: int

    @property
    def rate(self) -> float:
        return float(self.selected.mean())

    def __eq__(self, other) -> bool:
        return (isinstance(other, SamplingMask) and self.side == other.side
                and np.array_equal(self.selected, other.selected))


def center_block_side(side: int, rate: float) -> int:
    return max(2, int(round(0.04 * side * side * rate / side)))


def make_gaussian_mask(side: int, rate: float, seed: int) -> SamplingMask:
    """Variable-density mask with Gaussian sampling density around DC.

    A central square is always sampled; the remaining budget is drawn without
    replacement with probability proportional to a centred Gaussian
    (sigma = side / 6), using exponential-key weighted sampling.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    if side < 4:
        raise ValueError(f"side must be >= 4, got {side}")
    total = side * side
    budget = int(round(rate * total))
    sel = np.zeros((side, side), dtype=bool)
    if budget >= total:
        return SamplingMask(side, np.ones((side, side), dtype=bool), rate, seed)
    c = center_block_side(side, rate)
    lo = side // 2 - c // 2
    sel[lo:lo + c, lo:lo + c] = True
    if c * c > budget:
        raise ValueError(
            f"rate {rate} gives {budget} samples but the fully sampled {c}x{c} centre "
            f"alone needs {c * c}; raise the rate or the side")
    coords = np.arange(side) - side // 2
    sigma = side / 6.0
    dens = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2 * sigma * sigma))
    free = np.flatnonzero(~sel.ravel())
    u = SplitMix64(seed).uniform(total)[free]
    # keys log(u)/w: the k largest are a weighted sample without replacement
    with np.errstate(divide="ignore"):
        keys = np.log(u) / dens.ravel()[free]
    remaining = budget - c * c
    order = np.lexsort((free, -keys))  # ties broken by position
    sel.ravel()[free[order[:remaining]]] = True
    return SamplingMask(side, sel, rate, seed)


@dataclass
class KSpaceSample:
    side: int
    values: np.ndarray  # complex [side, side], centred; zero where mask is false
    mask: SamplingMask
    noise_sigma: float = 0.0


def undersample(x, mask: SamplingMask, noise_sigma: float = 0.0, seed: int = 0) -> KSpaceSample:
    """``y = M * F(x) + M * noise`` with complex Gaussian noise per component."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (mask.side, mask.side):
        raise ValueError(f"image shape {x.shape} does not match mask side {mask.side}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    k = fftshift(dft2(x))
    if noise_sigma > 0:
        z = SplitMix64(seed).normal(2 * x.size).reshape(2, *x.shape)
        k = k + noise_sigma * (z[0] + 1j * z[1])
    y = np.where(mask.selected, k, 0.0 + 0.0j)
    return KSpaceSample(mask.side, y, mask, float(noise_sigma))


def zero_fill(y: KSpaceSample) -> np.ndarray:
    """Magnitude of the inverse transform, clamped to [0, 1]."""
    img = np.abs(idft2(ifftshift(y.values)))
    return np.clip(img, 0.0, 1.0)


# -- file formats ------------------------------------------------------------

def write_mask(path, mask: SamplingMask) -> None:
    lines = [f"MASK {mask.side} {float(mask.target_rate)!r} {mask.seed}"]
    lines += ["".join("1" if v else "0" for v in row) for row in mask.selected]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mask(path) -> SamplingMask:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty mask file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "MASK":
        raise ValueError(f"{path}: bad header {lines[0]!r}, expected 'MASK <side> <rate> <seed>'")
    side, rate, seed = int(head[1]), float(head[2]), int(head[3])
    rows = lines[1:1 + side]
    if len(rows) != side or any(len(r) != side or set(r) - {"0", "1"} for r in rows):
        raise ValueError(f"{path}: expected {side} rows of {side} '0'/'1' characters")
    sel = np.array([[ch == "1" for ch in r] for r in rows], dtype=bool)
    return SamplingMask(side, sel, rate, seed)


def write_kspace_csv(path, y: KSpaceSample) -> None:
    rows, cols = np.nonzero(y.mask.selected)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# side={y.side} rate={float(y.mask.target_rate)!r} seed={y.mask.seed} "
                 f"sigma={float(y.noise_sigma)!r} layout=centred\n")
        fh.write("row,col,re,im\n")
        for r, c in zip(rows, cols):
            v = y.values[r, c]
            fh.write(f"{r},{c},{float(v.real)!r},{float(v.imag)!r}\n")


def read_kspace_csv(path) -> KSpaceSample:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing '# side=...' header")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
    side = int(meta["side"])
    if len(lines) < 2 or lines[1] != "row,col,re,im":
        raise ValueError(f"{path}: expected column header 'row,col,re,im'")
    sel = np.zeros((side, side), dtype=bool)
    vals = np.zeros((side, side), dtype=np.complex128)
    for n, line in enumerate(lines[2:], start=3):
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}:{n}: expected 4 fields, got {len(parts)}")
        r, c = int(parts[0]), int(parts[1])
        sel[r, c] = True
        vals[r, c] = complex(float(parts[2]), float(parts[3]))
    mask = SamplingMask(side, sel, float(meta.get("rate", sel.mean())), int(meta.get("seed", 0)))
    return KSpaceSample(side, vals, mask, float(meta.get("sigma", 0.0)))
