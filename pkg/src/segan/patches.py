"""Equal-size patch grids and Bernoulli pair selection for stochastic PCR."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .tensor import Tensor


@dataclass(frozen=True)
class PatchPartition:
    n_patches: int
    image_side: int

    @property
    def per_row(self) -> int:
        return math.isqrt(self.n_patches)

    @property
    def patch_side(self) -> int:
        return self.image_side // self.per_row

    def ranges(self, patch_id: int) -> tuple:
        r, c = divmod(patch_id, self.per_row)
        k = self.patch_side
        return (r * k, (r + 1) * k), (c * k, (c + 1) * k)


def admissible_counts(side: int) -> list:
    return [r * r for r in range(1, side + 1) if side % r == 0]


def partition(side: int, n_patches: int) -> PatchPartition:
    r = math.isqrt(n_patches)
    if n_patches < 1 or r * r != n_patches or side % r:
        raise ValueError(
            f"cannot split a {side}x{side} image into {n_patches} equal patches; "
            f"admissible counts: {admissible_counts(side)}")
    return PatchPartition(n_patches, side)


def split(img, n_patches: int):
    """Row-major patches.

    A 2-D ndarray gives ``(partition, [N, k, k] array)``. A Tensor of shape
    [B, 1, H, W] or [B, H, W] gives ``(partition, Tensor[B, N, k*k])``, the
    differentiable layout the PCR losses consume.
    """
    if isinstance(img, Tensor):
        x = img if img.ndim == 3 else img.reshape(img.shape[0], img.shape[-2], img.shape[-1])
        B, H, W = x.shape
        if H != W:
            raise ValueError("patches: square images only")
        part = partition(H, n_patches)
        r, k = part.per_row, part.patch_side
        p = x.reshape(B, r, k, r, k).transpose(0, 1, 3, 2, 4).reshape(B, n_patches, k * k)
        return part, p
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"patches: expected a square 2-D image, got {a.shape}")
    part = partition(a.shape[0], n_patches)
    r, k = part.per_row, part.patch_side
    return part, a.reshape(r, k, r, k).transpose(0, 2, 1, 3).reshape(n_patches, k, k).copy()


def reassemble(patches: np.ndarray) -> np.ndarray:
    n, k, _ = patches.shape
    r = math.isqrt(n)
    return patches.reshape(r, r, k, k).transpose(0, 2, 1, 3).reshape(r * k, r * k)


def pair_count(n_patches: int) -> int:
    return n_patches * (n_patches - 1) // 2


@dataclass(frozen=True)
class PairSelection:
    """One Bernoulli draw per unordered pair (i < j), row-major over the upper triangle."""

    n_patches: int
    alpha: np.ndarray  # bool [N(N-1)/2]
    alpha_bar: float
    seed: int

    def matrix(self) -> np.ndarray:
        """Strict upper-triangular 0/1 matrix of selected pairs."""
        m = np.zeros((self.n_patches, self.n_patches))
        iu = np.triu_indices(self.n_patches, k=1)
        m[iu] = self.alpha
        return m

    @property
    def count(self) -> int:
        return int(self.alpha.sum())


def sample_pairs(n_patches: int, alpha_bar: float, seed: int) -> PairSelection:
    if not 0 < alpha_bar <= 1:
        raise ValueError(f"alpha_bar must be in (0, 1], got {alpha_bar}")
    n = pair_count(n_patches)
    alpha = SplitMix64(seed).uniform(n) < alpha_bar
    return PairSelection(n_patches, alpha, float(alpha_bar), seed)
