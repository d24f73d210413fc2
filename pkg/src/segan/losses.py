"""Structure-enhanced loss family: MSE, SSIM/SSIMR, (stochastic) PCR, their
weighted sum, and the adversarial terms.

Image arguments are Tensors or arrays shaped [H, W], [B, H, W] or
[B, 1, H, W]; batch values are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import patches as patches_mod
from .correlation import CorrelationFunction, Polynomial
from .patches import PairSelection
from .tensor import Tensor, conv2d

SCORE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 100.0

    def __post_init__(self):
        for v in (self.lambda1, self.lambda2, self.lambda3):
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weights must be finite and non-negative, got {self}")


@dataclass(frozen=True)
class SsimConfig:
    window_side: int = 7
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_side < 1 or self.window_side % 2 == 0:
            raise ValueError(f"SSIM window side must be odd and positive, got {self.window_side}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("SSIM k1 and k2 must be positive")


def as_batch(img) -> Tensor:
    """Coerce to a [B, 1, H, W] Tensor."""
    t = img if isinstance(img, Tensor) else Tensor(img)
    if t.ndim == 2:
        return t.reshape(1, 1, *t.shape)
    if t.ndim == 3:
        return t.reshape(t.shape[0], 1, t.shape[1], t.shape[2])
    if t.ndim == 4 and t.shape[1] == 1:
        return t
    raise ValueError(f"expected an image or a batch of single-channel images, got {t.shape}")


def _same_shape(x: Tensor, g: Tensor, what: str) -> None:
    if x.shape != g.shape:
        raise ValueError(f"{what}: shape mismatch {x.shape} vs {g.shape}")


def mse_frobenius(x, g) -> Tensor:
    """Squared Frobenius norm of the difference divided by the pixel count."""
    x, g = as_batch(x), as_batch(g)
    _same_shape(x, g, "mse_frobenius")
    return (x - g).square().mean()


def gaussian_window(side: int, sigma: float) -> np.ndarray:
    c = np.arange(side) - (side - 1) / 2.0
    w1 = np.exp(-c * c / (2.0 * sigma * sigma))
    w = np.outer(w1, w1)
    return w / w.sum()


def ssim_per_image(x, g, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Mean local SSIM over all fully contained Gaussian windows, one value per image."""
    x, g = as_batch(x), as_batch(g)
    _same_shape(x, g, "ssim")
    H, W = x.shape[2], x.shape[3]
    if cfg.window_side > min(H, W):
        raise ValueError(f"ssim: window {cfg.window_side} larger than image {H}x{W}")
    win = Tensor(gaussian_window(cfg.window_side, cfg.gaussian_sigma)[None, None])
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    mu_x = conv2d(x, win)
    mu_g = conv2d(g, win)
    mxx, mgg, mxg = mu_x * mu_x, mu_g * mu_g, mu_x * mu_g
    sxx = conv2d(x * x, win) - mxx
    sgg = conv2d(g * g, win) - mgg
    sxg = conv2d(x * g, win) - mxg
    num = (mxg * 2.0 + c1) * (sxg * 2.0 + c2)
    den = (mxx + mgg + c1) * (sxx + sgg + c2)
    smap = num / den
    return smap.mean(axis=(1, 2, 3))


def ssim(x, g, cfg: SsimConfig = SsimConfig()) -> Tensor:
    return ssim_per_image(x, g, cfg).mean()


def ssimr(x, g, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """(1 - SSIM)^2 per image, averaged over the batch."""
    s = ssim_per_image(x, g, cfg)
    return (1.0 - s).square().mean()


def _patch_batch(p) -> Tensor:
    t = p if isinstance(p, Tensor) else Tensor(p)
    if t.ndim == 2:  # [N, D]
        return t.reshape(1, *t.shape)
    if t.ndim == 3 and not isinstance(p, Tensor):  # [N, k, k] array of patches
        return t.reshape(1, t.shape[0], -1)
    if t.ndim == 3:
        return t
    raise ValueError(f"expected patches shaped [N, D], [N, k, k] or [B, N, D], got {t.shape}")


def _pcr_core(xp, gp, f: CorrelationFunction, weight_matrix: np.ndarray) -> Tensor:
    xp, gp = _patch_batch(xp), _patch_batch(gp)
    if xp.shape != gp.shape:
        raise ValueError(f"pcr: patch sets differ in shape: {xp.shape} vs {gp.shape}")
    n = xp.shape[1]
    if n < 2:
        raise ValueError("pcr: need at least 2 patches")
    fx = f.pairwise(xp)
    fg = f.pairwise(gp)
    d = (fg - fx).square() * Tensor(weight_matrix)
    per_image = d.sum(axis=(1, 2)) * (1.0 / patches_mod.pair_count(n))
    return per_image.mean()


def pcr(x_patches, g_patches, f: CorrelationFunction = Polynomial()) -> Tensor:
    """Mean over all pairs i < j of the squared correlation mismatch."""
    n = _patch_batch(x_patches).shape[1]
    return _pcr_core(x_patches, g_patches, f, np.triu(np.ones((n, n)), k=1))


def spcr(x_patches, g_patches, f: CorrelationFunction, sel: PairSelection) -> Tensor:
    """PCR restricted to selected pairs, still divided by the full pair count."""
    n = _patch_batch(x_patches).shape[1]
    if sel.n_patches != n:
        raise ValueError(f"spcr: selection sized for {sel.n_patches} patches, got {n}")
    return _pcr_core(x_patches, g_patches, f, sel.matrix())


def sel_terms(x, g, weights: LossWeights = LossWeights(), f: CorrelationFunction = Polynomial(),
              cfg: SsimConfig = SsimConfig(), selection: PairSelection | None = None,
              n_patches: int = 64) -> dict:
    """Weighted SEL components; terms with zero weight are not computed.

    Returns ``{"spcr", "ssimr", "mse", "total"}`` where the first three are
    already multiplied by their lambdas. With ``selection`` given the PCR term
    is the stochastic one (SSEL).
    """
    x, g = as_batch(x), as_batch(g)
    _same_shape(x, g, "sel")
    zero = Tensor(0.0)
    terms = {"spcr": zero, "ssimr": zero, "mse": zero}
    if weights.lambda1:
        _, xp = patches_mod.split(x, n_patches)
        _, gp = patches_mod.split(g, n_patches)
        term = spcr(xp, gp, f, selection) if selection is not None else pcr(xp, gp, f)
        terms["spcr"] = term * weights.lambda1
    if weights.lambda2:
        terms["ssimr"] = ssimr(x, g, cfg) * weights.lambda2
    if weights.lambda3:
        terms["mse"] = mse_frobenius(x, g) * weights.lambda3
    terms["total"] = terms["spcr"] + terms["ssimr"] + terms["mse"]
    return terms


def sel(x, g, weights: LossWeights = LossWeights(), f: CorrelationFunction = Polynomial(),
        cfg: SsimConfig = SsimConfig(), selection: PairSelection | None = None,
        n_patches: int = 64) -> Tensor:
    """lambda1 * (S)PCR + lambda2 * SSIMR + lambda3 * MSE."""
    return sel_terms(x, g, weights, f, cfg, selection, n_patches)["total"]


def adversarial_losses(d_real, d_fake) -> tuple:
    """Saturating GAN losses on sigmoid scores.

    Returns ``(loss_D, loss_G_adv)`` with
    ``loss_D = -mean(log d_real) - mean(log(1 - d_fake))`` and
    ``loss_G_adv = mean(log(1 - d_fake))``; both are minimised.
    """
    d_real = d_real if isinstance(d_real, Tensor) else Tensor(d_real)
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    for name, s in (("d_real", d_real), ("d_fake", d_fake)):
        if np.any(s.data < 0) or np.any(s.data > 1) or not np.all(np.isfinite(s.data)):
            raise ValueError(f"{name} scores must lie in [0, 1]; is the sigmoid missing?")
    lo, hi = SCORE_CLAMP, 1.0 - SCORE_CLAMP
    real = d_real.clip(lo, hi)
    fake = d_fake.clip(lo, hi)
    fake_term = (1.0 - fake).log().mean()
    loss_d = -real.log().mean() - fake_term
    return loss_d, fake_term


def generator_adversarial_loss(d_fake) -> Tensor:
    """``mean(log(1 - d_fake))``, the generator's share of the GAN objective."""
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    if np.any(d_fake.data < 0) or np.any(d_fake.data > 1) or not np.all(np.isfinite(d_fake.data)):
        raise ValueError("d_fake scores must lie in [0, 1]; is the sigmoid missing?")
    return (1.0 - d_fake.clip(SCORE_CLAMP, 1.0 - SCORE_CLAMP)).log().mean()
