"""Finite-difference checks for every loss term and both networks.

Each check builds a small random problem (8x8 to 16x16 images) and compares
reverse-mode gradients against central differences on the inputs or
parameters. :func:`run_suite` runs all of them, or a named subset.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import losses
from .correlation import GaussianKernel, LinearCombination, Pearson, Polynomial
from .models import Discriminator, DiscriminatorConfig, SUNet, SuNetConfig
from .patches import sample_pairs, split
from .rng import SplitMix64, derive_seed
from .tensor import GradCheckReport, Parameter, grad_check

TOL = 1e-5
# Networks: fourth-order stencil with a larger step, which keeps cancellation
# error well below the gradient scale (steps that cross a leaky-ReLU kink are
# shrunk or skipped by grad_check). Loss terms use the plain three-point
# difference at 1e-5.
NET_EPS = 1e-3

CORRELATIONS = {
    "pearson": Pearson(),
    "gaussian": GaussianKernel(2.0),
    "polynomial": Polynomial(2, 1.0, 1.0),
    "combo": LinearCombination((0.5, 0.5), (Pearson(), Polynomial(2, 1.0, 1.0))),
}


@dataclass
class CheckResult:
    name: str
    report: GradCheckReport
    seconds: float

    @property
    def ok(self) -> bool:
        return self.report.ok(TOL)


def _image(seed: int, shape, lo: float = 0.1, hi: float = 1.0) -> np.ndarray:
    return lo + (hi - lo) * SplitMix64(seed).uniform(int(np.prod(shape))).reshape(shape)


def _pair(seed: int, side: int, batch: int = 2):
    x = _image(derive_seed(seed, 0), (batch, 1, side, side))
    g = Parameter(_image(derive_seed(seed, 1), (batch, 1, side, side)), "g")
    return x, g


def check_mse(seed=0):
    x, g = _pair(seed, 8)
    return grad_check(lambda: losses.mse_frobenius(x, g), [g])


def check_ssimr(seed=0):
    x, g = _pair(seed, 12)
    cfg = losses.SsimConfig(5, 1.0)
    return grad_check(lambda: losses.ssimr(x, g, cfg), [g])


def _pcr_check(kind: str, stochastic: bool, seed=0):
    x, g = _pair(seed, 8)
    f = CORRELATIONS[kind]
    _, xp = split(losses.as_batch(x), 16)
    sel = sample_pairs(16, 0.3, seed) if stochastic else None

    def fn():
        _, gp = split(g, 16)
        return losses.spcr(xp, gp, f, sel) if stochastic else losses.pcr(xp, gp, f)
    return grad_check(fn, [g])


def check_sel(seed=0):
    x, g = _pair(seed, 16)
    sel = sample_pairs(16, 0.25, seed)
    cfg = losses.SsimConfig()
    return grad_check(lambda: losses.sel(x, g, losses.LossWeights(), Polynomial(), cfg, sel, 16), [g])


def check_adversarial(seed=0):
    r = SplitMix64(seed).uniform(8)
    d_real = Parameter(0.1 + 0.8 * r[:4], "d_real")
    d_fake = Parameter(0.1 + 0.8 * r[4:], "d_fake")
    rep = grad_check(lambda: losses.adversarial_losses(d_real, d_fake)[0], [d_real, d_fake])
    rep_g = grad_check(lambda: losses.generator_adversarial_loss(d_fake), [d_fake])
    rep.merge(rep_g, "gen:")
    return rep


def check_sunet(seed=0):
    model = SUNet(SuNetConfig(), seed=seed)
    y = _image(derive_seed(seed, 2), (1, 1, 16, 16))
    target = _image(derive_seed(seed, 3), (1, 1, 16, 16))
    return grad_check(lambda: losses.mse_frobenius(target, model(y)), model.parameters(),
                      eps=NET_EPS, max_coords=4, seed=seed, stencil=5)


def check_discriminator(seed=0, norm: str = "none"):
    cfg = DiscriminatorConfig(norm=norm, input_side=16)
    model = Discriminator(cfg, seed=seed)
    img = _image(derive_seed(seed, 4), (4, 1, 16, 16))
    params = [p for p in model.parameters() if p.name not in inert_biases(model)]
    return grad_check(lambda: model(img, "train", update_stats=False).log().mean(),
                      params, eps=NET_EPS, max_coords=6, seed=seed, stencil=5)


def inert_biases(model: Discriminator) -> set:
    """Conv biases followed by batch norm: the normalisation subtracts them
    out, so their gradient is identically zero and a relative error is
    meaningless."""
    cfg = model.config
    if cfg.norm != "batch":
        return set()
    return {f"D.conv{i}.b" for i in range(cfg.n_conv_layers - 1)}


def _registry() -> dict:
    reg = {
        "mse": check_mse,
        "ssimr": check_ssimr,
        "sel": check_sel,
        "adversarial": check_adversarial,
        "sunet": check_sunet,
        "discriminator": check_discriminator,
        "discriminator-bn": lambda seed=0: check_discriminator(seed, "batch"),
    }
    for kind in CORRELATIONS:
        reg[f"pcr-{kind}"] = lambda seed=0, k=kind: _pcr_check(k, False, seed)
        reg[f"spcr-{kind}"] = lambda seed=0, k=kind: _pcr_check(k, True, seed)
    return reg


CHECKS = _registry()


def run_suite(names=None, seed: int = 0) -> list:
    """Run the named checks (all by default); a name may be a prefix like ``pcr``."""
    if names:
        chosen = [n for n in CHECKS if any(n == q or n.startswith(q + "-") for q in names)]
        unknown = [q for q in names if not any(n == q or n.startswith(q + "-") for n in CHECKS)]
        if unknown:
            raise KeyError(f"unknown gradcheck module(s) {unknown}; known: {sorted(CHECKS)}")
    else:
        chosen = list(CHECKS)
    out = []
    for name in chosen:
        t0 = time.perf_counter()
        rep = CHECKS[name](seed)
        out.append(CheckResult(name, rep, time.perf_counter() - t0))
    return out
