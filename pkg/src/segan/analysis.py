"""Reconstruction metrics and online-learning regret diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .correlation import CorrelationFunction, Polynomial
from .losses import SsimConfig
from .rng import SplitMix64, derive_seed
from .tensor import Parameter, Tensor, conv2d, no_grad


# -- image metrics -------------------------------------------------------------

def nmse(x, g, mode: str = "ratio") -> float:
    """``||x - g|| / ||x||`` (``mode="ratio"``) or its square (``"squared"``)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise ValueError(f"nmse: shape mismatch {x.shape} vs {g.shape}")
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ValueError("nmse: reference image is all zero")
    r = float(np.linalg.norm(x - g) / nx)
    if mode == "ratio":
        return r
    if mode == "squared":
        return r * r
    raise ValueError(f"unknown nmse mode {mode!r}")


def psnr(x, g, data_range: float = 1.0) -> float:
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise ValueError(f"psnr: shape mismatch {x.shape} vs {g.shape}")
    mse = float(np.mean((x - g) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))


def ssim_value(x, g, cfg: SsimConfig = SsimConfig()) -> float:
    with no_grad():
        return losses.ssim(np.asarray(x, dtype=np.float64), np.asarray(g, dtype=np.float64), cfg).item()


def _window_for(patch_side: int, cfg: SsimConfig) -> SsimConfig:
    if cfg.window_side <= patch_side:
        return cfg
    w = patch_side if patch_side % 2 else patch_side - 1
    return SsimConfig(max(w, 1), cfg.gaussian_sigma, cfg.k1, cfg.k2, cfg.dynamic_range)


def lssm_positions(side: int, n: int, patch_side: int, seed: int) -> np.ndarray:
    if patch_side > side:
        raise ValueError(f"n_lssm: patch {patch_side} larger than image {side}")
    if n < 1:
        raise ValueError("n_lssm: need at least one patch")
    return SplitMix64(seed).integers(2 * n, side - patch_side + 1).reshape(n, 2)


def n_lssm(x, g, n: int, patch_side: int, seed: int, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean SSIM over ``n`` random co-located ``patch_side`` squares."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape or x.ndim != 2:
        raise ValueError(f"n_lssm: expected equal 2-D images, got {x.shape} and {g.shape}")
    if patch_side > min(x.shape):
        raise ValueError(f"n_lssm: patch {patch_side} larger than image {x.shape}")
    pos = lssm_positions(min(x.shape), n, patch_side, seed)
    px = np.stack([x[r:r + patch_side, c:c + patch_side] for r, c in pos])
    pg = np.stack([g[r:r + patch_side, c:c + patch_side] for r, c in pos])
    with no_grad():
        vals = losses.ssim_per_image(px, pg, _window_for(patch_side, cfg)).data
    return float(vals.mean())


METRIC_COLUMNS = ("NMSE", "SSIM", "PSNR", "20-LSSM", "40-LSSM")


def image_metrics(x, g, index: int = 0, cfg: SsimConfig = SsimConfig(), lssm_seed: int = 11,
                  lssm_patch: int = 20, nmse_mode: str = "ratio") -> dict:
    side = min(np.shape(x))
    patch = min(lssm_patch, side)
    return {
        "NMSE": nmse(x, g, nmse_mode),
        "SSIM": ssim_value(x, g, cfg),
        "PSNR": psnr(x, g),
        "20-LSSM": n_lssm(x, g, 20, patch, derive_seed(lssm_seed, 20, index), cfg),
        "40-LSSM": n_lssm(x, g, 40, patch, derive_seed(lssm_seed, 40, index), cfg),
    }


def summarize(rows: list) -> dict:
    """``{metric: (mean, std)}`` over per-image metric dicts."""
    out = {}
    for col in METRIC_COLUMNS:
        v = np.array([r[col] for r in rows], dtype=np.float64)
        out[col] = (float(v.mean()), float(v.std()))
    return out


def evaluate_images(targets, recons, **kw) -> dict:
    rows = [image_metrics(x, g, i, **kw) for i, (x, g) in enumerate(zip(targets, recons))]
    return summarize(rows)


# -- regret --------------------------------------------------------------------

@dataclass
class RegretTrace:
    losses: np.ndarray
    etas: np.ndarray
    final_losses: np.ndarray | None = None

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=np.float64)
        self.etas = np.asarray(self.etas, dtype=np.float64)
        if self.losses.shape != self.etas.shape or self.losses.ndim != 1:
            raise ValueError("losses and etas must be 1-D of equal length")
        if not np.all(np.isfinite(self.losses)):
            raise ValueError("regret trace contains non-finite losses")
        if self.final_losses is not None:
            self.final_losses = np.asarray(self.final_losses, dtype=np.float64)

    @property
    def T(self) -> int:
        return len(self.losses)


@dataclass
class RegretReport:
    C: np.ndarray
    C_star: np.ndarray
    R: np.ndarray
    avg_regret: np.ndarray
    mode: str

    @property
    def T(self) -> np.ndarray:
        return np.arange(1, len(self.C) + 1)


def regret(trace: RegretTrace, c_star_mode: str = "best_iterate", c_star=None) -> RegretReport:
    """Cumulative cost, best-fixed cost, regret and average regret for every prefix.

    ``best_iterate``: C*(T) = T * min_{t<=T} L_t.
    ``final_params``: C*(T) = sum_{t<=T} L_t(w_final), needs ``trace.final_losses``.
    ``exact``: C*(T) supplied by the caller (convex problems solved in closed form).
    """
    if trace.T == 0:
        raise ValueError("regret: empty trace")
    C = np.cumsum(trace.losses)
    T = np.arange(1, trace.T + 1)
    if c_star_mode == "best_iterate":
        C_star = T * np.minimum.accumulate(trace.losses)
    elif c_star_mode == "final_params":
        if trace.final_losses is None:
            raise ValueError("final_params mode needs losses re-evaluated at the final parameters")
        C_star = np.cumsum(trace.final_losses)
    elif c_star_mode == "exact":
        C_star = np.asarray(c_star, dtype=np.float64)
    else:
        raise ValueError(f"unknown c_star_mode {c_star_mode!r}")
    R = C - C_star
    return RegretReport(C, C_star, R, R / T, c_star_mode)


@dataclass
class BoundConstants:
    M: float = 0.0
    F: float = 0.0
    G: float = 0.0
    S: float = 0.0
    D_diam: float = 0.0
    d: float = 1.0
    K: int = 32
    N: int = 64
    alpha_bar: float = 0.1
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 100.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"bound constant {k} must be finite and non-negative, got {v}")

    def gradient_term(self) -> float:
        return (self.lambda1 * self.M * self.alpha_bar * self.N ** 2 * self.F
                + self.lambda2 * self.S + self.lambda3 * self.d * self.K ** 2 * self.G)


def theorem1_bound(consts: BoundConstants, T):
    """D^2 sqrt(T)/2 + (l1 M abar N^2 F + l2 S + l3 d K^2 G)^2 (4 sqrt(T) - 2)."""
    T_arr = np.asarray(T, dtype=np.float64)
    if np.any(T_arr < 1):
        raise ValueError("theorem1_bound: T must be >= 1")
    root = np.sqrt(T_arr)
    val = consts.D_diam ** 2 * root / 2.0 + consts.gradient_term() ** 2 * (4.0 * root - 2.0)
    return float(val) if np.ndim(val) == 0 else val


def trajectory_diameter(points: np.ndarray, chunk: int = 256) -> float:
    """Largest pairwise Euclidean distance among the rows of ``points``."""
    P = np.asarray(points, dtype=np.float64)
    sq = np.einsum("ij,ij->i", P, P)
    best = 0.0
    for s in range(0, len(P), chunk):
        blk = P[s:s + chunk]
        d2 = sq[s:s + chunk, None] + sq[None, :] - 2.0 * blk @ P.T
        best = max(best, float(d2.max()))
    return float(np.sqrt(max(best, 0.0)))


def write_regret_csv(path, report: RegretReport, bound=None) -> None:
    bound = np.full(len(report.C), np.nan) if bound is None else np.asarray(bound)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "C", "C_star", "R", "avg_regret", "bound"])
        for t in range(len(report.C)):
            w.writerow([t + 1, repr(float(report.C[t])), repr(float(report.C_star[t])),
                        repr(float(report.R[t])), repr(float(report.avg_regret[t])),
                        repr(float(bound[t]))])


# -- online gradient descent diagnostics -----------------------------------------

def online_gradient_descent(grad_fns, w0, etas) -> np.ndarray:
    """Plain OGD: ``w_{t+1} = w_t - eta_t * grad_t(w_t)``; returns all iterates w_1..w_{T+1}."""
    w = np.array(w0, dtype=np.float64)
    out = [w.copy()]
    for gf, eta in zip(grad_fns, etas):
        w = w - eta * gf(w)
        out.append(w.copy())
    return np.array(out)


@dataclass
class SurrogateRun:
    trace: RegretTrace
    c_star: np.ndarray
    report: RegretReport
    constants: BoundConstants
    bound: np.ndarray
    weights: np.ndarray = field(repr=False)


def run_convex_surrogate(images, zero_filled, T: int = 5000, lambda3: float = 0.1,
                         kernel_side: int = 3, seed: int = 0,
                         f: CorrelationFunction = Polynomial(), n_patches: int = 64,
                         alpha_bar: float = 0.1) -> SurrogateRun:
    """GD with eta_t = 1/sqrt(t) on a linear generator ``conv(y, w) + b``.

    With lambda1 = lambda2 = 0 each round's SEL is a convex quadratic in the
    parameters, so the best fixed parameters for every prefix come from the
    accumulated normal equations and the regret is exact.
    """
    xs = [np.asarray(x, dtype=np.float64) for x in images]
    ys = [np.asarray(y, dtype=np.float64) for y in zero_filled]
    side = xs[0].shape[0]
    k = kernel_side
    pad = ((k - 1) // 2, k - 1 - (k - 1) // 2)
    # per-sample design matrices: one row per pixel = [patch, 1]
    designs = []
    for y in ys:
        yp = np.pad(y, (pad, pad))
        win = np.lib.stride_tricks.sliding_window_view(yp, (k, k)).reshape(side * side, k * k)
        designs.append(np.hstack([win, np.ones((side * side, 1))]))
    P = side * side
    gram = [A.T @ A for A in designs]
    cross = [A.T @ x.reshape(-1) for A, x in zip(designs, xs)]
    energy = [float(x.reshape(-1) @ x.reshape(-1)) for x in xs]

    weights = losses.LossWeights(0.0, 0.0, lambda3)
    w_param = Parameter(np.zeros((1, 1, k, k)), "lin.w")
    b_param = Parameter(np.zeros(1), "lin.b")
    rng = SplitMix64(derive_seed(seed, 17))
    order = rng.integers(T, len(xs))
    losses_t = np.empty(T)
    etas = 1.0 / np.sqrt(np.arange(1, T + 1))
    traj = np.empty((T + 1, k * k + 1))
    traj[0] = 0.0
    H = np.zeros((k * k + 1, k * k + 1))
    q = np.zeros(k * k + 1)
    c = 0.0
    c_star = np.empty(T)
    for t in range(T):
        i = order[t]
        g = conv2d(Tensor(ys[i][None, None]), w_param, b_param, padding="same")
        loss = losses.sel(xs[i], g, weights, f, n_patches=n_patches)
        loss.backward()
        losses_t[t] = loss.item()
        w_param.data -= etas[t] * w_param.grad
        b_param.data -= etas[t] * b_param.grad
        traj[t + 1, :-1] = w_param.data.reshape(-1)
        traj[t + 1, -1] = b_param.data[0]
        H += gram[i]
        q += cross[i]
        c += energy[i]
        w_star = np.linalg.solve(H, q)
        c_star[t] = lambda3 / P * max(c - q @ w_star, 0.0)
    trace = RegretTrace(losses_t, etas)
    report = regret(trace, "exact", c_star)
    # d/dw of pixel (i, j) is its design row; its norm bounds the generator gradient
    G = max(float(np.sqrt((designs[i] ** 2).sum(axis=1)).max()) for i in set(order.tolist()))
    d = max(float(x.max() - x.min()) for x in xs)
    consts = BoundConstants(M=f.bound_M((0.0, 1.0)), F=0.0, G=G, S=0.0,
                            D_diam=trajectory_diameter(traj[:T]), d=d, K=side, N=n_patches,
                            alpha_bar=alpha_bar, lambda1=0.0, lambda2=0.0, lambda3=lambda3)
    bound = theorem1_bound(consts, np.arange(1, T + 1))
    return SurrogateRun(trace, c_star, report, consts, bound, traj)

