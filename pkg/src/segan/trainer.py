"""Alternating discriminator / generator training with ADAM.

One outer iteration runs ``n_disc_steps`` discriminator updates with the
generator frozen, then one generator update on SSEL plus the adversarial
term with a freshly drawn pair selection. The structure losses never enter
the discriminator update.
"""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis, losses
from .config import TrainConfig, to_text
from .imageio import read_dataset
from .kspace import make_gaussian_mask, undersample, zero_fill
from .models import Discriminator, SUNet, config_digest, save_checkpoint
from .patches import sample_pairs, split
from .phantoms import generate_phantoms
from .rng import SplitMix64, derive_seed
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("iter", "spcr", "ssimr", "mse", "adv_g", "loss_d", "sel_total")


class NonFiniteGradient(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    pass


# -- ADAM ----------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0,
              iteration: int | None = None) -> None:
    """In-place bias-corrected ADAM with decoupled weight decay.

    ``p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)``. All gradients
    are validated before any parameter is touched.
    """
    for p in params:
        g = grads.get(p.name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {p.name} at iteration {iteration}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p in params:
        g = grads.get(p.name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= lr * weight_decay * p.data + lr * update


@contextlib.contextmanager
def frozen(module):
    """Stop gradients into ``module``'s parameters for the duration."""
    ps = module.parameters()
    for p in ps:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in ps:
            p.requires_grad = p.trainable


# -- data ----------------------------------------------------------------------

def load_images(cfg: TrainConfig) -> tuple:
    """(train images, held-out images) from the dataset directory or phantoms."""
    if cfg.dataset:
        imgs = read_dataset(cfg.dataset)
        if len(imgs) < cfg.n_train + cfg.n_val:
            raise ValueError(f"{cfg.dataset}: need {cfg.n_train + cfg.n_val} images, found {len(imgs)}")
        return imgs[:cfg.n_train], imgs[cfg.n_train:cfg.n_train + cfg.n_val]
    train = generate_phantoms(cfg.n_train, cfg.image_side, cfg.data_seed, cfg.phantom_density)
    val = generate_phantoms(cfg.n_val, cfg.image_side, cfg.val_seed, cfg.phantom_density)
    return train, val


def prepare_pairs(images, cfg: TrainConfig, stream: int, rate: float | None = None) -> tuple:
    """Stack targets and their zero-filled undersampled inputs."""
    xs = np.stack([np.asarray(x, dtype=np.float64) for x in images])
    mask = make_gaussian_mask(xs.shape[1], cfg.sampling_rate if rate is None else rate, cfg.mask_seed)
    zf = np.stack([
        zero_fill(undersample(x, mask, cfg.noise_sigma, derive_seed(cfg.noise_seed, stream, i)))
        for i, x in enumerate(xs)])
    return xs, zf


def evaluate_generator(G: SUNet, xs: np.ndarray, zf: np.ndarray, cfg: TrainConfig) -> dict:
    with no_grad():
        recon = G(zf[:, None]).data[:, 0]
    return analysis.evaluate_images(xs, recon, cfg=cfg.ssim_config(), lssm_seed=cfg.lssm_seed,
                                    lssm_patch=cfg.lssm_patch, nmse_mode=cfg.nmse_mode)


# -- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    G: SUNet
    D: Discriminator
    log_rows: list
    trace: analysis.RegretTrace
    report: analysis.RegretReport
    constants: analysis.BoundConstants
    bound: np.ndarray
    metrics: list
    zero_fill_metrics: dict
    elapsed: float


class SEGANTrainer:
    def __init__(self, cfg: TrainConfig, train_x, train_zf, val_x=None, val_zf=None):
        self.cfg = cfg
        self.x = np.asarray(train_x, dtype=np.float64)
        self.zf = np.asarray(train_zf, dtype=np.float64)
        self.val_x, self.val_zf = val_x, val_zf
        self.G = SUNet(cfg.sunet_config(), seed=derive_seed(cfg.seed, 1))
        self.G.check_input(self.x.shape[-1])
        self.D = Discriminator(cfg.disc_config(), seed=derive_seed(cfg.seed, 2))
        self.adam_G = AdamState()
        self.adam_D = AdamState()
        self.batch_rng = SplitMix64(derive_seed(cfg.seed, 3))
        self.f = cfg.correlation()
        self.weights = cfg.loss_weights()
        self.ssim_cfg = cfg.ssim_config()
        self.t = 0
        self.log_rows: list = []
        self.ssel: list = []
        self.batches: list = []
        self.snapshots: list = []
        self.measured = {"F": 0.0, "G": 0.0, "S": 0.0}
        self._ref_sel = None

    def _adam(self, module, grads, state):
        c = self.cfg
        adam_step(module.parameters(), grads, state, c.learning_rate, c.adam_beta1, c.adam_beta2,
                  c.adam_eps, c.weight_decay, iteration=self.t)

    def _batch(self) -> np.ndarray:
        return self.batch_rng.integers(self.cfg.batch_size, len(self.x))

    def _finite(self, what: str, t: Tensor) -> Tensor:
        if not np.all(np.isfinite(t.data)):
            raise TrainingDiverged(f"{what} became non-finite at iteration {self.t}")
        return t

    def discriminator_step(self) -> float:
        real_idx, fake_idx = self._batch(), self._batch()
        with no_grad():
            fake = self._finite("generator output", self.G(self.zf[fake_idx][:, None])).data
        d_real = self._finite("discriminator score", self.D(self.x[real_idx][:, None], "train"))
        d_fake = self._finite("discriminator score", self.D(fake, "train"))
        loss_d, _ = losses.adversarial_losses(d_real, d_fake)
        grads = loss_d.backward()
        self._adam(self.D, grads, self.adam_D)
        return loss_d.item()

    def selection(self, t: int):
        return sample_pairs(self.cfg.n_patches, self.cfg.alpha_bar, derive_seed(self.cfg.seed, 4, t))

    def generator_terms(self, idx, t: int, with_adv: bool = True) -> dict:
        g = self._finite("generator output", self.G(self.zf[idx][:, None]))
        terms = losses.sel_terms(self.x[idx][:, None], g, self.weights, self.f, self.ssim_cfg,
                                 self.selection(t), self.cfg.n_patches)
        terms["g"] = g
        if with_adv:
            with frozen(self.D):
                d_fake = self._finite("discriminator score", self.D(g, "train", update_stats=False))
            terms["adv_g"] = losses.generator_adversarial_loss(d_fake)
        return terms

    def generator_step(self) -> dict:
        idx = self._batch()
        terms = self.generator_terms(idx, self.t)
        objective = terms["total"] + terms["adv_g"] * self.cfg.adv_weight
        grads = objective.backward()
        self._adam(self.G, grads, self.adam_G)
        self.batches.append(idx)
        return terms

    def measure_constants(self) -> None:
        """Gradient-norm estimates for the regret bound (SSIM, one correlation
        pair and one output pixel per measurement, a few draws each)."""
        c = self.cfg
        rng = SplitMix64(derive_seed(c.seed, 5, self.t))
        idx = self.batches[-1][:1]
        g = self.G(self.zf[idx][:, None])
        params = self.G.parameters()

        def norm_of(root: Tensor) -> float:
            grads = root.backward()
            return float(np.sqrt(sum(float((grads[p.name] ** 2).sum()) for p in params if p.name in grads)))

        s = losses.ssim(self.x[idx][:, None], g, self.ssim_cfg)
        self.measured["S"] = max(self.measured["S"], norm_of(s))
        _, gp = split(g, c.n_patches)
        corr = self.f.pairwise(gp)
        for _ in range(3):
            i, j = sorted(rng.integers(2, c.n_patches).tolist())
            if i == j:
                j = (i + 1) % c.n_patches
                i, j = min(i, j), max(i, j)
            self.measured["F"] = max(self.measured["F"], norm_of(corr[0, i, j]))
        side = g.shape[-1]
        for _ in range(3):
            r, q = rng.integers(2, side).tolist()
            self.measured["G"] = max(self.measured["G"], norm_of(g[0, 0, r, q]))
        self.snapshots.append(np.concatenate([p.data.ravel() for p in params]))

    def step(self) -> dict:
        self.t += 1
        loss_d = 0.0
        for _ in range(self.cfg.n_disc_steps):
            loss_d = self.discriminator_step()
        terms = self.generator_step()
        row = {
            "iter": self.t,
            "spcr": terms["spcr"].item(),
            "ssimr": terms["ssimr"].item(),
            "mse": terms["mse"].item(),
            "adv_g": terms["adv_g"].item(),
            "loss_d": loss_d,
            "sel_total": terms["total"].item(),
        }
        self.log_rows.append(row)
        self.ssel.append(row["sel_total"])
        self._guard(row)
        if self.cfg.bound_every and (self.t == 1 or self.t % self.cfg.bound_every == 0):
            self.measure_constants()
        return row

    def _guard(self, row: dict) -> None:
        val = row["sel_total"]
        if not np.isfinite(val):
            raise TrainingDiverged(f"SEL became non-finite at iteration {self.t}: {row}")
        if self.t == 10:
            self._ref_sel = float(np.mean(self.ssel[:10]))
        if self._ref_sel is not None and self.t > 10 and val > 1e3 * self._ref_sel:
            raise TrainingDiverged(
                f"SEL {val:.4g} at iteration {self.t} exceeds 1000x the first-10 average "
                f"{self._ref_sel:.4g}; last row {row}")

    def final_losses(self) -> np.ndarray:
        """SSEL of the final generator on every iteration's batch and pair selection."""
        out = np.empty(len(self.batches))
        with no_grad():
            for k, idx in enumerate(self.batches):
                out[k] = self.generator_terms(idx, k + 1, with_adv=False)["total"].item()
        return out

    def bound_constants(self) -> analysis.BoundConstants:
        c = self.cfg
        if self.snapshots:
            snaps = self.snapshots + [np.concatenate([p.data.ravel() for p in self.G.parameters()])]
            diam = analysis.trajectory_diameter(np.array(snaps))
        else:
            diam = 0.0
        d = float(max(x.max() - x.min() for x in self.x))
        return analysis.BoundConstants(
            M=self.f.bound_M((0.0, 1.0)), F=self.measured["F"], G=self.measured["G"],
            S=self.measured["S"], D_diam=diam, d=d, K=self.x.shape[-1], N=c.n_patches,
            alpha_bar=c.alpha_bar, lambda1=c.lambda1, lambda2=c.lambda2, lambda3=c.lambda3)

    def checkpoint(self, path) -> None:
        tensors = {**self.G.state(), **self.D.state()}
        save_checkpoint(path, tensors, to_text(self.cfg), self.t)


def train_segan(cfg: TrainConfig, out_dir=None, train_images=None, val_images=None,
                progress_every: int = 100) -> TrainResult:
    """Run the full training loop, writing logs and checkpoints to ``out_dir``."""
    start = time.perf_counter()
    if train_images is None or val_images is None:
        tr, va = load_images(cfg)
        train_images = tr if train_images is None else train_images
        val_images = va if val_images is None else val_images
    train_x, train_zf = prepare_pairs(train_images, cfg, stream=0)
    val_x, val_zf = prepare_pairs(val_images, cfg, stream=1)
    trainer = SEGANTrainer(cfg, train_x, train_zf, val_x, val_zf)
    zf_metrics = analysis.evaluate_images(val_x, val_zf, cfg=cfg.ssim_config(),
                                          lssm_seed=cfg.lssm_seed, lssm_patch=cfg.lssm_patch,
                                          nmse_mode=cfg.nmse_mode)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(to_text(cfg))
    metrics = []
    for t in range(1, cfg.total_iterations + 1):
        row = trainer.step()
        if progress_every and t % progress_every == 0:
            log.info("iter %d sel %.4f loss_d %.4f adv_g %.4f", t, row["sel_total"],
                     row["loss_d"], row["adv_g"])
        if (cfg.eval_every and t % cfg.eval_every == 0) or t == cfg.total_iterations:
            summary = evaluate_generator(trainer.G, val_x, val_zf, cfg)
            metrics.append((t, summary))
        if out_dir is not None and cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
            trainer.checkpoint(os.path.join(out_dir, f"ckpt_{t:06d}.bin"))

    final = trainer.final_losses() if cfg.c_star_mode == "final_params" else None
    trace = analysis.RegretTrace(np.array(trainer.ssel), np.full(len(trainer.ssel), cfg.learning_rate),
                                 final)
    report = analysis.regret(trace, cfg.c_star_mode)
    consts = trainer.bound_constants()
    bound = analysis.theorem1_bound(consts, np.arange(1, trace.T + 1))
    result = TrainResult(trainer.G, trainer.D, trainer.log_rows, trace, report, consts, bound,
                         metrics, zf_metrics, time.perf_counter() - start)
    if out_dir is not None:
        trainer.checkpoint(os.path.join(out_dir, "final.bin"))
        write_outputs(out_dir, cfg, result)
    return result


def _r(v) -> str:
    return repr(float(v))


def write_metrics_csv(path, rows, cfg: TrainConfig, label: str = "iter") -> None:
    """Rows of ``(key, summary)``; header comment carries the config digest."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_digest={config_digest(to_text(cfg))}\n")
        w = csv.writer(fh)
        head = [label]
        for col in analysis.METRIC_COLUMNS:
            head += [f"{col}_mean", f"{col}_std"]
        w.writerow(head)
        for key, summary in rows:
            line = [key]
            for col in analysis.METRIC_COLUMNS:
                line += [_r(summary[col][0]), _r(summary[col][1])]
            w.writerow(line)


def write_outputs(out_dir, cfg: TrainConfig, res: TrainResult) -> None:
    with open(os.path.join(out_dir, "train_log.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAIN_LOG_COLUMNS)
        for row in res.log_rows:
            w.writerow([row["iter"]] + [_r(row[k]) for k in TRAIN_LOG_COLUMNS[1:]])
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), res.metrics, cfg)
    write_metrics_csv(os.path.join(out_dir, "zero_fill_metrics.csv"),
                      [("zero_fill", res.zero_fill_metrics)], cfg, label="method")
    with open(os.path.join(out_dir, "regret_inputs.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "eta", "ssel", "ssel_final"])
        fin = res.trace.final_losses
        for t in range(res.trace.T):
            w.writerow([t + 1, _r(res.trace.etas[t]), _r(res.trace.losses[t]),
                        _r(fin[t]) if fin is not None else "nan"])
    analysis.write_regret_csv(os.path.join(out_dir, "regret.csv"), res.report, res.bound)
    with open(os.path.join(out_dir, "bound_constants.json"), "w", encoding="utf-8") as fh:
        json.dump(res.constants.__dict__, fh, indent=2, sort_keys=True)
        fh.write("\n")
