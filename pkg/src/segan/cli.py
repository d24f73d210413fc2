"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation failure (bad input,
failed check), 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import analysis, config as config_mod, kspace
from .imageio import ImageFormatError, read_dataset, read_image, write_image
from .models import SUNet, load_checkpoint
from .phantoms import generate_phantoms
from .trainer import (NonFiniteGradient, TrainingDiverged, evaluate_generator, load_images,
                      prepare_pairs, train_segan)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- subcommands -----------------------------------------------------------------

def cmd_phantom(a) -> int:
    imgs = generate_phantoms(a.count, a.side, a.seed, a.density)
    os.makedirs(a.out, exist_ok=True)
    for i, img in enumerate(imgs):
        write_image(os.path.join(a.out, f"phantom_{i:03d}.{a.format}"), img)
    print(f"wrote {len(imgs)} phantoms to {a.out}")
    return EXIT_OK


def cmd_mask(a) -> int:
    m = kspace.make_gaussian_mask(a.side, a.rate, a.seed)
    kspace.write_mask(a.out, m)
    print(f"mask side {m.side}: {int(m.selected.sum())} samples, rate {m.rate:.4f}")
    return EXIT_OK


def cmd_undersample(a) -> int:
    y = kspace.undersample(read_image(a.image), kspace.read_mask(a.mask), a.sigma, a.seed)
    kspace.write_kspace_csv(a.out, y)
    return EXIT_OK


def cmd_zerofill(a) -> int:
    write_image(a.out, kspace.zero_fill(kspace.read_kspace_csv(a.kspace)))
    return EXIT_OK


def cmd_train(a) -> int:
    cfg = config_mod.load(a.config)
    res = train_segan(cfg, out_dir=a.out_dir)
    last_it, last = res.metrics[-1]
    zf = res.zero_fill_metrics
    print(f"iteration {last_it}: PSNR {last['PSNR'][0]:.3f} dB (zero-fill {zf['PSNR'][0]:.3f}), "
          f"SSIM {last['SSIM'][0]:.4f} (zero-fill {zf['SSIM'][0]:.4f}), {res.elapsed:.1f} s")
    return EXIT_OK


def _fmt(mean_std) -> str:
    return f"{float(mean_std[0])!r}±{float(mean_std[1])!r}"


def write_eval_table(path, rows, digest: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_digest={digest}\n")
        w = csv.writer(fh)
        w.writerow(["method", *analysis.METRIC_COLUMNS])
        for method, summary in rows:
            w.writerow([method, *(_fmt(summary[c]) for c in analysis.METRIC_COLUMNS)])


def read_eval_table(path) -> dict:
    """``{method: {metric: (mean, std)}}`` from a table written by ``eval``."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    out = {}
    for row in csv.DictReader(lines):
        out[row["method"]] = {c: tuple(float(v) for v in row[c].split("±"))
                              for c in analysis.METRIC_COLUMNS}
    return out


def evaluate_checkpoint(path, dataset=None, rate=None) -> tuple:
    """Rebuild the generator and its held-out data from a checkpoint; return
    ``(config digest, [(method, summary), ...])``."""
    ck = load_checkpoint(path)
    cfg = config_mod.parse_text(ck.config_text)
    G = SUNet(cfg.sunet_config())
    G.load_state({k: v for k, v in ck.tensors.items() if k.startswith("G.")})
    images = read_dataset(dataset) if dataset else load_images(cfg)[1]
    xs, zf = prepare_pairs(images, cfg, stream=1, rate=rate)
    kw = dict(cfg=cfg.ssim_config(), lssm_seed=cfg.lssm_seed, lssm_patch=cfg.lssm_patch,
              nmse_mode=cfg.nmse_mode)
    rows = [("SEGAN", evaluate_generator(G, xs, zf, cfg)),
            ("Zero-Fill", analysis.evaluate_images(xs, zf, **kw))]
    return ck.digest, rows


def cmd_eval(a) -> int:
    digest, rows = evaluate_checkpoint(a.checkpoint, a.dataset, a.rate)
    write_eval_table(a.out, rows, digest)
    for method, s in rows:
        print(method, "  ".join(f"{c} {s[c][0]:.4f}±{s[c][1]:.4f}" for c in analysis.METRIC_COLUMNS))
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    from .gradcheck_suite import TOL, run_suite
    failed = 0
    for r in run_suite(a.module or None):
        status = "PASS" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{status} {r.name}: worst rel err {r.report.worst:.3e} ({r.seconds:.2f} s)")
        if not r.ok:
            for line in r.report.lines():
                print("    " + line)
    print(f"{failed} failure(s) at tolerance {TOL:g}")
    return EXIT_OK if failed == 0 else EXIT_INVALID


def _read_columns(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def regret_from_run(train_log) -> tuple:
    """Regret report and bound from a training directory's log files.

    Uses ``regret_inputs.csv`` (final-parameter re-evaluations) when present,
    otherwise falls back to the best-iterate comparator on ``sel_total``.
    ``bound_constants.json`` supplies the theoretical bound if present.
    """
    run_dir = os.path.dirname(os.path.abspath(train_log))
    log_cols = _read_columns(train_log)
    inputs = os.path.join(run_dir, "regret_inputs.csv")
    if os.path.exists(inputs):
        cols = _read_columns(inputs)
        final = cols["ssel_final"]
        has_final = np.all(np.isfinite(final))
        trace = analysis.RegretTrace(cols["ssel"], cols["eta"], final if has_final else None)
        mode = "final_params" if has_final else "best_iterate"
    else:
        ssel = log_cols["sel_total"]
        trace = analysis.RegretTrace(ssel, np.full(len(ssel), np.nan))
        mode = "best_iterate"
    report = analysis.regret(trace, mode)
    bound = None
    consts_path = os.path.join(run_dir, "bound_constants.json")
    if os.path.exists(consts_path):
        with open(consts_path, encoding="utf-8") as fh:
            consts = analysis.BoundConstants(**json.load(fh))
        bound = analysis.theorem1_bound(consts, report.T)
    return report, bound


def cmd_regret(a) -> int:
    report, bound = regret_from_run(a.train_log)
    analysis.write_regret_csv(a.out, report, bound)
    T = len(report.C)
    for t in sorted({min(T, k) for k in (1, 500, 1000, 2000, T)}):
        extra = f", bound {bound[t - 1]:.4g}" if bound is not None else ""
        print(f"T={t}: R {report.R[t - 1]:.4g}, avg regret {report.avg_regret[t - 1]:.4g}{extra}")
    print(f"comparator: {report.mode}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="segan", description="Structure-enhanced GAN reconstruction for undersampled MRI.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="generate synthetic phantom images")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--side", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--density", type=int, default=5)
    s.add_argument("--format", choices=("raw", "pgm"), default="raw")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("mask", help="Gaussian variable-density sampling mask")
    s.add_argument("--side", type=int, required=True)
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("undersample", help="masked k-space of an image, with optional noise")
    s.add_argument("--image", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_undersample)

    s = sub.add_parser("zerofill", help="zero-filled reconstruction of a k-space file")
    s.add_argument("--kspace", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_zerofill)

    s = sub.add_parser("train", help="train generator and discriminator")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="metric table for a checkpoint and the zero-fill baseline")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", default=None, help="directory of .raw/.pgm images (default: "
                   "the held-out phantoms of the checkpoint's config)")
    s.add_argument("--rate", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--module", action="append", help="check name or prefix (repeatable)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("regret", help="regret report from a training log")
    s.add_argument("--train-log", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_regret)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (TrainingDiverged, NonFiniteGradient) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError, OSError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
