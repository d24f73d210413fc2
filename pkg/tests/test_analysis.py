import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from segan import analysis, losses
from segan.analysis import BoundConstants, RegretTrace, nmse, n_lssm, psnr, regret, theorem1_bound
from segan.phantoms import phantom


def test_nmse_psnr_examples(rng):
    x = rng.random((8, 8))
    assert nmse(x, x) == 0.0 and psnr(x, x) == math.inf
    assert psnr(np.ones((4, 4)), np.full((4, 4), 0.9)) == pytest.approx(20.0, abs=1e-12)


def test_nmse_psnr_oracle(rng):
    for _ in range(20):
        x, g = rng.random((6, 6)), rng.random((6, 6))
        num = math.sqrt(sum((a - b) ** 2 for a, b in zip(x.ravel(), g.ravel())))
        den = math.sqrt(sum(a * a for a in x.ravel()))
        assert abs(nmse(x, g) - num / den) < 1e-12
        assert abs(nmse(x, g, "squared") - (num / den) ** 2) < 1e-12
        mse = sum((a - b) ** 2 for a, b in zip(x.ravel(), g.ravel())) / 36
        assert abs(psnr(x, g) - 10 * math.log10(1 / mse)) < 1e-12


@given(st.floats(0.01, 100), st.integers(0, 2 ** 31))
def test_nmse_scale_invariant(c, seed):
    r = np.random.default_rng(seed)
    x, g = r.random((8, 8)) + 0.1, r.random((8, 8))
    assert abs(nmse(c * x, c * g) - nmse(x, g)) < 1e-12


def test_nmse_errors():
    with pytest.raises(ValueError):
        nmse(np.zeros((4, 4)), np.ones((4, 4)))
    with pytest.raises(ValueError):
        nmse(np.ones((4, 4)), np.ones((4, 4)), "cubed")


def test_n_lssm_identity_and_full_patch(rng):
    x, g = rng.random((32, 32)), rng.random((32, 32))
    assert n_lssm(x, x, 20, 20, 3) == pytest.approx(1.0, abs=1e-12)
    assert abs(n_lssm(x, g, 1, 32, 0) - analysis.ssim_value(x, g)) < 1e-12


def test_n_lssm_recompute():
    x, g = phantom(32, 1), phantom(32, 2)
    pos = analysis.lssm_positions(32, 20, 20, 5)
    vals = [analysis.ssim_value(x[r:r + 20, c:c + 20], g[r:r + 20, c:c + 20]) for r, c in pos]
    assert abs(n_lssm(x, g, 20, 20, 5) - np.mean(vals)) < 1e-12


@given(st.integers(0, 2 ** 31))
def test_n_lssm_range(seed):
    r = np.random.default_rng(seed)
    v = n_lssm(r.random((16, 16)), r.random((16, 16)), 5, 8, seed)
    assert -1 <= v <= 1


def test_n_lssm_errors(rng):
    with pytest.raises(ValueError):
        n_lssm(rng.random((16, 16)), rng.random((16, 16)), 4, 20, 0)
    with pytest.raises(ValueError):
        n_lssm(rng.random((16, 16)), rng.random((16, 16)), 0, 8, 0)


def test_image_metrics_columns(rng):
    x = rng.random((32, 32))
    s = analysis.evaluate_images([x, x], [0.9 * x, 0.5 * x])
    assert tuple(s) == analysis.METRIC_COLUMNS
    assert all(len(v) == 2 for v in s.values())


# -- regret --------------------------------------------------------------------

def test_regret_constant_trace():
    rep = regret(RegretTrace(np.full(10, 2.5), np.ones(10)))
    assert np.all(rep.R == 0)


def test_regret_hand_example():
    rep = regret(RegretTrace([3.0, 2.0, 1.0], [1.0, 1.0, 1.0]))
    assert rep.C[-1] == 6 and rep.C_star[-1] == 3 and rep.R[-1] == 3 and rep.avg_regret[-1] == 1.0


def test_regret_final_params_mode():
    rep = regret(RegretTrace([3.0, 2.0], [1.0, 1.0], [1.0, 0.5]), "final_params")
    assert rep.C_star.tolist() == [1.0, 1.5]
    with pytest.raises(ValueError):
        regret(RegretTrace([1.0], [1.0]), "final_params")
    with pytest.raises(ValueError):
        RegretTrace([np.nan], [1.0])


def test_quadratic_gd_regret():
    # f_t(w) = 0.5 * (w - c_t)^2 on a fixed cycle of targets
    T = 5000
    targets = np.array([0.3, -0.7, 1.1, 0.2])
    cs = targets[np.arange(T) % 4]
    etas = 1 / np.sqrt(np.arange(1, T + 1))
    ws = analysis.online_gradient_descent([lambda w, c=c: w - c for c in cs], 0.0, etas)[:-1]
    L = 0.5 * (ws - cs) ** 2
    # independent sums: best fixed point for a prefix is the running mean of targets
    C, R_ref = 0.0, []
    s, s2 = 0.0, 0.0
    for t in range(T):
        C += L[t]
        s += cs[t]
        s2 += cs[t] ** 2
        n = t + 1
        R_ref.append(C - 0.5 * (s2 - s * s / n))
    c_star = np.cumsum(0.5 * cs ** 2) - 0.5 * np.cumsum(cs) ** 2 / np.arange(1, T + 1)
    rep = regret(RegretTrace(L, etas), "exact", c_star)
    assert np.max(np.abs(rep.R - np.array(R_ref))) < 1e-10
    ratio = rep.R[9:] / np.sqrt(np.arange(10, T + 1))
    assert np.all(np.isfinite(ratio)) and ratio.max() < 5.0


def test_bound_examples():
    zero = BoundConstants(M=1, F=1, G=1, S=1, D_diam=1, lambda1=0, lambda2=0, lambda3=0)
    assert theorem1_bound(zero, 4) == 1.0
    c = BoundConstants(M=2.0, F=0.5, G=0.1, S=0.3, D_diam=3.0, d=1.0, K=8, N=4, alpha_bar=0.2,
                       lambda1=1.0, lambda2=2.0, lambda3=0.5)
    B = 1.0 * 2.0 * 0.2 * 16 * 0.5 + 2.0 * 0.3 + 0.5 * 1.0 * 64 * 0.1
    assert theorem1_bound(c, 1) == pytest.approx(9.0 / 2 + 2 * B * B, abs=1e-12)
    arr = theorem1_bound(c, np.array([1, 4]))
    assert arr[1] == pytest.approx(9.0 * 2 / 2 + B * B * 6, abs=1e-12)
    with pytest.raises(ValueError):
        theorem1_bound(c, 0)
    with pytest.raises(ValueError):
        BoundConstants(M=-1)


def test_trajectory_diameter(rng):
    P = rng.standard_normal((50, 3))
    ref = max(np.linalg.norm(a - b) for a in P for b in P)
    assert abs(analysis.trajectory_diameter(P, chunk=7) - ref) < 1e-10


def test_regret_csv(tmp_path):
    rep = regret(RegretTrace([3.0, 2.0, 1.0], [1.0, 1.0, 1.0]))
    p = tmp_path / "r.csv"
    analysis.write_regret_csv(p, rep, np.array([10.0, 20.0, 30.0]))
    lines = p.read_text().splitlines()
    assert lines[0] == "T,C,C_star,R,avg_regret,bound"
    assert lines[3] == "3,6.0,3.0,3.0,1.0,30.0"


def test_convex_surrogate_short():
    from segan import kspace
    from segan.phantoms import generate_phantoms
    xs = generate_phantoms(4, 32, 3)
    m = kspace.make_gaussian_mask(32, 0.3, 1)
    zf = [kspace.zero_fill(kspace.undersample(x, m)) for x in xs]
    run = analysis.run_convex_surrogate(xs, zf, T=300)
    assert np.all(run.report.R <= run.bound)
    assert np.all(run.report.R >= -1e-9)
