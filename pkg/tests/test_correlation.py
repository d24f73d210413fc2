import numpy as np
import pytest
from hypothesis import given, strategies as st

from segan.correlation import (EPS_VAR, GaussianKernel, LinearCombination, Pearson, Polynomial,
                               bound_M, corr, parse_corr)
from segan.tensor import Parameter, grad_check

KINDS = [Pearson(), GaussianKernel(0.7), Polynomial(2, 1.0, 1.0), Polynomial(3, 0.5, 2.0),
         LinearCombination((0.5, 0.5), (Pearson(), GaussianKernel(0.5)))]


def test_pearson_self(rng):
    p = rng.random((4, 4))
    assert abs(corr(Pearson(), p, p).item() - 1.0) < 1e-9


def test_gaussian_self(rng):
    p = rng.random((4, 4))
    assert corr(GaussianKernel(1.0), p, p).item() == 1.0


def test_polynomial_orthogonal():
    assert corr(Polynomial(2, 1.0, 1.0), np.array([1.0, 0.0]), np.array([0.0, 1.0])).item() == 1.0


def test_pearson_formula_oracle(rng):
    p, q = rng.random((4, 4)).ravel(), rng.random((4, 4)).ravel()
    a, b = p - p.mean(), q - q.mean()
    ref = np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b) + EPS_VAR ** 2)
    assert abs(corr(Pearson(), p, q).item() - ref) < 1e-12
    assert abs(corr(Pearson(), p, q).item() - np.corrcoef(p, q)[0, 1]) < 1e-7


def test_gaussian_and_polynomial_oracles(rng):
    p, q = rng.random(9), rng.random(9)
    assert abs(corr(GaussianKernel(0.8), p, q).item()
               - np.exp(-np.sum((p - q) ** 2) / (2 * 0.64))) < 1e-12
    assert abs(corr(Polynomial(3, 0.5, 2.0), p, q).item() - (2.0 * p @ q / 9 + 0.5) ** 3) < 1e-12


def test_combination_is_weighted_sum(rng):
    p, q = rng.random(16), rng.random(16)
    f = KINDS[-1]
    ref = 0.5 * corr(Pearson(), p, q).item() + 0.5 * corr(GaussianKernel(0.5), p, q).item()
    assert abs(corr(f, p, q).item() - ref) < 1e-12


def test_constant_patch_gives_zero(rng):
    v = corr(Pearson(), np.full(16, 0.4), rng.random(16)).item()
    assert v == 0.0 or abs(v) < 1e-6
    assert np.isfinite(v)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        corr(Pearson(), np.zeros(4), np.zeros(9))


@given(st.integers(0, 2 ** 31), st.integers(0, len(KINDS) - 1))
def test_symmetry_and_bounds(seed, k):
    r = np.random.default_rng(seed)
    p, q = r.random(16), r.random(16)
    f = KINDS[k]
    a, b = corr(f, p, q).item(), corr(f, q, p).item()
    assert abs(a - b) < 1e-12
    assert abs(a) <= bound_M(f) + 1e-9
    if isinstance(f, Pearson):
        assert abs(a) <= 1 + 1e-9
    if isinstance(f, GaussianKernel):
        assert 0 < a <= 1


def test_polynomial_bound_on_unit_range():
    assert bound_M(Polynomial(2, 1.0, 1.0)) == 4.0
    assert corr(Polynomial(2, 1.0, 1.0), np.ones(9), np.ones(9)).item() == 4.0


@pytest.mark.parametrize("k", range(len(KINDS)))
def test_gradients(k, rng):
    p = Parameter(0.1 + 0.9 * rng.random(16), "p")
    q = Parameter(0.1 + 0.9 * rng.random(16), "q")
    rep = grad_check(lambda: corr(KINDS[k], p, q), [p, q])
    assert rep.ok(1e-5), rep.lines()


def test_parse():
    assert parse_corr("pearson") == Pearson()
    assert parse_corr("polynomial(2, 1.0, 1.0)") == Polynomial(2, 1.0, 1.0)
    assert parse_corr("gaussian(0.5)") == GaussianKernel(0.5)
    f = parse_corr("combo(0.5*pearson, 0.5*gaussian(0.5))")
    assert f == LinearCombination((0.5, 0.5), (Pearson(), GaussianKernel(0.5)))
    assert parse_corr(f.spec()) == f


@pytest.mark.parametrize("text", ["foo", "gaussian(-1)", "polynomial(0)", "combo(pearson)",
                                  "combo(1*combo(1*pearson))", "polynomial(2.5)"])
def test_parse_errors(text):
    with pytest.raises(ValueError):
        parse_corr(text)
