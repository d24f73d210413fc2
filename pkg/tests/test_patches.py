import numpy as np
import pytest
from hypothesis import given, strategies as st

from segan.patches import admissible_counts, pair_count, partition, reassemble, sample_pairs, split
from segan.tensor import Tensor


def test_default_geometry(rng):
    part, p = split(rng.random((32, 32)), 64)
    assert p.shape == (64, 4, 4)
    assert part.patch_side == 4 and part.per_row == 8


def test_single_patch_is_image(rng):
    x = rng.random((8, 8))
    _, p = split(x, 1)
    assert np.array_equal(p[0], x)


@given(st.sampled_from([1, 4, 16, 64, 256, 1024]), st.integers(0, 2 ** 31))
def test_reassemble_bit_exact(n, seed):
    x = np.random.default_rng(seed).random((32, 32))
    _, p = split(x, n)
    assert np.array_equal(reassemble(p), x)


def test_row_major_order_and_ranges(rng):
    x = rng.random((8, 8))
    part, p = split(x, 4)
    for pid in range(4):
        (r0, r1), (c0, c1) = part.ranges(pid)
        assert np.array_equal(p[pid], x[r0:r1, c0:c1])
    assert part.ranges(1) == ((0, 4), (4, 8))


def test_tensor_split_matches_array(rng):
    x = rng.random((2, 1, 16, 16))
    _, pt = split(Tensor(x), 16)
    for b in range(2):
        _, pa = split(x[b, 0], 16)
        assert np.array_equal(pt.data[b], pa.reshape(16, -1))


def test_inadmissible_count():
    with pytest.raises(ValueError, match=r"\[1, 4, 16, 64, 256, 1024\]"):
        split(np.zeros((32, 32)), 9)
    with pytest.raises(ValueError):
        partition(32, 10)
    assert admissible_counts(12) == [1, 4, 9, 16, 36, 144]


def test_all_pairs_when_alpha_one():
    s = sample_pairs(64, 1.0, 3)
    assert s.count == 2016 and s.alpha.size == pair_count(64)


def test_pair_matrix_strict_upper():
    m = sample_pairs(16, 0.5, 1).matrix()
    assert np.all(np.tril(m) == 0)
    assert m.sum() == sample_pairs(16, 0.5, 1).count


def test_selection_determinism():
    a, b = sample_pairs(64, 0.1, 42), sample_pairs(64, 0.1, 42)
    assert np.array_equal(a.alpha, b.alpha)
    assert not np.array_equal(a.alpha, sample_pairs(64, 0.1, 43).alpha)


def test_alpha_bar_range():
    with pytest.raises(ValueError):
        sample_pairs(4, 0.0, 0)
    with pytest.raises(ValueError):
        sample_pairs(4, 1.2, 0)


@pytest.fixture(scope="module")
def many_draws():
    return np.array([sample_pairs(64, 0.1, s).alpha for s in range(10_000)])


def test_mean_count_over_seeds(many_draws):
    p, n, seeds = 0.1, 2016, 10_000
    mean = many_draws.sum(axis=1).mean()
    assert abs(mean - 201.6) < 3 * np.sqrt(p * (1 - p) * n * seeds) / seeds


def test_per_pair_frequency(many_draws):
    se = np.sqrt(0.1 * 0.9 / 10_000)
    for k in (0, 1000, 2015):
        assert abs(many_draws[:, k].mean() - 0.1) < 3 * se
