"""SplitMix64 stream: reference outputs, stats, and stream independence."""

import numpy as np
import pytest

from fluidinterp.rng import SplitMix64


def test_reference_sequence_seed_zero():
    # First outputs of the published splitmix64 recurrence for seed 0.
    rng = SplitMix64(0)
    assert rng.next_u64() == 0xE220A8397B1DCDAF
    assert rng.next_u64() == 0x6E789E6AA1B965F4
    assert rng.next_u64() == 0x06C45D188009454F


def test_determinism_and_seed_sensitivity():
    a = [SplitMix64(42).next_u64() for _ in range(5)]
    b = [SplitMix64(42).next_u64() for _ in range(5)]
    assert a == b
    r1, r2 = SplitMix64(42), SplitMix64(42)
    assert [r1.next_u64() for _ in range(5)] == [r2.next_u64() for _ in range(5)]
    assert SplitMix64(42).next_u64() != SplitMix64(43).next_u64()


def test_uniform_range_and_moments():
    rng = SplitMix64(7)
    xs = np.array([rng.uniform() for _ in range(20000)])
    assert np.all((0.0 <= xs) & (xs < 1.0))
    assert abs(xs.mean() - 0.5) < 0.01
    assert abs(xs.var() - 1.0 / 12.0) < 0.005


def test_uniform_bounds():
    rng = SplitMix64(9)
    xs = rng.uniforms((1000,), -3.0, 5.0)
    assert xs.shape == (1000,)
    assert np.all((-3.0 <= xs) & (xs < 5.0))


def test_normals_moments_and_shape():
    rng = SplitMix64(11)
    xs = rng.normals((200, 100))
    assert xs.shape == (200, 100)
    assert np.all(np.isfinite(xs))
    assert abs(xs.mean()) < 0.02
    assert abs(xs.std() - 1.0) < 0.02


def test_randint_range():
    rng = SplitMix64(13)
    draws = [rng.randint(10) for _ in range(5000)]
    assert set(draws) == set(range(10))


def test_shuffle_is_permutation():
    rng = SplitMix64(17)
    xs = list(range(50))
    ys = list(xs)
    rng.shuffle(ys)
    assert sorted(ys) == xs
    assert ys != xs  # astronomically unlikely to be identity


def test_split_gives_independent_streams():
    root = SplitMix64(3)
    child_a = root.split()
    child_b = root.split()
    seq_a = [child_a.next_u64() for _ in range(4)]
    seq_b = [child_b.next_u64() for _ in range(4)]
    assert seq_a != seq_b
    # consuming a child does not disturb a replayed parent's later child
    root2 = SplitMix64(3)
    _ = root2.split()
    child_b2 = root2.split()
    assert [child_b2.next_u64() for _ in range(4)] == seq_b


def test_invalid_seed_rejected():
    with pytest.raises(ValueError):
        SplitMix64(-1)
    with pytest.raises(ValueError):
        SplitMix64(2**64)
