import numpy as np
import pytest
from scipy import stats

from arm_lab import rng


def test_uniform_range_and_determinism():
    key = rng.root_key(5, 1)
    u = np.array([rng.uniform(key, i) for i in range(20000)])
    assert u.min() >= 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 0.001
    assert u[123] == rng.uniform(rng.root_key(5, 1), 123)


def test_large_seeds_accepted():
    k = rng.root_key(2 ** 64 - 1, 3)
    assert isinstance(k, np.uint64)
    assert 0 <= rng.trial_seed(2 ** 64 - 1, 10 ** 9) < 2 ** 64


def test_streams_differ():
    a = rng.uniform(rng.root_key(1, 0), 0)
    b = rng.uniform(rng.root_key(1, 1), 0)
    c = rng.uniform(rng.root_key(2, 0), 0)
    assert len({a, b, c}) == 3


def test_normal_moments():
    key = rng.root_key(9)
    z = np.array([rng.normal(key, i) for i in range(40000)])
    assert abs(z.mean()) < 0.03
    assert abs(z.var() - 1) < 0.04


@pytest.mark.parametrize("mean", [0.05, 0.7, 4.0, 25.0, 300.0])
def test_poisson_moments(mean):
    key = rng.root_key(17, int(mean * 100))
    c = 0
    xs = []
    for _ in range(20000):
        k, c = rng.poisson(mean, key, c)
        xs.append(k)
    xs = np.array(xs)
    se = np.sqrt(mean / len(xs))
    assert abs(xs.mean() - mean) < 4 * se
    assert abs(xs.var() / mean - 1) < 0.06


def test_poisson_zero_mean():
    assert rng.poisson(0.0, rng.root_key(1), 7) == (0, 7)
