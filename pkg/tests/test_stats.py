import itertools
import math

import numpy as np
import pytest

from gjnet.stats import (batch_means_ci, geometric_chisquare,
                         ks_distance_exponential, mann_kendall_increasing)


def test_batch_means_ci_basic(rng):
    b = rng.normal(5.0, 1.0, size=64)
    mean, hw = batch_means_ci(b, 0.95)
    assert mean == pytest.approx(b.mean())
    assert hw == pytest.approx(2.0 * b.std(ddof=1) / 8.0, rel=0.05)


def test_batch_means_ci_degenerate():
    mean, hw = batch_means_ci(np.array([3.0]), 0.95)
    assert mean == 3.0 and hw == math.inf


def _mk_brute_force_p(values):
    """Null distribution of the trend statistic by full enumeration."""
    n = len(values)
    s_obs = sum(
        (values[j] > values[i]) - (values[j] < values[i])
        for i in range(n - 1) for j in range(i + 1, n))
    count = 0
    total = 0
    for perm in itertools.permutations(range(n)):
        s = sum((perm[j] > perm[i]) - (perm[j] < perm[i])
                for i in range(n - 1) for j in range(i + 1, n))
        count += s >= s_obs
        total += 1
    return s_obs, count / total


@pytest.mark.parametrize("values", [
    [1.0, 2.0, 3.0, 4.0],
    [4.0, 3.0, 2.0, 1.0],
    [1.0, 3.0, 2.0, 5.0, 4.0],
    [2.0, 1.0, 4.0, 3.0, 6.0, 5.0],
])
def test_mann_kendall_exact_matches_enumeration(values):
    s, p = mann_kendall_increasing(values)
    s_bf, p_bf = _mk_brute_force_p(values)
    assert s == s_bf
    assert p == pytest.approx(p_bf, abs=1e-12)


def test_mann_kendall_four_points_cannot_reject_at_001():
    # strongest possible increasing trend on 4 points
    s, p = mann_kendall_increasing([1.0, 2.0, 3.0, 4.0])
    assert s == 6
    assert p == pytest.approx(1.0 / 24.0)
    assert p > 0.01


def test_mann_kendall_large_n_normal_branch(rng):
    x = rng.normal(size=50) + 0.2 * np.arange(50)
    s, p = mann_kendall_increasing(list(x))
    assert p < 0.01  # strong trend detected
    x = rng.normal(size=50)
    _, p = mann_kendall_increasing(list(x))
    assert p > 0.001


def test_geometric_chisquare_fit(rng):
    rho = 0.8
    x = rng.geometric(1 - rho, size=20_000) - 1
    stat, p, df = geometric_chisquare(x, rho)
    assert p > 0.001
    # grossly wrong parameter is rejected
    _, p_bad, _ = geometric_chisquare(x, 0.4)
    assert p_bad < 1e-6


def test_geometric_chisquare_bins_have_mass(rng):
    x = rng.geometric(0.5, size=500) - 1
    stat, p, df = geometric_chisquare(x, 0.5)
    assert df >= 1
    assert 0.0 <= p <= 1.0


def test_ks_distance(rng):
    x = rng.exponential(size=20_000)
    assert ks_distance_exponential(x) < 0.02
    d = np.full(5_000, 1.0)
    assert ks_distance_exponential(d) > 0.3
