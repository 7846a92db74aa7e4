import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import wasserstein_distance

from koopman_mfg.errors import DataError
from koopman_mfg.metrics import density_histogram, rmse, symmetric_edges, wasserstein1

samples = arrays(np.float64, st.integers(1, 60), elements=st.floats(-100, 100))


def test_w1_of_shift():
    a = np.random.default_rng(0).standard_normal(500)
    assert wasserstein1(a, a + 2.5) == pytest.approx(2.5)


def test_w1_point_masses():
    assert wasserstein1([0.0], [1.0, 3.0]) == pytest.approx(2.0)


@settings(max_examples=60, deadline=None)
@given(samples, samples)
def test_w1_matches_scipy(a, b):
    assert wasserstein1(a, b) == pytest.approx(wasserstein_distance(a, b), abs=1e-9, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(samples, samples, samples)
def test_w1_is_a_metric(a, b, c):
    assert wasserstein1(a, a) == pytest.approx(0.0, abs=1e-12)
    assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a), abs=1e-9)
    assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-9


def test_w1_empty_rejected():
    with pytest.raises(DataError):
        wasserstein1([], [1.0])


def test_rmse():
    assert rmse([1, 2], [1, 4]) == pytest.approx(np.sqrt(2))
    with pytest.raises(DataError):
        rmse([1], [1, 2])


def test_density_integrates_to_one(rng):
    x = rng.standard_normal(1000)
    edges = symmetric_edges(x, 100)
    dens = density_histogram(x, edges)
    inside = np.mean((x >= edges[0]) & (x <= edges[-1]))
    assert np.sum(dens * np.diff(edges)) == pytest.approx(1.0)
    assert inside > 0.99
    assert edges[0] == -edges[-1] and len(edges) == 101
