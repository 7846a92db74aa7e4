import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.signal import hilbert

from koopman_mfg.connectivity import (
    BrainGraph, analytic_phase, analytic_signal, cost_matrix, parse_threshold,
    plv_from_phases, plv_matrix, state_cost, threshold_adjacency,
)
from koopman_mfg.errors import ConfigError, DataError


def random_plv(n, rng):
    m = rng.uniform(0, 1, (n, n))
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    return m


@pytest.mark.parametrize("m", [16, 17, 64, 251])
def test_analytic_signal_matches_scipy(m, rng):
    x = rng.standard_normal((3, m))
    assert np.allclose(analytic_signal(x), hilbert(x, axis=-1), atol=1e-12)


def test_phase_of_bin_centred_cosine_is_linear():
    m, k = 256, 10
    s = np.arange(m)
    w = 2 * np.pi * k / m
    phase = analytic_phase(np.cos(w * s + 0.3))
    expect = np.angle(np.exp(1j * (w * s + 0.3)))
    assert np.max(np.abs(np.angle(np.exp(1j * (phase - expect))))) < 1e-9


def test_identical_channels_have_unit_plv(rng):
    x = np.tile(rng.standard_normal(200), (3, 1))
    assert np.allclose(plv_matrix(x), 1.0)


def test_plv_is_amplitude_invariant(rng):
    x = rng.standard_normal((4, 300))
    scale = np.array([0.01, 1.0, 7.0, 300.0])[:, None]
    assert np.allclose(plv_matrix(x), plv_matrix(scale * x), atol=1e-10)


def test_plv_of_random_phases_is_small(rng):
    m = 4000
    phases = rng.uniform(-np.pi, np.pi, (2, m))
    plv = plv_from_phases(phases)[0, 1]
    # Rayleigh mean of |mean of M unit phasors| is sqrt(pi/(4M)), std sqrt((4-pi)/(4M))
    assert plv < math.sqrt(math.pi / (4 * m)) + 4 * math.sqrt((4 - math.pi) / (4 * m))


def test_plv_window_is_sliced_after_phase_extraction(rng):
    x = rng.standard_normal((3, 400))
    full_phase = analytic_phase(x)[:, 100:300]
    assert np.allclose(plv_matrix(x, (100, 300)), plv_from_phases(full_phase))


def test_short_window_rejected(rng):
    with pytest.raises(DataError):
        plv_matrix(rng.standard_normal((2, 100)), (10, 15))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 6), m=st.integers(16, 120), seed=st.integers(0, 10_000))
def test_plv_matrix_invariants(n, m, seed):
    x = np.random.default_rng(seed).standard_normal((n, m))
    plv = plv_matrix(x)
    assert np.allclose(plv, plv.T)
    assert np.allclose(np.diag(plv), 1.0)
    assert np.all((plv >= 0) & (plv <= 1))


def test_absolute_threshold_is_strict():
    plv = np.array([[1.0, 0.4, 0.41], [0.4, 1.0, 0.2], [0.41, 0.2, 1.0]])
    g = threshold_adjacency(plv, "absolute", 0.4)
    assert g.adjacency[0, 1] == 0.0
    assert g.adjacency[0, 2] == pytest.approx(0.41)
    assert np.all(np.diag(g.adjacency) == 0)
    assert g.threshold_used == 0.4


@pytest.mark.parametrize("n,p", [(5, 90), (10, 75), (23, 90), (7, 50)])
def test_percentile_keeps_ceiling_fraction(n, p, rng):
    plv = random_plv(n, rng)
    g = threshold_adjacency(plv, "percentile", p)
    m = n * (n - 1) // 2
    assert np.count_nonzero(np.triu(g.adjacency, 1)) == math.ceil((100 - p) * m / 100)


def test_laplacian_structure():
    adj = np.array([[0, 0.5, 0], [0.5, 0, 0.2], [0, 0.2, 0]])
    g = BrainGraph.from_adjacency(adj)
    assert np.allclose(g.laplacian.sum(axis=1), 0)
    assert np.allclose(g.degree, np.diag([0.5, 0.7, 0.2]))
    assert np.all(np.linalg.eigvalsh(g.laplacian) > -1e-12)


def test_zero_eigenvalues_count_components():
    adj = np.zeros((5, 5))
    adj[0, 1] = adj[1, 0] = 0.9
    adj[2, 3] = adj[3, 2] = 0.6
    g = BrainGraph.from_adjacency(adj)
    assert np.sum(np.abs(np.linalg.eigvalsh(g.laplacian)) < 1e-10) == 3


def test_dirichlet_example():
    g = BrainGraph.from_adjacency([[0, 1], [1, 0]])
    x = np.array([1.0, -1.0])
    # (I+L)x = [3, -3]
    assert state_cost(x, g) == pytest.approx(18.0)
    assert state_cost(x, g, quadratic_form=True) == pytest.approx(6.0)
    assert x @ cost_matrix(g) @ x == pytest.approx(18.0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), st.integers(0, 1000))
def test_cost_is_at_least_squared_norm(x, seed):
    g = threshold_adjacency(random_plv(4, np.random.default_rng(seed)), "absolute", 0.3)
    assert state_cost(x, g) >= float(x @ x) - 1e-9
    assert state_cost(x, g, quadratic_form=True) >= float(x @ x) - 1e-9


@pytest.mark.parametrize("bad", [np.ones((2, 3)), [[0, 0.5], [0.4, 0]], [[0, 2.0], [2.0, 0]], [[0, np.nan], [np.nan, 0]]])
def test_bad_adjacency_rejected(bad):
    with pytest.raises(DataError):
        BrainGraph.from_adjacency(bad)


def test_threshold_parsing():
    assert parse_threshold("abs:0.4") == ("absolute", 0.4)
    assert parse_threshold("pct:90") == ("percentile", 90.0)
    for bad in ("0.4", "foo:1", "abs:x"):
        with pytest.raises(ConfigError):
            parse_threshold(bad)
    with pytest.raises(ConfigError):
        threshold_adjacency(np.eye(3), "percentile", 100)
    with pytest.raises(ConfigError):
        threshold_adjacency(np.eye(3), "absolute", 1.0)


def test_graph_dict_round_trip(rng):
    g = threshold_adjacency(random_plv(5, rng), "absolute", 0.5)
    back = BrainGraph.from_dict(g.to_dict())
    assert np.array_equal(back.adjacency, g.adjacency)
    assert back.threshold_used == g.threshold_used


def test_cosine_phase_advances_by_omega():
    m, k = 1024, 37
    w = 2 * np.pi * k / m
    phase = np.unwrap(analytic_phase(np.cos(w * np.arange(m))))
    edge = m // 20
    assert np.max(np.abs(np.diff(phase)[edge:-edge] - w)) < 1e-6


def test_sine_lags_cosine_by_quarter_turn():
    m, k = 512, 21
    s = np.arange(m)
    w = 2 * np.pi * k / m
    lag = analytic_phase(np.cos(w * s)) - analytic_phase(np.sin(w * s))
    edge = m // 20
    assert np.max(np.abs(np.angle(np.exp(1j * (lag - np.pi / 2)))[edge:-edge])) < 1e-6


def test_constant_channels_are_locked():
    x = np.vstack([np.full(64, 2.0), np.full(64, 5.0)])
    assert plv_matrix(x)[0, 1] == pytest.approx(1.0)


def test_uniform_matrices_threshold_all_or_nothing():
    full = np.full((4, 4), 0.5)
    assert np.count_nonzero(threshold_adjacency(full, "absolute", 0.4).adjacency) == 12
    empty = threshold_adjacency(np.full((4, 4), 0.3), "absolute", 0.4)
    assert not empty.adjacency.any() and not empty.laplacian.any()


def test_cost_trivial_cases(rng):
    g = BrainGraph.from_adjacency(np.zeros((3, 3)))
    x = rng.standard_normal(3)
    assert state_cost(np.zeros(3), g) == 0.0
    assert state_cost(x, g) == pytest.approx(x @ x)
