import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l2cutoff import laplace, spectral
from l2cutoff.spectral import (
    CONTINUOUS, DISCRETE, ChainFileError, ChainValidationError, ReversibleChain, SpectralData,
    decompose, l2_distance, l2_distance_direct, to_measure,
)


def complete_graph(pi, r):
    m = len(pi)
    return r * np.eye(m) + (1 - r) * np.tile(pi, (m, 1))


def random_chain(seed, kind=None):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 13))
    kind = kind or (DISCRETE if rng.random() < 0.5 else CONTINUOUS)
    ch = spectral.random_reversible_chain(rng, m, kind)
    mu = rng.dirichlet(np.ones(m)) if rng.random() < 0.5 else ch.delta(int(rng.integers(m)))
    return ch, mu


# -- validation --------------------------------------------------------------

def test_two_state_valid():
    A, B = 0.3, 0.7
    ch = spectral.two_state_generator(A, B)
    np.testing.assert_allclose(ch.stationary, [B / (A + B), A / (A + B)], rtol=1e-14)
    assert ch.report["balance_residual"] <= 1e-15


def test_row_sum_failure():
    K = np.array([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(ChainValidationError) as err:
        ReversibleChain(DISCRETE, K)
    assert err.value.invariant == "stochasticity"
    assert 0 in err.value.indices


def test_nonreversible_cycle():
    # stationary law is uniform but probability flows one way round the cycle
    K = np.array([[0.2, 0.8, 0.0], [0.0, 0.2, 0.8], [0.8, 0.0, 0.2]])
    pi = np.full(3, 1 / 3)
    assert pi[0] * K[0, 1] != pi[1] * K[1, 0]
    with pytest.raises(ChainValidationError) as err:
        ReversibleChain(DISCRETE, K)
    assert err.value.invariant == "detailed balance"


def test_reducible_rejected():
    K = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ChainValidationError) as err:
        ReversibleChain(DISCRETE, K, np.array([0.5, 0.5]))
    assert err.value.invariant == "irreducibility"


def test_negative_offdiagonal_generator():
    with pytest.raises(ChainValidationError):
        ReversibleChain(CONTINUOUS, np.array([[0.1, -0.1], [0.5, -0.5]]))


def test_wrong_stationary_rejected():
    L = np.array([[-0.3, 0.3], [0.7, -0.7]])
    with pytest.raises(ChainValidationError):
        ReversibleChain(CONTINUOUS, L, np.array([0.5, 0.5]))


def test_stationary_examples():
    np.testing.assert_allclose(
        spectral.stationary_solve(np.array([[-0.3, 0.3], [0.7, -0.7]]), CONTINUOUS),
        [0.7, 0.3], rtol=1e-14)
    S = np.array([[0.2, 0.5, 0.3], [0.5, 0.1, 0.4], [0.3, 0.4, 0.3]])
    np.testing.assert_allclose(spectral.stationary_solve(S, DISCRETE), np.full(3, 1 / 3), rtol=1e-13)
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    K = complete_graph(pi, 0.35)
    np.testing.assert_allclose(spectral.stationary_solve(K, DISCRETE), pi, rtol=1e-13)


# -- decomposition -----------------------------------------------------------

def test_two_state_decompose():
    sd = decompose(spectral.two_state_generator(0.5, 0.5), [1.0, 0.0])
    np.testing.assert_allclose(sd.rates, [0.0, 1.0], atol=1e-15)
    assert sd.weights[1] == pytest.approx(1.0, rel=1e-14)
    A, B = 0.2, 0.6
    sd = decompose(spectral.two_state_generator(A, B), [1.0, 0.0])
    assert sd.rates[1] == pytest.approx(A + B, rel=1e-14)
    assert sd.weights[1] == pytest.approx(A / B, rel=1e-13)


def test_complete_graph_decompose():
    m, r = 5, 0.3
    K = ReversibleChain(DISCRETE, complete_graph(np.full(m, 1 / m), r))
    sd = decompose(spectral.ReversibleChain(CONTINUOUS, K.matrix - np.eye(m)), K.delta(2))
    np.testing.assert_allclose(sd.rates[1:], 1 - r, rtol=1e-12)
    assert sd.mass == pytest.approx(m - 1, rel=1e-12)
    V = to_measure(sd)
    assert len(V) == 1
    assert V.rates[0] == pytest.approx(2 * (1 - r), rel=1e-12)


def test_stationary_start_has_no_weight():
    ch, _ = random_chain(3)
    sd = decompose(ch, ch.stationary)
    assert np.all(sd.weights[1:] < 1e-25)
    assert len(to_measure(sd)) == 0
    assert l2_distance(sd, 0 if ch.kind == DISCRETE else 0.0) < 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_eigen_residual_and_orthonormality(seed):
    ch, mu = random_chain(seed)
    theta, phi = spectral.eigenbasis(ch)
    M = ch.matrix
    assert np.abs(M @ phi - phi * theta).max() <= 1e-8 * np.abs(M).sum(axis=1).max()
    gram = phi.T @ (ch.stationary[:, None] * phi)
    assert np.abs(gram - np.eye(ch.size)).max() <= 1e-8


@pytest.mark.parametrize("seed", range(30))
def test_weight_normalisation(seed):
    ch, mu = random_chain(seed)
    sd = decompose(ch, mu)
    assert sd.weights[0] == pytest.approx(1.0, rel=1e-10)
    assert sd.mass == pytest.approx(spectral.chi2(ch, mu), rel=1e-8, abs=1e-12)


def test_rate_ordering():
    ch, mu = random_chain(11, DISCRETE)
    sd = decompose(ch, mu)
    assert sd.rates[0] == 1.0
    assert np.all(np.diff(np.abs(sd.rates[1:])) <= 0)
    ch, mu = random_chain(11, CONTINUOUS)
    sd = decompose(ch, mu)
    assert sd.rates[0] == 0.0
    assert np.all(np.diff(sd.rates) >= 0)


def test_decompose_rejects_bad_law():
    ch = spectral.two_state_generator(0.5, 0.5)
    with pytest.raises(ValueError):
        decompose(ch, [0.7, 0.7])
    with pytest.raises(ValueError):
        decompose(ch, [1.0])


# -- distances ---------------------------------------------------------------

def test_two_state_distance_closed_form():
    sd = decompose(spectral.two_state_generator(0.5, 0.5), [1.0, 0.0])
    assert l2_distance(sd, 1.0) == pytest.approx(math.exp(-1), rel=1e-14)
    A, B, t = 0.3, 0.6, 2.5
    sd = decompose(spectral.two_state_generator(A, B), [1.0, 0.0])
    assert l2_distance(sd, t) == pytest.approx(math.sqrt(A / B) * math.exp(-(A + B) * t), rel=1e-13)


def test_distance_at_zero_is_chi():
    ch, mu = random_chain(5)
    sd = decompose(ch, mu)
    t0 = 0 if ch.kind == DISCRETE else 0.0
    assert l2_distance(sd, t0) == pytest.approx(math.sqrt(spectral.chi2(ch, mu)), rel=1e-8)


def test_discrete_requires_integer_time():
    ch, mu = random_chain(2, DISCRETE)
    sd = decompose(ch, mu)
    with pytest.raises(ValueError):
        l2_distance(sd, 1.5)
    with pytest.raises(ValueError):
        l2_distance_direct(ch, mu, 1.5)


def test_direct_delta_at_zero():
    ch, _ = random_chain(8)
    x = 1
    t0 = 0 if ch.kind == DISCRETE else 0.0
    assert l2_distance_direct(ch, ch.delta(x), t0) == pytest.approx(
        math.sqrt(1 / ch.stationary[x] - 1), rel=1e-12)


def test_direct_complete_graph_closed_form():
    m, r, t = 6, 0.4, 1.7
    pi = np.full(m, 1 / m)
    L = ReversibleChain(CONTINUOUS, complete_graph(pi, r) - np.eye(m))
    expected = math.sqrt(1 / pi[0] - 1) * math.exp(-(1 - r) * t)
    assert l2_distance_direct(L, L.delta(0), t) == pytest.approx(expected, rel=1e-12)


def test_direct_size_cap():
    m = spectral.DIRECT_MAX_STATES + 1
    K = np.full((m, m), 1 / m)
    ch = ReversibleChain(DISCRETE, K)
    with pytest.raises(ValueError):
        l2_distance_direct(ch, ch.delta(0), 1)


@pytest.mark.parametrize("seed", range(40))
def test_spectral_matches_direct(seed):
    ch, mu = random_chain(1000 + seed)
    sd = decompose(ch, mu)
    ts = range(0, 25) if ch.kind == DISCRETE else np.linspace(0, 12, 25)
    for t in ts:
        assert abs(l2_distance(sd, t) - l2_distance_direct(ch, mu, t)) <= 1e-8


@pytest.mark.parametrize("seed", range(40))
def test_measure_transform_is_distance(seed):
    ch, mu = random_chain(2000 + seed)
    sd = decompose(ch, mu)
    V = to_measure(sd)
    ts = range(1, 30) if ch.kind == DISCRETE else np.linspace(0, 15, 30)
    for t in ts:
        d2 = l2_distance(sd, t) ** 2
        if d2 < 1e-280:
            continue
        assert laplace.laplace_eval(V, float(t)) == pytest.approx(d2, rel=1e-10)


# -- measure conversion ------------------------------------------------------

def test_two_state_measure():
    V = to_measure(decompose(spectral.two_state_generator(0.5, 0.5), [1.0, 0.0]))
    assert len(V) == 1
    assert V.rates[0] == pytest.approx(2.0, rel=1e-14)
    assert V.masses[0] == pytest.approx(1.0, rel=1e-13)


def test_discrete_zero_and_negative_eigenvalues():
    a, b, c = 0.3, 0.2, 0.1
    sd = SpectralData(DISCRETE, [1.0, 0.5, 0.0, -0.5], [1.0, a, b, c])
    V = to_measure(sd)
    assert len(V) == 1
    assert V.rates[0] == pytest.approx(2 * math.log(2), rel=1e-15)
    assert V.masses[0] == pytest.approx(a + c, rel=1e-15)
    assert sd.zero_weight == b
    assert sd.mass == pytest.approx(a + b + c)


def test_periodic_weight_rejected():
    sd = SpectralData(DISCRETE, [1.0, -1.0], [1.0, 0.5])
    with pytest.raises(ValueError, match="periodic"):
        to_measure(sd)


def test_zero_rate_with_weight_rejected():
    with pytest.raises(ValueError):
        to_measure(SpectralData(CONTINUOUS, [0.0, 0.0, 1.0], [1.0, 0.5, 0.5]))


def test_equal_eigenvalues_merged():
    sd = SpectralData.from_atoms([1.0, 1.0 + 1e-14, 2.0], [0.25, 0.5, 1.0])
    V = to_measure(sd)
    assert len(V) == 2
    assert V.masses[0] == pytest.approx(0.75)


# -- chain files -------------------------------------------------------------

TWO_STATE = """\
# two-state generator
kind: continuous
states: 2
matrix:
-0.3 0.3
0.7 -0.7
initial: delta 0
"""


def test_parse_chain():
    ch, mu = spectral.parse_chain(TWO_STATE)
    assert ch.kind == CONTINUOUS
    np.testing.assert_array_equal(mu, [1.0, 0.0])
    np.testing.assert_allclose(ch.stationary, [0.7, 0.3], rtol=1e-14)


@pytest.mark.parametrize("text,line", [
    (TWO_STATE.replace("0.7 -0.7", "0.7 x"), 6),
    (TWO_STATE.replace("0.7 -0.7", "0.7 -0.7 0.1"), 6),
    (TWO_STATE.replace("states: 2", "states: two"), 3),
])
def test_parse_errors_report_line(text, line):
    with pytest.raises(ChainFileError, match=f":{line}:"):
        spectral.parse_chain(text, "f.chain")


def test_parse_missing_kind():
    with pytest.raises(ChainFileError):
        spectral.parse_chain("states: 1\nmatrix:\n0\n")


def test_parse_validation_error_propagates():
    bad = TWO_STATE.replace("-0.3 0.3", "-0.3 0.2")
    with pytest.raises(ChainValidationError):
        spectral.parse_chain(bad)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_chain_file_roundtrip(seed):
    ch, mu = random_chain(seed)
    text = spectral.format_chain(ch, mu)
    ch2, mu2 = spectral.parse_chain(text)
    np.testing.assert_array_equal(ch.matrix, ch2.matrix)
    np.testing.assert_array_equal(ch.stationary, ch2.stationary)
    np.testing.assert_array_equal(mu, mu2)


def test_write_read_chain(tmp_path):
    ch, mu = random_chain(77)
    path = tmp_path / "c.chain"
    spectral.write_chain(ch, path, mu)
    ch2, mu2 = spectral.read_chain(path)
    np.testing.assert_array_equal(ch.matrix, ch2.matrix)
    np.testing.assert_array_equal(mu, mu2)
