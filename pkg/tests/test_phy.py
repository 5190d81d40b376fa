import itertools
import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from epaloha.config import SystemConfig
from epaloha.mac import run_exploration
from epaloha.phy import (
    PreambleCounter,
    build_alltop_pool,
    collision_stats,
    estimate_counts,
    estimate_support,
    synthesize_channel,
)


@pytest.mark.parametrize("t_p", [5, 7, 11, 13])
def test_alltop_pool_geometry(t_p):
    pool = build_alltop_pool(t_p)
    assert pool.pool_size == t_p**2
    assert pool.sequences.shape == (t_p**2, t_p)
    gram = np.abs(pool.sequences.conj() @ pool.sequences.T)
    assert np.allclose(np.diag(gram), 1.0)
    off = gram[~np.eye(t_p**2, dtype=bool)]
    # every pair is either orthogonal or at exactly 1/sqrt(t_p)
    assert np.all(np.isclose(off, 0.0, atol=1e-9) | np.isclose(off, 1 / math.sqrt(t_p)))
    assert pool.coherence == pytest.approx(1 / math.sqrt(t_p))


@pytest.mark.parametrize("t_p", [4, 9, 3])
def test_alltop_needs_prime_length(t_p):
    with pytest.raises(ValueError):
        build_alltop_pool(t_p)


def test_synthesis_noiseless_is_exact_superposition():
    pool = build_alltop_pool(5)
    obs = synthesize_channel([1, 7], pool, 100.0, 0.0, np.random.default_rng(0))
    want = obs.true_gains[1] * pool.sequences[0] + obs.true_gains[7] * pool.sequences[6]
    assert np.allclose(obs.y, want)
    assert obs.true_support == {1, 7}
    assert all(abs(abs(g) - 1.0) < 1e-12 for g in obs.true_gains.values())


def test_synthesis_power_and_noise_level():
    pool = build_alltop_pool(11)
    rng = np.random.default_rng(1)
    empty = np.stack([synthesize_channel([], pool, 100.0, 2.0, rng).y for _ in range(4000)])
    assert np.mean(np.abs(empty) ** 2) == pytest.approx(2.0, rel=0.03)
    obs = synthesize_channel([3], pool, 100.0, 2.0, rng)
    assert abs(obs.true_gains[3]) == pytest.approx(math.sqrt(200.0))
    with pytest.raises(IndexError):
        synthesize_channel([122], pool, 1.0, 1.0, rng)


def test_counter_is_a_well_formed_estimator():
    pool = build_alltop_pool(5)
    est = PreambleCounter(pool.dictionary, max_k=3, noise_power=0.0)
    params = est.get_params()
    assert params["max_k"] == 3 and params["noise_power"] == 0.0
    twin = clone(est)
    assert twin.get_params()["max_k"] == 3
    with pytest.raises(NotFittedError):
        est.predict(np.zeros(5))
    est.set_params(max_k=2).fit()
    assert est.max_k_ == 2 and est.n_features_in_ == 5
    assert est.coherence_ == pytest.approx(1 / math.sqrt(5))


def test_counter_validates_input():
    pool = build_alltop_pool(5)
    with pytest.raises(ValueError):
        PreambleCounter().fit()
    with pytest.raises(ValueError):
        PreambleCounter(np.zeros((5, 3))).fit()
    est = PreambleCounter(pool.dictionary).fit()
    with pytest.raises(ValueError):
        est.predict(np.zeros(6))
    with pytest.raises(ValueError):
        est.predict(np.full(5, np.nan))


def test_transform_codes_reconstruct_noiseless_signal():
    pool = build_alltop_pool(7)
    est = PreambleCounter(pool.dictionary, noise_power=0.0).fit()
    obs = synthesize_channel([2, 30, 41], pool, 1.0, 0.0, np.random.default_rng(3))
    codes = est.transform(obs.y)
    assert codes.shape == (1, 49)
    assert set(np.flatnonzero(codes[0]) + 1) == {2, 30, 41}
    assert np.allclose(pool.dictionary @ codes[0], obs.y)


@pytest.mark.parametrize("t_p", [5, 7, 11])
def test_noiseless_recovery_of_single_preambles(t_p):
    pool = build_alltop_pool(t_p)
    est = PreambleCounter(pool.dictionary, max_k=2, noise_power=0.0).fit()
    Y = pool.sequences * np.exp(2j * np.pi * np.random.default_rng(2).random((t_p**2, 1)))
    assert est.supports(Y) == [[i] for i in range(t_p**2)]


@pytest.mark.parametrize("t_p", [11, 13])
def test_noiseless_recovery_of_all_pairs(t_p):
    # greedy recovery of 2-sparse supports is guaranteed once coherence < 1/3
    pool = build_alltop_pool(t_p)
    assert pool.coherence < 1 / 3
    est = PreambleCounter(pool.dictionary, max_k=2, noise_power=0.0).fit()
    supports = list(itertools.combinations(range(t_p**2), 2))
    rng = np.random.default_rng(4)
    Y = np.stack([pool.dictionary[:, list(s)] @ np.exp(2j * np.pi * rng.random(2))
                  for s in supports])
    assert [tuple(s) for s in est.supports(Y)] == supports


def test_empty_channel_reads_zero():
    pool = build_alltop_pool(11)
    est = PreambleCounter(pool.dictionary, noise_power=1.0, target_snr=100.0).fit()
    rng = np.random.default_rng(5)
    Y = np.stack([synthesize_channel([], pool, 100.0, 1.0, rng).y for _ in range(500)])
    assert np.mean(est.predict(Y) == 0) >= 0.99


def test_estimate_support_at_high_snr():
    pool = build_alltop_pool(11)
    rng = np.random.default_rng(6)
    hits = 0
    for _ in range(300):
        chosen = list(rng.choice(121, size=2, replace=False) + 1)
        obs = synthesize_channel(chosen, pool, 100.0, 1.0, rng)
        support, k_hat = estimate_support(obs, pool)
        hits += support == set(chosen)
    assert hits / 300 >= 0.95


def test_accuracy_improves_with_snr():
    pool = build_alltop_pool(5)
    rng = np.random.default_rng(7)
    accuracy = []
    for snr_db in (0.0, 10.0, 20.0, 30.0):
        snr = 10 ** (snr_db / 10)
        est = PreambleCounter(pool.dictionary, target_snr=snr).fit()
        Y = np.stack([
            synthesize_channel(list(rng.choice(25, 2, replace=False) + 1), pool, snr, 1.0, rng).y
            for _ in range(1500)
        ])
        accuracy.append(np.mean(est.predict(Y) == 2))
    se = 0.5 / math.sqrt(1500)
    assert all(b >= a - 3 * se for a, b in zip(accuracy, accuracy[1:]))
    assert accuracy[-1] > accuracy[0]


def test_estimate_counts_in_phy_mode():
    cfg = SystemConfig(M=3, t_p=11, pool_size=121, estimation_mode="Phy", noise_power=0.0)
    pool = build_alltop_pool(11)
    rng = np.random.default_rng(8)
    out = run_exploration(5, cfg, rng, pool=pool, channels=[1, 1, 2, 3, 3],
                          preambles=[4, 90, 17, 5, 5])
    # identical preambles on channel 3 merge into one
    assert out.est_counts == (2, 1, 1)
    assert estimate_counts(out, pool, cfg, rng) == (2, 1, 1)


def test_collision_stats_against_mixture():
    emp, se, exact, first = collision_stats(20.0, 10, 64, 20_000, seed=9)
    assert abs(emp - exact) <= 4 * se
    assert first == pytest.approx(1 - 400 / (2 * 64 * 100))
