"""Preamble pools, received-signal synthesis and sparse preamble counting.

The counter is an sklearn-style transformer in the spirit of
``sklearn.decomposition.SparseCoder``: the dictionary is a constructor
parameter, ``transform`` returns sparse codes and ``predict`` returns the
number of detected preambles per observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_real, check_signals, is_prime
from .analytic import no_collision_mixture


@dataclass(frozen=True)
class PreamblePool:
    t_p: int
    sequences: np.ndarray  # (pool_size, t_p), unit-norm rows
    coherence: float

    @property
    def pool_size(self) -> int:
        return self.sequences.shape[0]

    @property
    def dictionary(self) -> np.ndarray:
        """Columns are the preambles, shape (t_p, pool_size)."""
        return self.sequences.T


@dataclass(frozen=True)
class ChannelObservation:
    y: np.ndarray
    true_support: frozenset  # 1-based pool indices
    true_gains: dict


def mutual_coherence(sequences):
    gram = np.abs(sequences.conj() @ sequences.T)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max()) if gram.size > 1 else 0.0


def build_alltop_pool(t_p):
    """Alltop frame: all ``t_p**2`` time-frequency shifts of a cubic chirp.

    Row ``u * t_p + v`` is ``exp(2j*pi*((n + u)**3 + v*n) / t_p) / sqrt(t_p)``.
    Distinct rows correlate with magnitude exactly ``1/sqrt(t_p)`` when the
    shifts differ and 0 when only the modulation differs.
    """
    t_p = check_int(t_p, "t_p", 5)
    if not is_prime(t_p):
        raise ValueError(f"Alltop pools need a prime length >= 5, got {t_p}")
    n = np.arange(t_p)
    u = np.arange(t_p)[:, None, None]
    v = np.arange(t_p)[None, :, None]
    phase = (((n + u) ** 3 + v * n) % t_p) / t_p
    sequences = (np.exp(2j * np.pi * phase) / math.sqrt(t_p)).reshape(t_p * t_p, t_p)
    return PreamblePool(t_p, sequences, mutual_coherence(sequences))


def _gain_amplitude(target_snr, noise_power):
    # power control met with equality; unit gains when noiseless
    return math.sqrt(target_snr * noise_power) if noise_power > 0 else 1.0


def synthesize_channel(assigned_preambles, pool, target_snr, noise_power, rng):
    """Superpose the assigned preambles (1-based) with random-phase gains plus CSCG noise."""
    target_snr = check_real(target_snr, "target_snr", 0.0)
    noise_power = check_real(noise_power, "noise_power", 0.0)
    amplitude = _gain_amplitude(target_snr, noise_power)
    y = np.zeros(pool.t_p, dtype=np.complex128)
    gains = {}
    for index in assigned_preambles:
        if not 1 <= index <= pool.pool_size:
            raise IndexError(f"preamble index {index} outside 1..{pool.pool_size}")
        g = amplitude * np.exp(2j * np.pi * rng.random())
        gains[index] = gains.get(index, 0.0) + g
        y += g * pool.sequences[index - 1]
    if noise_power > 0:
        scale = math.sqrt(noise_power / 2.0)
        y += scale * (rng.standard_normal(pool.t_p) + 1j * rng.standard_normal(pool.t_p))
    return ChannelObservation(y, frozenset(gains), gains)


def _greedy_pursuit(y, D, max_k, stop_energy, prune_below):
    """Matching pursuit with least-squares refit; returns (support, coefficients)."""
    support = []
    coef = np.zeros(0, dtype=np.complex128)
    residual = y.copy()
    for _ in range(max_k):
        if np.vdot(residual, residual).real <= stop_energy:
            break
        corr = np.abs(D.conj().T @ residual)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        coef, *_ = np.linalg.lstsq(D[:, support], y, rcond=None)
        residual = y - D[:, support] @ coef
    keep = np.abs(coef) >= prune_below
    return [s for s, k in zip(support, keep) if k], coef[keep]


class PreambleCounter(TransformerMixin, BaseEstimator):
    """Count transmitted preambles in per-channel received signals.

    Parameters
    ----------
    dictionary : array of shape (t_p, pool_size)
        Preamble pool as columns. Columns are renormalized in ``fit``.
    max_k : int, default=None
        Iteration cap for the pursuit; None means ``t_p - 1``.
    stop_factor : float, default=1.5
        Stop once residual energy drops below ``stop_factor * t_p * noise_power``.
    noise_power : float, default=1.0
        Per-sample noise variance. Zero selects the noiseless model.
    target_snr : float, default=100.0
        Linear received SNR per user; coefficients under half the expected
        per-user amplitude are pruned.
    """

    def __init__(self, dictionary=None, max_k=None, stop_factor=1.5,
                 noise_power=1.0, target_snr=100.0):
        self.dictionary = dictionary
        self.max_k = max_k
        self.stop_factor = stop_factor
        self.noise_power = noise_power
        self.target_snr = target_snr

    def fit(self, X=None, y=None):
        if self.dictionary is None:
            raise ValueError("a dictionary of preambles is required")
        D = np.asarray(self.dictionary, dtype=np.complex128)
        if D.ndim != 2:
            raise ValueError("dictionary must be 2-D (t_p, pool_size)")
        norms = np.linalg.norm(D, axis=0)
        if np.any(norms == 0):
            raise ValueError("dictionary has an all-zero column")
        check_real(self.stop_factor, "stop_factor", 0.0)
        check_real(self.noise_power, "noise_power", 0.0)
        check_real(self.target_snr, "target_snr", 0.0)
        self.dictionary_ = D / norms
        self.n_features_in_ = D.shape[0]
        self.coherence_ = mutual_coherence(self.dictionary_.T)
        self.max_k_ = (
            check_int(self.max_k, "max_k", 1) if self.max_k is not None
            else max(1, D.shape[0] - 1)
        )
        return self

    def _pursue(self, y):
        t_p = self.n_features_in_
        if self.noise_power > 0:
            stop = self.stop_factor * t_p * self.noise_power
        else:
            stop = 1e-20 * max(1.0, np.vdot(y, y).real)
        prune = 0.5 * _gain_amplitude(self.target_snr, self.noise_power)
        return _greedy_pursuit(y, self.dictionary_, self.max_k_, stop, prune)

    def supports(self, Y):
        """0-based recovered support per observation."""
        check_is_fitted(self)
        Y = check_signals(Y, self.n_features_in_)
        return [sorted(self._pursue(y)[0]) for y in Y]

    def transform(self, Y):
        """Sparse codes of shape (n_obs, pool_size)."""
        check_is_fitted(self)
        Y = check_signals(Y, self.n_features_in_)
        codes = np.zeros((Y.shape[0], self.dictionary_.shape[1]), dtype=np.complex128)
        for i, y in enumerate(Y):
            support, coef = self._pursue(y)
            codes[i, support] = coef
        return codes

    def predict(self, Y):
        """Detected preamble count per observation."""
        return np.array([len(s) for s in self.supports(Y)], dtype=int)


def estimate_support(obs, pool, max_k=None, stop_factor=1.5, noise_power=1.0,
                     target_snr=100.0):
    """Recover the 1-based support of one observation; returns (support, k_hat)."""
    counter = PreambleCounter(pool.dictionary, max_k, stop_factor, noise_power,
                              target_snr).fit()
    support = {s + 1 for s in counter.supports(obs.y)[0]}
    return support, len(support)


def estimate_counts(outcome, pool, config, rng):
    """Detected preamble count for every channel of an exploration outcome."""
    counter = PreambleCounter(
        pool.dictionary, config.effective_max_k, config.stop_factor,
        config.noise_power, config.target_snr,
    ).fit()
    assigned = [[] for _ in range(outcome.M)]
    for channel, preamble in zip(outcome.user_channel, outcome.user_preamble):
        assigned[channel - 1].append(preamble)
    Y = np.stack([
        synthesize_channel(a, pool, config.target_snr, config.noise_power, rng).y
        for a in assigned
    ])
    return tuple(int(k) for k in counter.predict(Y))


def collision_stats(lam, M, pool_size, trials, seed):
    """Monte Carlo per-channel no-collision probability against the formulas.

    Returns ``(empirical, stderr, exact_mixture, first_order)`` where
    ``first_order = 1 - lam**2 / (2 pool_size M**2)``.
    """
    lam = check_real(lam, "lam", 0.0)
    M = check_int(M, "M", 1)
    pool_size = check_int(pool_size, "pool_size", 1)
    trials = check_int(trials, "trials", 1)
    rng = np.random.default_rng(seed)
    K = rng.poisson(lam, size=trials)
    total = int(K.sum())
    trial = np.repeat(np.arange(trials), K)
    cell = trial * M + rng.integers(0, M, size=total)
    users = np.bincount(cell, minlength=trials * M)
    distinct_keys = np.unique(cell.astype(np.int64) * pool_size
                              + rng.integers(0, pool_size, size=total))
    distinct = np.bincount(distinct_keys // pool_size, minlength=trials * M)
    clean = (users == distinct).reshape(trials, M).mean(axis=1)
    empirical = float(clean.mean())
    stderr = float(clean.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan
    exact, _ = no_collision_mixture(lam, M, pool_size)
    return empirical, stderr, exact, 1.0 - lam**2 / (2.0 * pool_size * M**2)
