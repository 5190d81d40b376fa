"""Slot-level simulation of multichannel ALOHA with and without exploration.

A frame with exploration has three steps. Every active user sends a
preamble on a random channel, the base station broadcasts which channels
carried exactly one preamble plus the number of users in contention, and
then the data phase runs: users alone on their channel keep it, all other
users pick a random channel among the remaining ones with access
probability ``min(1, free / contenders)``.

There are two code paths. ``run_exploration`` / ``make_feedback`` /
``run_dtp`` operate on one frame with explicit per-user state and handle
every estimation mode. ``_batch_frames`` evaluates many frames at once with
numpy and backs the Monte Carlo drivers in Ideal and PreamblePool modes.
"""

from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np
from joblib import Parallel, delayed

from ._validation import check_int, check_real
from .config import (
    EstimationMode,
    ExplorationOutcome,
    Feedback,
    SlotResult,
    SteadyStateStats,
    SystemConfig,
    TrafficConfig,
)

DEFAULT_W_MAX = 1 << 16
BLOCK_TRIALS = 4096
BACKLOG_PER_CHANNEL = 100  # default divergence cap, packets per channel


class Scheme(str, enum.Enum):
    MA = "ConventionalMA"
    EP = "MultichannelEP"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        aliases = {"ma": cls.MA, "conventional": cls.MA, "conventionalma": cls.MA,
                   "ep": cls.EP, "exploration": cls.EP, "multichannelep": cls.EP}
        if text not in aliases:
            raise ValueError(f"unknown scheme {value!r}")
        return aliases[text]


def block_rng(seed, block):
    """Counter-based generator for trial block ``block`` of master seed ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


# -- one frame, explicit state ---------------------------------------------


def run_exploration(K, config, rng, pool=None, channels=None, preambles=None):
    """Exploration phase for K users; ``channels``/``preambles`` (1-based) force the draws."""
    K = check_int(K, "K", 0)
    M = config.M
    mode = config.estimation_mode
    if channels is None:
        channels = rng.integers(1, M + 1, size=K)
    channels = tuple(int(c) for c in channels)
    if len(channels) != K or any(not 1 <= c <= M for c in channels):
        raise ValueError("channel choices must be K values in 1..M")
    user_preamble = None
    if mode is not EstimationMode.IDEAL:
        if preambles is None:
            preambles = rng.integers(1, config.pool_size + 1, size=K)
        user_preamble = tuple(int(p) for p in preambles)
        if len(user_preamble) != K:
            raise ValueError("need one preamble per user")
    true_counts = [0] * M
    for c in channels:
        true_counts[c - 1] += 1
    if mode is EstimationMode.IDEAL:
        est_counts = tuple(true_counts)
    elif mode is EstimationMode.PREAMBLE_POOL:
        distinct = [set() for _ in range(M)]
        for c, p in zip(channels, user_preamble):
            distinct[c - 1].add(p)
        est_counts = tuple(len(d) for d in distinct)
    else:
        from .phy import build_alltop_pool, estimate_counts

        pool = pool if pool is not None else build_alltop_pool(config.t_p)
        partial = ExplorationOutcome(channels, user_preamble, tuple(true_counts), ())
        est_counts = estimate_counts(partial, pool, config, rng)
    return ExplorationOutcome(channels, user_preamble, tuple(true_counts), est_counts)


def _count_width(w_max):
    return (w_max - 1).bit_length()


def make_feedback(outcome, w_max=DEFAULT_W_MAX):
    """One flag per channel (detected count == 1) plus the broadcast contention count."""
    w_max = check_int(w_max, "w_max", 1)
    flags = tuple(1 if k == 1 else 0 for k in outcome.est_counts)
    W = sum(k for k, b in zip(outcome.est_counts, flags) if not b)
    # the count field holds 0 .. 2**width - 1
    ceiling = min(w_max, (1 << _count_width(w_max)) - 1)
    return Feedback(flags, min(W, ceiling), w_max, saturated=W > ceiling)


def encode_feedback(fb):
    """M flag bits (channel 1 first) then the contention count, big-endian."""
    width = _count_width(fb.w_max)
    if fb.contention_count >= 1 << width:
        raise ValueError("contention count does not fit the count field")
    flags = "".join("1" if b else "0" for b in fb.flags)
    count = format(fb.contention_count, f"0{width}b") if width else ""
    return flags + count


def decode_feedback(bits, M, w_max):
    width = _count_width(w_max)
    if len(bits) != M + width or set(bits) - {"0", "1"}:
        raise ValueError(f"expected {M + width} bits, got {bits!r}")
    flags = tuple(int(b) for b in bits[:M])
    count = int(bits[M:], 2) if width else 0
    return Feedback(flags, count, w_max)


def run_dtp(outcome, fb, rng):
    """Data transmission phase for one frame given the broadcast feedback."""
    if fb.M != outcome.M:
        raise ValueError("feedback and outcome disagree on the number of channels")
    flags = fb.flags
    free = [m for m in range(1, fb.M + 1) if not flags[m - 1]]
    W = fb.contention_count
    p_access = 1.0 if W == 0 else min(1.0, len(free) / W)
    data = []
    group1 = group2_tx = 0
    fallback = False
    for channel in outcome.user_channel:
        if flags[channel - 1]:
            group1 += 1
            data.append(channel)
        elif rng.random() < p_access:
            group2_tx += 1
            if free:
                data.append(free[int(rng.integers(len(free)))])
            else:
                fallback = True
                data.append(channel)
        else:
            data.append(None)
    occupancy = {}
    for d in data:
        if d is not None:
            occupancy[d] = occupancy.get(d, 0) + 1
    success = tuple(d is not None and occupancy[d] == 1 for d in data)
    g1 = sum(s for s, c in zip(success, outcome.user_channel) if flags[c - 1])
    total = sum(success)
    return SlotResult(
        group1_count=group1,
        group2_transmitters=group2_tx,
        free_channels=len(free),
        group1_successes=g1,
        group2_successes=total - g1,
        collided_packets=sum(1 for d in data if d is not None) - total,
        per_user_success=success,
        fallback_used=fallback,
    )


def run_conventional(K, M, rng):
    """One conventional frame: every user sends data on a uniformly random channel."""
    channels = rng.integers(1, M + 1, size=check_int(K, "K", 0))
    counts = np.bincount(channels, minlength=M + 1)
    success = tuple(bool(counts[c] == 1) for c in channels)
    return SlotResult(0, int(K), M, 0, sum(success), int(K) - sum(success), success)


def run_frame(scheme, K, config, rng, pool=None, w_max=DEFAULT_W_MAX):
    if Scheme.parse(scheme) is Scheme.MA:
        return run_conventional(K, config.M, rng)
    outcome = run_exploration(K, config, rng, pool=pool)
    return run_dtp(outcome, make_feedback(outcome, w_max), rng)


# -- many frames at once ---------------------------------------------------


def _batch_frames(scheme, config, K, rng):
    """Vectorized frames; ``K[i]`` users in frame i.

    Returns ``(group1_successes, group2_successes, user_success)`` with
    ``user_success`` of shape (len(K), K.max()).
    """
    T = len(K)
    M = config.M
    Kmax = int(K.max()) if T else 0
    active = np.arange(Kmax) < K[:, None]
    base = (np.arange(T, dtype=np.int64) * M)[:, None]
    cell = base + rng.integers(0, M, size=(T, Kmax))
    counts = np.bincount(cell[active], minlength=T * M)
    if scheme is Scheme.MA:
        ok = active & (counts[cell] == 1)
        return np.zeros(T, dtype=np.int64), ok.sum(axis=1), ok

    mode = config.estimation_mode
    if mode is EstimationMode.IDEAL:
        est = counts
    elif mode is EstimationMode.PREAMBLE_POOL:
        P = config.pool_size
        pre = rng.integers(0, P, size=(T, Kmax))
        keys = np.unique(cell[active] * P + pre[active])
        est = np.bincount(keys // P, minlength=T * M)
    else:
        raise ValueError("Phy mode runs through the per-frame path")

    flag = est == 1
    free = M - flag.reshape(T, M).sum(axis=1)
    W = np.where(flag, 0, est).reshape(T, M).sum(axis=1)
    p_access = np.where(W > 0, np.minimum(1.0, free / np.maximum(W, 1)), 1.0)
    group1 = active & flag[cell]
    group2 = active & ~flag[cell]
    tx = group2 & (rng.random((T, Kmax)) < p_access[:, None])
    # Data channels are drawn as a rank within the per-frame free set; the
    # rank-to-channel map is a bijection, so occupancy counts are unchanged.
    rank = np.floor(rng.random((T, Kmax)) * free[:, None]).astype(np.int64)
    data_cell = base + rank
    occupancy = np.bincount(data_cell[tx], minlength=T * M)
    ok2 = tx & (occupancy[data_cell] == 1)
    ok1 = group1 & (counts[cell] == 1)
    return ok1.sum(axis=1), ok2.sum(axis=1), ok1 | ok2


def _per_frame_batch(scheme, config, K, rng, pool):
    T = len(K)
    Kmax = int(K.max()) if T else 0
    g1 = np.zeros(T, dtype=np.int64)
    g2 = np.zeros(T, dtype=np.int64)
    ok = np.zeros((T, Kmax), dtype=bool)
    for i, k in enumerate(K):
        result = run_frame(scheme, int(k), config, rng, pool=pool)
        g1[i], g2[i] = result.group1_successes, result.group2_successes
        ok[i, :k] = result.per_user_success
    return g1, g2, ok


def _frames(scheme, config, K, rng, pool=None):
    if scheme is Scheme.EP and config.estimation_mode is EstimationMode.PHY:
        return _per_frame_batch(scheme, config, K, rng, pool)
    return _batch_frames(scheme, config, K, rng)


@dataclasses.dataclass(frozen=True)
class SingleShotSummary:
    trials: int
    mean: float
    stderr: float
    mean_group1: float
    mean_group2: float
    stderr_group1: float
    stderr_group2: float
    mean_active: float
    collision_fraction: float


def _block_sums(scheme, config, traffic, n, seed, block, pool):
    rng = block_rng(seed, block)
    if traffic.fixed_k is not None:
        K = np.full(n, int(traffic.fixed_k), dtype=np.int64)
    else:
        K = rng.poisson(traffic.lam, size=n)
    g1, g2, _ = _frames(scheme, config, K, rng, pool)
    s = g1 + g2
    return np.array([s.sum(), (s * s).sum(), g1.sum(), (g1 * g1).sum(),
                     g2.sum(), (g2 * g2).sum(), K.sum()], dtype=np.int64)


def _mean_and_stderr(total, total_sq, n):
    mean = total / n
    if n < 2:
        return mean, math.nan
    var = max(0.0, (total_sq - n * mean * mean) / (n - 1))
    return mean, math.sqrt(var / n)


def simulate_single_shot(scheme, config, traffic, trials, seed=0, n_jobs=1):
    """Independent frames with fixed or Poisson user counts.

    Trials are grouped into blocks of ``BLOCK_TRIALS``, each with its own
    counter-based stream, so results depend only on ``(seed, trials)``.
    """
    scheme = Scheme.parse(scheme)
    trials = check_int(trials, "trials", 1)
    if traffic.lambda0 is not None:
        raise ValueError("single-shot runs take fixed_k or lam traffic")
    pool = None
    if scheme is Scheme.EP and config.estimation_mode is EstimationMode.PHY:
        from .phy import build_alltop_pool

        pool = build_alltop_pool(config.t_p)
    sizes = [min(BLOCK_TRIALS, trials - start) for start in range(0, trials, BLOCK_TRIALS)]
    jobs = (delayed(_block_sums)(scheme, config, traffic, n, seed, b, pool)
            for b, n in enumerate(sizes))
    if n_jobs == 1:
        parts = [fn(*args, **kw) for fn, args, kw in jobs]
    else:
        parts = Parallel(n_jobs=n_jobs)(jobs)
    s, s2, a, a2, b, b2, active = (int(v) for v in np.sum(parts, axis=0))
    mean, stderr = _mean_and_stderr(s, s2, trials)
    mean1, stderr1 = _mean_and_stderr(a, a2, trials)
    mean2, stderr2 = _mean_and_stderr(b, b2, trials)
    return SingleShotSummary(
        trials=trials,
        mean=mean,
        stderr=stderr,
        mean_group1=mean1,
        mean_group2=mean2,
        stderr_group1=stderr1,
        stderr_group2=stderr2,
        mean_active=active / trials,
        collision_fraction=(1.0 - s / active) if active else 0.0,
    )


# -- fast retrial ------------------------------------------------------------


def simulate_fast_retrial(scheme, config, lambda0, slots, warmup=0, seed=0,
                          delay_thresholds=(1, 2, 3), max_backlog=None):
    """Steady-state run where every failed packet retries in the next slot.

    A packet's delay is the number of frames it took part in, counting the
    successful one. Statistics cover the slots after ``warmup``. The run stops
    and is flagged as diverged once the backlog exceeds ``max_backlog``
    (default ``BACKLOG_PER_CHANNEL * M``).
    """
    scheme = Scheme.parse(scheme)
    lambda0 = check_real(lambda0, "lambda0", 0.0)
    slots = check_int(slots, "slots", 1)
    warmup = check_int(warmup, "warmup", 0)
    if max_backlog is None:
        max_backlog = BACKLOG_PER_CHANNEL * config.M
    if warmup >= slots:
        raise ValueError("warmup must be shorter than the run")
    rng = block_rng(seed, 0)
    pool = None
    if scheme is Scheme.EP and config.estimation_mode is EstimationMode.PHY:
        from .phy import build_alltop_pool

        pool = build_alltop_pool(config.t_p)
    arrivals = rng.poisson(lambda0, size=slots)
    backlog = np.zeros(0, dtype=np.int64)  # attempts made so far
    histogram = np.zeros(16, dtype=np.int64)
    active_total = delivered_total = backlog_total = 0
    total_new = total_delivered = 0
    diverged = False
    measured = 0
    for t in range(slots):
        n_new = int(arrivals[t])
        total_new += n_new
        attempts = np.concatenate([backlog, np.zeros(n_new, dtype=np.int64)]) + 1
        backlog_in = len(backlog)
        K = len(attempts)
        if K:
            _, _, ok = _frames(scheme, config, np.array([K]), rng, pool)
            ok = ok[0]
            delivered = attempts[ok]
            backlog = attempts[~ok]
        else:
            delivered = attempts
        total_delivered += len(delivered)
        if t >= warmup:
            measured += 1
            active_total += K
            delivered_total += len(delivered)
            backlog_total += backlog_in
            if len(delivered):
                top = int(delivered.max())
                if top >= len(histogram):
                    histogram = np.pad(histogram, (0, top + 1 - len(histogram)))
                histogram += np.bincount(delivered, minlength=len(histogram))
        if len(backlog) > max_backlog:
            diverged = True
            break
    measured = max(measured, 1)
    lam_hat = active_total / measured
    q_hat = (active_total - delivered_total) / active_total if active_total else 0.0
    hist = {int(a): int(n) for a, n in enumerate(histogram) if n}
    stats = SteadyStateStats(
        empirical_lambda=lam_hat,
        empirical_q=q_hat,
        throughput=delivered_total / measured,
        delay_histogram=hist,
        mean_backlog=backlog_total / measured,
        slots=measured,
        diverged=diverged,
        total_new=total_new,
        total_delivered=total_delivered,
        final_backlog=len(backlog),
        delivered_measured=delivered_total,
    )
    return dataclasses.replace(
        stats, outage={int(D): stats.delay_outage(int(D)) for D in delay_thresholds}
    )
