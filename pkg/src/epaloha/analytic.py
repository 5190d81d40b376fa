"""Closed-form throughput, collision and delay models for multichannel ALOHA.

Conventions: ``M`` channels, ``K`` active users in a slot, ``lam`` the mean
of a Poisson number of active users (new plus backlogged packets) and
``lambda0`` the new-arrival rate. ``alpha = lam / M``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from ._validation import check_int, check_probability, check_real

INV_E = math.exp(-1.0)
GOLDEN_TOL = 1e-8
FIXED_POINT_TOL = 1e-9


@dataclass(frozen=True)
class FixedPointResult:
    lam: float
    residual: float
    iterations: int
    stable: bool


@dataclass(frozen=True)
class ThroughputCurve:
    grid: tuple
    meaning: str

    def __post_init__(self):
        xs = [x for x, _ in self.grid]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("curve grid must be strictly increasing in x")

    @classmethod
    def from_function(cls, fn, xs, meaning):
        return cls(tuple((float(x), float(fn(x))) for x in xs), meaning)

    @property
    def peak(self):
        return max(self.grid, key=lambda point: point[1])


# -- single channel -------------------------------------------------------


def eta_sa_known(K):
    """Slotted ALOHA throughput when the K contenders know K and use p = 1/K."""
    K = check_int(K, "K", 1)
    return (1.0 - 1.0 / K) ** (K - 1)


def eta_sa_blind(p, lam):
    """Throughput with access probability ``p`` chosen without knowing K ~ Poisson(lam)."""
    p = check_probability(p, "p")
    lam = check_real(lam, "lam", 0.0)
    x = p * lam
    return x * math.exp(-x)


# -- conventional multichannel ALOHA --------------------------------------


def n_ma(K, M):
    """Mean number of collision-free packets when K users pick among M channels."""
    K = check_int(K, "K", 0)
    M = check_int(M, "M", 1)
    if K == 0:
        return 0.0
    return K * (1.0 - 1.0 / M) ** (K - 1)


def n_ma_poisson(lam, M):
    lam = check_real(lam, "lam", 0.0)
    M = check_int(M, "M", 1)
    return lam * math.exp(-lam / M)


def q_ma(lam, M):
    lam = check_real(lam, "lam", 0.0)
    M = check_int(M, "M", 1)
    return -math.expm1(-lam / M)


def _bisect_increasing(g, target, lo, hi, tol=1e-13, max_iter=200):
    """Solve g(x) = target for x in [lo, hi] where g is increasing."""
    iterations = 0
    while hi - lo > tol * max(1.0, hi) and iterations < max_iter:
        mid = 0.5 * (lo + hi)
        if g(mid) < target:
            lo = mid
        else:
            hi = mid
        iterations += 1
    x = 0.5 * (lo + hi)
    return x, iterations


def solve_lambda_ma(lambda0, M):
    """Total offered rate of conventional multichannel ALOHA with fast retrial.

    Solves ``lambda0 = lam * exp(-lam / M)`` on the stable branch ``[0, M]``.
    Loads above ``M / e`` have no solution and come back with ``stable=False``.
    """
    lambda0 = check_real(lambda0, "lambda0", 0.0)
    M = check_int(M, "M", 1)
    capacity = M * INV_E
    if lambda0 > capacity:
        return FixedPointResult(math.nan, lambda0 - capacity, 0, False)
    if lambda0 == 0.0:
        return FixedPointResult(0.0, 0.0, 0, True)
    g = lambda lam: lam * math.exp(-lam / M)
    lam, iterations = _bisect_increasing(g, lambda0, 0.0, float(M))
    residual = abs(lambda0 - g(lam))
    return FixedPointResult(lam, residual, iterations, residual <= FIXED_POINT_TOL)


# -- multichannel ALOHA with exploration ----------------------------------


def n_ep_cond(U, L_free, S):
    """Successes given S contention-free users and U contenders sending over L_free channels."""
    U = check_int(U, "U", 0)
    L_free = check_int(L_free, "L_free", 1)
    S = check_int(S, "S", 0)
    if U == 0:
        return float(S)
    return S + U * (1.0 - 1.0 / L_free) ** (U - 1)


def s_bar(K, M):
    """Expected number of singleton channels after exploration with K users."""
    return n_ma(K, M)


def n_ep_upper(K, M):
    return M * INV_E + s_bar(K, M) * (1.0 - INV_E)


def _brute_group2_mean(W, L):
    # Exhaustive over transmit subsets and channel choices; exact rational.
    if W == 0:
        return Fraction(0)
    p = min(Fraction(1), Fraction(L, W))
    total = Fraction(0)
    for mask in range(1 << W):
        u = bin(mask).count("1")
        weight = p**u * (1 - p) ** (W - u)
        if weight == 0:
            continue
        hits = 0
        for choice in itertools.product(range(L), repeat=u):
            occupancy = [0] * L
            for channel in choice:
                occupancy[channel] += 1
            hits += sum(1 for n in occupancy if n == 1)
        total += weight * Fraction(hits, L**u)
    return total


_brute_group2_mean = lru_cache(maxsize=None)(_brute_group2_mean)


def n_ep_oracle(K, M, exact=False):
    """Mean successes of one exploration frame by exhaustive enumeration.

    Every one of the ``M**K`` exploration choices is visited; for each, all
    transmit subsets of the contending users and all their channel choices
    among the free channels are enumerated. Only feasible for tiny instances.
    """
    K = check_int(K, "K", 0)
    M = check_int(M, "M", 1)
    if M**K > 10**6:
        raise ValueError(f"M**K = {M**K} exceeds the enumeration cap of 10**6")
    total = Fraction(0)
    for assignment in itertools.product(range(M), repeat=K):
        counts = [0] * M
        for channel in assignment:
            counts[channel] += 1
        S = sum(1 for c in counts if c == 1)
        total += S + _brute_group2_mean(K - S, M - S)
    mean = total / M**K
    return mean if exact else float(mean)


def poisson_pmf(k, lam):
    if k < 0:
        return 0.0
    if lam == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(-lam + k * math.log(lam) - math.lgamma(k + 1))


def poisson_cdf(n, lam):
    """P(X <= n) for X ~ Poisson(lam) by upward recurrence on the pmf."""
    lam = check_real(lam, "lam", 0.0)
    if n < 0:
        return 0.0
    if lam == 0.0:
        return 1.0
    terms = []
    if lam <= 700.0:
        term = math.exp(-lam)
        for k in range(n + 1):
            if k:
                term *= lam / k
            terms.append(term)
    else:
        # exp(-lam) underflows; run the recurrence on log-probabilities
        log_lam = math.log(lam)
        log_term = -lam
        for k in range(n + 1):
            if k:
                log_term += log_lam - math.log(k)
            terms.append(math.exp(log_term))
    return min(1.0, math.fsum(terms))


def n_ep_lower_poisson_forms(lam, M):
    """Both algebraic forms of the Poisson-averaged lower bound, unchecked."""
    lam = check_real(lam, "lam", 0.0)
    M = check_int(M, "M", 1)
    common = (1.0 - INV_E) * lam * math.exp(-lam / M)
    F_M, F_M1 = poisson_cdf(M, lam), poisson_cdf(M - 1, lam)
    tail_form = common + INV_E * (M * (1.0 - F_M) + lam * F_M1)
    mean_min = lam - (lam - M) * (1.0 - F_M1) - M * poisson_pmf(M, lam)
    min_form = common + INV_E * mean_min
    return tail_form, min_form


def n_ep_lower_poisson(lam, M):
    """Lower bound on mean successes with exploration when K ~ Poisson(lam)."""
    tail_form, min_form = n_ep_lower_poisson_forms(lam, M)
    if abs(tail_form - min_form) > 1e-12 * max(1.0, abs(tail_form)):
        raise ArithmeticError(
            f"lower-bound forms disagree: {tail_form!r} vs {min_form!r}"
        )
    return tail_form


def n_ep_approx(lam, M):
    """Second-order approximation of mean successes with exploration, lam < M."""
    lam = check_real(lam, "lam", 0.0)
    M = check_int(M, "M", 1)
    r = 1.0 - 1.0 / M
    a1 = lam * (1.0 + lam)
    a2 = lam * math.exp(-lam / M) * (1.0 + lam * r)
    a3 = lam * math.exp(-lam + lam * r * r) * (1.0 + lam * r * r)
    return lam - (a1 - 2.0 * a2 + a3) / M


def psi(alpha):
    """Large-M normalized throughput with exploration at normalized load alpha."""
    alpha = check_real(alpha, "alpha", 0.0, 1.0)
    return alpha - alpha**2 * (-math.expm1(-alpha)) ** 2


def golden_section_max(f, lo, hi, tol=GOLDEN_TOL):
    """Maximize a unimodal function on [lo, hi]; returns (x, f(x))."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def psi_max():
    """(argmax, max) of psi on [0, 1]."""
    return golden_section_max(psi, 0.0, 1.0)


def q_ep_asymptotic(alpha):
    alpha = check_real(alpha, "alpha", 0.0, 1.0)
    return alpha * (-math.expm1(-alpha)) ** 2


def _simulated_n_ep(M, trials, seed):
    from .mac import Scheme, simulate_single_shot
    from .config import SystemConfig, TrafficConfig

    config = SystemConfig(M=M)

    def g(lam):
        summary = simulate_single_shot(
            Scheme.EP, config, TrafficConfig(lam=lam), trials, seed
        )
        return summary.mean

    return g


def solve_lambda_ep(lambda0, M, method="approx", trials=20_000, seed=0):
    """Total offered rate with exploration and fast retrial.

    Solves ``lambda0 = g(lam)`` with ``g`` the approximate mean-success
    curve (``method="approx"``) or a Monte Carlo estimate of it using common
    random numbers (``method="simulation"``), on the rising branch of ``g``.
    """
    lambda0 = check_real(lambda0, "lambda0", 0.0)
    M = check_int(M, "M", 1)
    if method == "approx":
        g = lambda lam: n_ep_approx(lam, M)
        tol = FIXED_POINT_TOL
    elif method == "simulation":
        g = _simulated_n_ep(M, trials, seed)
        tol = math.inf
    else:
        raise ValueError(f"unknown method {method!r}")
    if lambda0 == 0.0:
        return FixedPointResult(0.0, 0.0, 0, True)
    lam_peak, g_peak = golden_section_max(g, 0.0, float(M), tol=1e-6 * M)
    if lambda0 > g_peak:
        return FixedPointResult(math.nan, lambda0 - g_peak, 0, False)
    lam, iterations = _bisect_increasing(g, lambda0, 0.0, lam_peak)
    residual = abs(lambda0 - g(lam))
    return FixedPointResult(lam, residual, iterations, residual <= tol)


def max_throughput_ratio():
    return 2.0 - INV_E


# -- delay ----------------------------------------------------------------


def delay_outage(q, D):
    """Probability that a packet needs more than D transmissions, q ** D."""
    q = check_real(q, "q", 0.0)
    if q >= 1.0:
        raise ValueError("collision probability must be < 1")
    D = check_int(D, "D", 0)
    return q**D


def mean_delay(q):
    q = check_real(q, "q", 0.0)
    if q >= 1.0:
        raise ValueError("collision probability must be < 1")
    return 1.0 / (1.0 - q)


# -- preamble pool and overhead -------------------------------------------


def preamble_no_collision_prob(k, pool_size):
    """Probability that k users drawing from ``pool_size`` preambles all differ.

    Returns ``(exact, approx)``; ``approx = exp(-k(k-1) / (2 pool_size))`` is
    never below ``exact``.
    """
    k = check_int(k, "k", 0)
    pool_size = check_int(pool_size, "pool_size", 1)
    approx = math.exp(-k * (k - 1) / (2.0 * pool_size))
    if k > pool_size:
        return 0.0, approx
    exact = 1.0
    for j in range(1, k):
        exact *= 1.0 - j / pool_size
    return exact, approx


def no_collision_mixture(lam, M, pool_size, tol=1e-15):
    """Per-channel no-collision probability with Poisson(lam / M) users on the channel."""
    rate = check_real(lam, "lam", 0.0) / check_int(M, "M", 1)
    exact_total, approx_total, mass = 0.0, 0.0, 0.0
    k = 0
    while True:
        p_k = poisson_pmf(k, rate)
        exact, approx = preamble_no_collision_prob(k, pool_size)
        exact_total += p_k * exact
        approx_total += p_k * approx
        mass += p_k
        k += 1
        if k > rate and 1.0 - mass < tol:
            break
        if k > 10_000:
            break
    return exact_total, approx_total


def min_pool_size(lam, M, delta):
    """Smallest pool keeping the approximate preamble-collision probability at delta."""
    lam = check_real(lam, "lam", 0.0)
    M = check_int(M, "M", 1)
    delta = check_real(delta, "delta")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    needed = lam**2 / (2.0 * delta * M**2)
    return max(1, math.ceil(round(needed, 9)))


def overhead_factor(t_p, t_d, t_f):
    """Ratio of conventional to exploration slot length."""
    t_p = check_int(t_p, "t_p", 1)
    t_d = check_int(t_d, "t_d", 1)
    t_f = check_int(t_f, "t_f", 1)
    return (t_d + t_f) / (t_p + t_d + 2 * t_f)


def feedback_bits(M, w_max):
    M = check_int(M, "M", 1)
    w_max = check_int(w_max, "w_max", 1)
    return M + (w_max - 1).bit_length()
