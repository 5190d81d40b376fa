"""Quick consistency suite behind ``epaloha selftest``."""

import itertools
import math
import time

import numpy as np

from . import analytic as an
from .config import ExplorationOutcome, SystemConfig, TrafficConfig
from .mac import (
    Scheme,
    decode_feedback,
    encode_feedback,
    make_feedback,
    simulate_single_shot,
)
from .phy import PreambleCounter, build_alltop_pool


def _oracle_equivalence(trials=200_000, sigmas=4.0):
    worst = 0.0
    for K, M in itertools.product(range(1, 5), repeat=2):
        s = simulate_single_shot(Scheme.EP, SystemConfig(M=M), TrafficConfig(fixed_k=K),
                                 trials, seed=11)
        exact = an.n_ep_oracle(K, M)
        z = abs(s.mean - exact) / s.stderr if s.stderr > 0 else (0.0 if s.mean == exact else math.inf)
        worst = max(worst, z)
    return worst <= sigmas, f"max |z| = {worst:.2f}"


def _baseline_equivalence(trials=200_000, sigmas=4.0):
    worst = 0.0
    for K, M in itertools.product(range(1, 5), repeat=2):
        s = simulate_single_shot(Scheme.MA, SystemConfig(M=M), TrafficConfig(fixed_k=K),
                                 trials, seed=12)
        exact = an.n_ma(K, M)
        z = abs(s.mean - exact) / s.stderr if s.stderr > 0 else (0.0 if s.mean == exact else math.inf)
        worst = max(worst, z)
    return worst <= sigmas, f"max |z| = {worst:.2f}"


def _exploration_never_hurts():
    gaps = [an.n_ep_oracle(K, M) - an.n_ma(K, M)
            for K, M in itertools.product(range(5), range(1, 5))]
    return min(gaps) >= -1e-12, f"min gap = {min(gaps):.3g}"


def _lower_bound_identity():
    worst = 0.0
    for lam in np.linspace(0.0, 400.0, 81):
        for M in (1, 5, 20, 50, 100, 200):
            a, b = an.n_ep_lower_poisson_forms(float(lam), M)
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return worst <= 1e-12, f"max scaled difference = {worst:.3g}"


def _fixed_point_residuals():
    worst = 0.0
    for M in (10, 100, 400):
        for frac in np.linspace(0.0, 0.36, 19):
            lambda0 = float(frac * M)
            for solver, g in ((an.solve_lambda_ma, an.n_ma_poisson),
                              (an.solve_lambda_ep, an.n_ep_approx)):
                result = solver(lambda0, M)
                if not result.stable:
                    return False, f"{solver.__name__}({lambda0}, {M}) unstable"
                worst = max(worst, abs(g(result.lam, M) - lambda0))
    return worst <= 1e-9, f"max residual = {worst:.3g}"


def _codec_round_trip(n=10_000):
    rng = np.random.default_rng(5)
    for _ in range(n):
        M = int(rng.integers(1, 12))
        counts = tuple(int(c) for c in rng.integers(0, 4, size=M))
        outcome = ExplorationOutcome((), None, counts, counts)
        w_max = int(rng.integers(1, 40))
        fb = make_feedback(outcome, w_max)
        bits = encode_feedback(fb)
        if len(bits) != an.feedback_bits(M, w_max) or decode_feedback(bits, M, w_max) != fb:
            return False, f"round trip failed for counts={counts}, w_max={w_max}"
    return True, f"{n} feedbacks"


def _psi_shape():
    x = np.linspace(0.0, 1.0, 1001)[1:-1]
    y = np.array([an.psi(float(a)) for a in x])
    second = y[:-2] - 2 * y[1:-1] + y[2:]
    _, peak = an.psi_max()
    ok = second.max() <= 1e-9 and abs(peak - 0.6149) <= 1e-4
    return ok, f"max second difference = {second.max():.3g}, max = {peak:.6f}"


def _collision_ordering():
    bad = [a for a in np.linspace(0.001, 1.0, 1000)
           if an.q_ep_asymptotic(float(a)) > -math.expm1(-a)]
    return not bad, f"{len(bad)} violations"


def _eta_sa_bound():
    bad = [K for K in range(1, 2001) if an.eta_sa_known(K) < an.INV_E]
    return not bad, f"{len(bad)} violations"


def _alltop_coherence():
    pool = build_alltop_pool(11)
    gram = np.abs(pool.sequences.conj() @ pool.sequences.T)
    diag_ok = np.allclose(np.diag(gram), 1.0, atol=1e-12)
    np.fill_diagonal(gram, 0.0)
    return bool(diag_ok and gram.max() <= 1 / math.sqrt(11) + 1e-9), f"coherence = {gram.max():.6f}"


def _noiseless_recovery():
    pool = build_alltop_pool(11)
    counter = PreambleCounter(pool.dictionary, max_k=2, noise_power=0.0).fit()
    D = pool.dictionary
    supports = [(i,) for i in range(pool.pool_size)]
    supports += list(itertools.combinations(range(pool.pool_size), 2))
    rng = np.random.default_rng(9)
    Y = np.stack([D[:, list(s)] @ np.exp(2j * np.pi * rng.random(len(s))) for s in supports])
    found = counter.supports(Y)
    misses = sum(1 for s, f in zip(supports, found) if tuple(f) != s)
    return misses == 0, f"{misses} of {len(supports)} supports missed"


CHECKS = [
    ("oracle equivalence (K, M <= 4)", _oracle_equivalence),
    ("conventional baseline equivalence", _baseline_equivalence),
    ("exploration never hurts (oracle)", _exploration_never_hurts),
    ("lower-bound dual-form identity", _lower_bound_identity),
    ("fixed-point residuals", _fixed_point_residuals),
    ("feedback codec round trip", _codec_round_trip),
    ("psi concavity and maximum", _psi_shape),
    ("collision probability ordering", _collision_ordering),
    ("single-channel known-K bound", _eta_sa_bound),
    ("Alltop coherence (t_p = 11)", _alltop_coherence),
    ("noiseless support recovery", _noiseless_recovery),
]


def run_selftest(out=print):
    """Run every check, report one line each and return True when all pass."""
    all_ok = True
    for name, check in CHECKS:
        start = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} "
            f"({time.perf_counter() - start:.1f} s)")
    return all_ok
