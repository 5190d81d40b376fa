import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epaloha.config import (
    EstimationMode,
    SteadyStateStats,
    SystemConfig,
    TrafficConfig,
    parse_config_text,
    validate,
)
from epaloha.mac import make_feedback, run_exploration


def test_valid_config_has_no_errors():
    assert validate(SystemConfig(M=4, pool_size=64, t_p=10, t_d=100, t_f=5)) == []


def test_preamble_not_shorter_than_data_is_reported():
    errors = validate(SystemConfig(t_p=100, t_d=100))
    assert "t_p < t_d violated" in errors


def test_zero_channels_is_reported():
    assert "M >= 1 violated" in validate(SystemConfig(M=0))


def test_all_violations_are_listed():
    errors = validate(SystemConfig(M=0, pool_size=0, t_p=200, t_d=100))
    assert len(errors) == 3


def test_phy_mode_requires_alltop_pool():
    cfg = SystemConfig(t_p=11, pool_size=100, estimation_mode="Phy")
    assert validate(cfg) == ["Phy mode needs pool_size == t_p**2"]
    assert validate(cfg.replace(pool_size=121)) == []
    assert validate(cfg.replace(t_p=9, pool_size=81))


@pytest.mark.parametrize("kwargs", [{}, {"fixed_k": 3, "lam": 2.0}, {"lam": -1.0},
                                    {"lambda0": float("inf")}])
def test_traffic_needs_exactly_one_finite_value(kwargs):
    with pytest.raises(ValueError):
        TrafficConfig(**kwargs)


def test_traffic_accepts_zero():
    assert TrafficConfig(fixed_k=0).fixed_k == 0
    assert TrafficConfig(lam=0.0).is_poisson


def test_config_file_round_trip():
    text = """
    # channels and pool
    M = 8
    pool_size = 25   # Alltop with t_p = 5
    t_p = 5
    t_d = 50
    t_f = 2
    estimation_mode = Phy
    target_snr = 31.6
    noise_power = 0.5
    lambda = 4.5
    """
    system, traffic = parse_config_text(text)
    assert system.M == 8 and system.pool_size == 25 and system.t_p == 5
    assert system.estimation_mode is EstimationMode.PHY
    assert system.noise_power == 0.5
    assert traffic == TrafficConfig(lam=4.5)


def test_config_file_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown key"):
        parse_config_text("channels = 3")


def test_delay_outage_is_one_at_zero_and_nonincreasing():
    stats = SteadyStateStats(1.0, 0.1, 0.9, {1: 90, 2: 9, 3: 1}, 0.1, 10)
    values = [stats.delay_outage(D) for D in range(5)]
    assert values[0] == 1.0
    assert values == sorted(values, reverse=True)
    assert values[1] == pytest.approx(0.1)
    assert values[2] == pytest.approx(0.01)


@settings(max_examples=200, deadline=None)
@given(K=st.integers(0, 40), M=st.integers(1, 12), seed=st.integers(0, 2**32 - 1),
       mode=st.sampled_from(["Ideal", "PreamblePool"]))
def test_outcome_and_feedback_invariants(K, M, seed, mode):
    cfg = SystemConfig(M=M, pool_size=5, estimation_mode=mode)
    outcome = run_exploration(K, cfg, np.random.default_rng(seed))
    assert sum(outcome.true_counts) == K
    if mode == "Ideal":
        assert outcome.est_counts == outcome.true_counts
    else:
        assert all(e <= t for e, t in zip(outcome.est_counts, outcome.true_counts))
    fb = make_feedback(outcome)
    assert all((b == 1) == (k == 1) for b, k in zip(fb.flags, outcome.est_counts))
    assert fb.contention_count == sum(outcome.est_counts) - sum(fb.flags)
