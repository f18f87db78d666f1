import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgemas.agents import (
    Agent,
    AgentKind,
    AgentPopulation,
    PlasticityParams,
    SpawnParams,
    apply_plasticity,
    birth_rate,
    catalyst_transfer,
    death_rate,
    regulator_transfer,
    select_spawn_type,
    sensor_transfer,
    survival_probability,
)
from sgemas.errors import ConfigError

P = PlasticityParams()


# ---- transfer operators

def test_sensor_sigma_zero_is_exactly_zero():
    rng = np.random.default_rng(0)
    assert sensor_transfer(3.0, 0.0, rng) == 0.0


def test_sensor_draw_repeatable():
    a = sensor_transfer(0.0, 1.0, np.random.default_rng(42))
    b = sensor_transfer(0.0, 1.0, np.random.default_rng(42))
    assert a == b


def test_sensor_draw_spread():
    rng = np.random.default_rng(7)
    draws = np.array([sensor_transfer(0.0, 0.5, rng) for _ in range(100_000)])
    # normal oracle: sample std of N(0, 0.5^2) concentrates at 0.5
    assert abs(draws.std() - 0.5) / 0.5 < 0.02
    assert abs(draws.mean()) < 0.01


def test_regulator_values():
    assert regulator_transfer(1.0, 0.0, 0.5, 0.3) == -0.5
    assert regulator_transfer(0.0, 2.0, 0.5, 0.3) == pytest.approx(-0.6)
    assert regulator_transfer(0.0, 0.0, 0.5, 0.3) == 0.0


def test_catalyst_values():
    assert catalyst_transfer(2.0, 0.1, 5.0, 5.0) == 0.0
    assert catalyst_transfer(7.0, 0.1, -3.0, 5.0) == 0.0
    assert catalyst_transfer(2.0, 0.1, 5.1, 5.0) == pytest.approx(0.2)
    assert catalyst_transfer(0.0, 0.1, 9.0, 5.0) == 0.0


@given(mu=st.floats(-1e6, 1e6), lam=st.floats(0, 10), e=st.floats(-1e6, 5.0))
def test_catalyst_off_below_threshold(mu, lam, e):
    assert catalyst_transfer(mu, lam, e, 5.0) == 0.0


def test_agent_process_dispatch():
    rng = np.random.default_rng(0)
    sp = SpawnParams(sensor_sigma=0.0, regulator_k_p=0.5, regulator_k_d=0.3, catalyst_lambda=0.1)
    assert Agent.spawn(AgentKind.REGULATOR, 0, sp).process(1.0, 0.0, 0.0, 5.0, rng) == -0.5
    assert Agent.spawn(AgentKind.CATALYST, 0, sp).process(2.0, 0.0, 6.0, 5.0, rng) == pytest.approx(0.2)
    assert Agent.spawn(AgentKind.SENSOR, 0, sp).process(2.0, 0.0, 6.0, 5.0, rng) == 0.0
    assert Agent(AgentKind.GENESIS).process(2.0, 1.0, 6.0, 5.0, rng) == 0.0


def test_sensor_jitter_flag_consumes_no_randomness():
    sp = SpawnParams(sensor_sigma=1.0)
    agent = Agent.spawn(AgentKind.SENSOR, 0, sp)
    rng = np.random.default_rng(3)
    assert agent.process(0.0, 0.0, 0.0, 5.0, rng, jitter=False) == 0.0
    assert rng.random() == np.random.default_rng(3).random()


def test_genesis_cannot_be_spawned():
    with pytest.raises(ValueError):
        Agent.spawn(AgentKind.GENESIS, 0, SpawnParams())


def test_negative_spawn_param_rejected():
    with pytest.raises(ConfigError):
        SpawnParams(regulator_k_p=-1.0)


# ---- rates

def test_birth_rate_midpoint_and_limits():
    assert birth_rate(P.e_thresh, P) == 0.5 * P.eta_learning
    assert birth_rate(-1e9, P) == 0.0
    p1 = PlasticityParams(eta_learning=1.0)
    # sigmoid(ln 3) = 3 / (1 + 3)
    assert birth_rate(p1.e_thresh + math.log(3), p1) == pytest.approx(3 / 4)


def test_death_rate_cases():
    assert death_rate(P.e_crit, P) == 0.0
    assert death_rate(P.e_crit + 3, P) == 0.0
    assert death_rate(P.e_crit - math.log(2), P) == pytest.approx(0.5)
    assert death_rate(-1e9, P) == 1.0


def test_survival_probability_cases():
    assert survival_probability(P.e_crit, P.e_crit) == 0.5
    assert survival_probability(P.e_crit + 10, P.e_crit) == pytest.approx(1 / (1 + math.exp(-10)))
    assert survival_probability(P.e_crit + 10, P.e_crit) == pytest.approx(0.99995, abs=1e-5)


@given(e1=st.floats(-1e3, 1e3), e2=st.floats(-1e3, 1e3))
def test_rates_monotone(e1, e2):
    lo, hi = min(e1, e2), max(e1, e2)
    assert birth_rate(lo, P) <= birth_rate(hi, P)
    assert survival_probability(lo, P.e_crit) <= survival_probability(hi, P.e_crit)
    assert death_rate(lo, P) >= death_rate(hi, P)


@given(e1=st.floats(-30, 30), e2=st.floats(-30, 30))
def test_survival_strictly_monotone(e1, e2):
    if e1 + 1e-6 < e2:
        assert survival_probability(e1, P.e_crit) < survival_probability(e2, P.e_crit)


# ---- spawn type

def test_spawn_type_rules():
    assert select_spawn_type(2 * P.tau_grad, 0.0, P) is AgentKind.REGULATOR
    assert select_spawn_type(0.0, 2 * P.omega, P) is AgentKind.CATALYST
    mid = (P.tau_flat + P.tau_grad) / 2
    for e in (-100.0, 0.0, 100.0):
        assert select_spawn_type(mid, e, P) is AgentKind.SENSOR
    assert select_spawn_type(0.0, P.omega / 2, P) is AgentKind.SENSOR


# ---- population and plasticity

def test_population_starts_with_genesis():
    pop = AgentPopulation()
    assert len(pop) == 1 and pop.agents[0].kind is AgentKind.GENESIS


def test_population_needs_one_genesis():
    with pytest.raises(ValueError):
        AgentPopulation([Agent(AgentKind.SENSOR)])


def test_remove_oldest_skips_genesis():
    pop = AgentPopulation()
    pop.add(Agent(AgentKind.SENSOR, 5))
    pop.add(Agent(AgentKind.REGULATOR, 2))
    assert pop.remove_oldest().kind is AgentKind.REGULATOR
    assert pop.remove_oldest().kind is AgentKind.SENSOR
    assert pop.remove_oldest() is None
    assert len(pop) == 1


def test_no_change_between_thresholds():
    pop = AgentPopulation()
    pop.add(Agent(AgentKind.SENSOR, 0))
    for e in (P.e_crit, 0.0, P.e_thresh):
        assert apply_plasticity(pop, e, 0.0, P, np.random.default_rng(0)) == []
    assert len(pop) == 2


def test_deterministic_cap():
    pop = AgentPopulation()
    p = PlasticityParams(n_max=3)
    for _ in range(2):
        pop.add(Agent(AgentKind.SENSOR, 0))
    assert apply_plasticity(pop, 1e6, 0.0, p, np.random.default_rng(0)) == []
    assert len(pop) == 3


def test_deterministic_birth_and_death():
    pop = AgentPopulation()
    ev = apply_plasticity(pop, P.e_thresh + 0.01, 2 * P.tau_grad, P, np.random.default_rng(0), step=4)
    assert [(e.step, e.event, e.kind) for e in ev] == [(4, "birth", AgentKind.REGULATOR)]
    ev = apply_plasticity(pop, P.e_crit - 0.01, 0.0, P, np.random.default_rng(0), step=5)
    assert [(e.event, e.kind) for e in ev] == [("death", AgentKind.REGULATOR)]
    # Genesis alone is immortal
    assert apply_plasticity(pop, -1e9, 0.0, P, np.random.default_rng(0)) == []


def _stochastic_log(seed):
    p = PlasticityParams(mode="stochastic")
    rng = np.random.default_rng(seed)
    pop = AgentPopulation()
    log = []
    energies = np.random.default_rng(99).normal(0, 8, 300)
    for step, e in enumerate(energies):
        log += apply_plasticity(pop, float(e), 0.0, p, rng, step)
    return log


def test_stochastic_log_repeatable():
    a = _stochastic_log(5)
    assert a and a == _stochastic_log(5)


@settings(max_examples=50, deadline=None)
@given(
    energies=st.lists(st.floats(-50, 50), min_size=1, max_size=80),
    grads=st.floats(-2, 2),
    n_max=st.integers(1, 6),
    mode=st.sampled_from(["deterministic", "stochastic"]),
    seed=st.integers(0, 1000),
)
def test_population_invariants(energies, grads, n_max, mode, seed):
    p = PlasticityParams(n_max=n_max, mode=mode)
    pop = AgentPopulation()
    rng = np.random.default_rng(seed)
    for step, e in enumerate(energies):
        ev = apply_plasticity(pop, e, grads, p, rng, step)
        kinds = [a.kind for a in pop.agents]
        assert kinds.count(AgentKind.GENESIS) == 1
        assert 1 <= len(pop) <= n_max
        if mode == "deterministic":
            assert sum(x.event == "birth" for x in ev) <= 1
            assert sum(x.event == "death" for x in ev) <= 1


@pytest.mark.parametrize(
    "kwargs",
    [dict(e_crit=5.0, e_thresh=5.0), dict(n_max=0), dict(tau_flat=0.6), dict(eta_learning=1.5), dict(mode="chaotic")],
)
def test_plasticity_validation(kwargs):
    with pytest.raises(ConfigError):
        PlasticityParams(**kwargs)
