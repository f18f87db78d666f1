"""Agent operators and the energy-driven birth/death kernels.

Each agent contributes a scalar force to the collective action that perturbs
the belief update.  The population grows when the energy reservoir is above
the birth threshold and is pruned when it falls below the critical level; the
Genesis agent is an immortal, zero-force sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError


class AgentKind(str, Enum):
    SENSOR = "sensor"
    REGULATOR = "regulator"
    CATALYST = "catalyst"
    GENESIS = "genesis"


@dataclass(frozen=True)
class SpawnParams:
    """Per-kind parameters handed to newly spawned agents.

    The defaults keep the linearised belief recurrence stable for any mix of
    up to 64 agents at inertia 0.6 (all-regulator and all-catalyst worst
    cases included).
    """

    sensor_sigma: float = 0.05
    regulator_k_p: float = 0.02
    regulator_k_d: float = 0.005
    catalyst_lambda: float = 0.01

    def __post_init__(self):
        for name in ("sensor_sigma", "regulator_k_p", "regulator_k_d", "catalyst_lambda"):
            if getattr(self, name) < 0:
                raise ConfigError(f"plasticity.spawn.{name} must be >= 0")


@dataclass(frozen=True)
class PlasticityParams:
    e_thresh: float = 5.0
    e_crit: float = -5.0
    eta_learning: float = 0.5
    omega: float = 8.0
    tau_grad: float = 0.5
    tau_flat: float = 0.1
    n_max: int = 64
    mode: str = "deterministic"
    spawn: SpawnParams = field(default_factory=SpawnParams)

    def __post_init__(self):
        if not self.e_crit < self.e_thresh:
            raise ConfigError("plasticity.e_crit must be < plasticity.e_thresh")
        if self.n_max < 1:
            raise ConfigError("plasticity.n_max must be >= 1")
        if not self.tau_flat < self.tau_grad:
            raise ConfigError("plasticity.tau_flat must be < plasticity.tau_grad")
        if not 0.0 <= self.eta_learning <= 1.0:
            raise ConfigError("plasticity.eta_learning must lie in [0, 1]")
        if self.mode not in ("deterministic", "stochastic"):
            raise ConfigError(f"plasticity.mode must be deterministic or stochastic, got {self.mode!r}")


def sensor_transfer(mu: float, sigma: float, rng: np.random.Generator) -> float:
    """Additive exploration noise eta ~ N(0, sigma^2); the belief itself passes through."""
    if sigma == 0.0:
        return 0.0
    return float(rng.normal(0.0, sigma))


def regulator_transfer(mu: float, dmu: float, k_p: float, k_d: float) -> float:
    return -k_p * mu - k_d * dmu


def catalyst_transfer(mu: float, lambda_c: float, energy: float, e_thresh: float) -> float:
    if energy > e_thresh:
        return lambda_c * mu
    return 0.0


@dataclass
class Agent:
    kind: AgentKind
    birth_step: int = 0
    sigma: float = 0.0
    k_p: float = 0.0
    k_d: float = 0.0
    lambda_c: float = 0.0

    def __post_init__(self):
        if min(self.sigma, self.k_p, self.k_d, self.lambda_c) < 0:
            raise ConfigError(f"negative parameter on {self.kind.value} agent")

    @classmethod
    def spawn(cls, kind: AgentKind, step: int, params: SpawnParams) -> Agent:
        if kind is AgentKind.SENSOR:
            return cls(kind, step, sigma=params.sensor_sigma)
        if kind is AgentKind.REGULATOR:
            return cls(kind, step, k_p=params.regulator_k_p, k_d=params.regulator_k_d)
        if kind is AgentKind.CATALYST:
            return cls(kind, step, lambda_c=params.catalyst_lambda)
        raise ValueError("Genesis agents are only created at initialization")

    def process(
        self,
        mu: float,
        dmu: float,
        energy: float,
        e_thresh: float,
        rng: np.random.Generator,
        jitter: bool = True,
    ) -> float:
        kind = self.kind
        if kind is AgentKind.REGULATOR:
            return regulator_transfer(mu, dmu, self.k_p, self.k_d)
        if kind is AgentKind.CATALYST:
            return catalyst_transfer(mu, self.lambda_c, energy, e_thresh)
        if kind is AgentKind.SENSOR and jitter:
            return sensor_transfer(mu, self.sigma, rng)
        return 0.0


class AgentPopulation:
    """Ordered agent list with the Genesis sentinel at index 0."""

    def __init__(self, agents: list[Agent] | None = None):
        self.agents = agents if agents is not None else [Agent(AgentKind.GENESIS, 0)]
        if sum(a.kind is AgentKind.GENESIS for a in self.agents) != 1:
            raise ValueError("population must contain exactly one Genesis agent")
        self.peak_count = len(self.agents)

    def __len__(self) -> int:
        return len(self.agents)

    def __iter__(self):
        return iter(self.agents)

    def add(self, agent: Agent) -> None:
        self.agents.append(agent)
        self.peak_count = max(self.peak_count, len(self.agents))

    def remove_oldest(self) -> Agent | None:
        """Drop the earliest-born non-Genesis agent (list order breaks ties)."""
        best = None
        for i, a in enumerate(self.agents):
            if a.kind is AgentKind.GENESIS:
                continue
            if best is None or a.birth_step < self.agents[best].birth_step:
                best = i
        if best is None:
            return None
        return self.agents.pop(best)

    def counts(self) -> dict[str, int]:
        out = {k.value: 0 for k in AgentKind}
        for a in self.agents:
            out[a.kind.value] += 1
        return out


@dataclass(frozen=True)
class PlasticityEvent:
    step: int
    event: str  # "birth" | "death"
    kind: AgentKind


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def birth_rate(energy: float, params: PlasticityParams) -> float:
    return _sigmoid(energy - params.e_thresh) * params.eta_learning


def death_rate(energy: float, params: PlasticityParams) -> float:
    if energy < params.e_crit:
        return 1.0 - math.exp(-(params.e_crit - energy))
    return 0.0


def survival_probability(energy: float, e_crit: float) -> float:
    return _sigmoid(energy - e_crit)


def select_spawn_type(grad_f: float, energy: float, params: PlasticityParams) -> AgentKind:
    # Regulator on rising error, Catalyst on flat error with a full reservoir,
    # Sensor otherwise.
    if grad_f > params.tau_grad:
        return AgentKind.REGULATOR
    if abs(grad_f) < params.tau_flat and energy > params.omega:
        return AgentKind.CATALYST
    return AgentKind.SENSOR


def apply_plasticity(
    pop: AgentPopulation,
    energy: float,
    grad_f: float,
    params: PlasticityParams,
    rng: np.random.Generator,
    step: int = 0,
) -> list[PlasticityEvent]:
    """Mutate ``pop`` in place and return the birth/death events of this step."""
    events: list[PlasticityEvent] = []
    if params.mode == "deterministic":
        if energy > params.e_thresh:
            if len(pop) < params.n_max:
                kind = select_spawn_type(grad_f, energy, params)
                pop.add(Agent.spawn(kind, step, params.spawn))
                events.append(PlasticityEvent(step, "birth", kind))
        elif energy < params.e_crit and len(pop) > 1:
            gone = pop.remove_oldest()
            if gone is not None:
                events.append(PlasticityEvent(step, "death", gone.kind))
        return events

    # stochastic: one death draw per existing non-Genesis agent, then one birth draw
    p_die = 1.0 - survival_probability(energy, params.e_crit)
    survivors = []
    for agent in pop.agents:
        if agent.kind is not AgentKind.GENESIS and rng.random() < p_die:
            events.append(PlasticityEvent(step, "death", agent.kind))
        else:
            survivors.append(agent)
    pop.agents = survivors
    if rng.random() < birth_rate(energy, params) and len(pop) < params.n_max:
        kind = select_spawn_type(grad_f, energy, params)
        pop.add(Agent.spawn(kind, step, params.spawn))
        events.append(PlasticityEvent(step, "birth", kind))
    return events
