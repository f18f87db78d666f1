"""Online inference loop: inertial belief, surprise, precision, energy and plasticity.

One :class:`Engine` processes one stream strictly in order.  Each call to
:meth:`Engine.step` runs the collective action of the population, the
inertial belief update, the free-energy / precision / instability / entropy
statistics, the energy update, plasticity, and FLOP accounting, and returns a
:class:`TraceRecord`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .agents import AgentPopulation, PlasticityParams, apply_plasticity
from .errors import ConfigError, StreamError
from .signal_io import Beat, SignalFrame


class Variant(str, Enum):
    """Ablation variants; each adds one feature to the previous one."""

    V3_0 = "v3_0"  # bare loop: no jitter, no instability drive, precision fixed at 1
    V3_1 = "v3_1"  # + sensor jitter
    V3_2 = "v3_2"  # + single-scale instability drive
    V3_3 = "v3_3"  # + multi-scale instability, adaptive precision

    @property
    def jitter(self) -> bool:
        return self is not Variant.V3_0

    @property
    def instability(self) -> bool:
        return self in (Variant.V3_2, Variant.V3_3)

    @property
    def multiscale(self) -> bool:
        return self is Variant.V3_3

    @property
    def adaptive_precision(self) -> bool:
        return self is Variant.V3_3


@dataclass(frozen=True)
class PrecisionParams:
    eps: float = 0.05
    decay: float = 0.95

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("engine.precision.eps must be > 0")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("engine.precision.decay must lie in (0, 1)")


@dataclass(frozen=True)
class EntropyParams:
    window: int = 64
    bins: int = 16

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("engine.entropy.window must be >= 1")
        if self.bins < 2:
            raise ConfigError("engine.entropy.bins must be >= 2")


@dataclass(frozen=True)
class EngineParams:
    gamma: float = 0.6
    alpha: float = 5.0
    beta: float = 0.18
    alpha_i: float = 1.0
    diffusion_d: float = 0.0
    e_init: float = 1.0
    grad_decay: float = 0.9
    precision: PrecisionParams = field(default_factory=PrecisionParams)
    instability_scales: tuple[int, ...] = (2, 8, 32)
    entropy: EntropyParams = field(default_factory=EntropyParams)
    variant: Variant = Variant.V3_3
    plasticity: PlasticityParams = field(default_factory=PlasticityParams)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "instability_scales", tuple(int(s) for s in self.instability_scales))
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("engine.gamma must lie in [0, 1]")
        for name in ("alpha", "beta", "alpha_i", "diffusion_d"):
            if getattr(self, name) < 0:
                raise ConfigError(f"engine.{name} must be >= 0")
        if not 0.0 <= self.grad_decay < 1.0:
            raise ConfigError("engine.grad_decay must lie in [0, 1)")
        scales = self.instability_scales
        if self.variant.instability:
            if not scales:
                raise ConfigError("engine.instability_scales must be non-empty for v3_2/v3_3")
            if any(s < 2 for s in scales) or any(b <= a for a, b in zip(scales, scales[1:])):
                raise ConfigError("engine.instability_scales must be >= 2 and strictly increasing")

    def replace(self, **changes) -> EngineParams:
        from dataclasses import replace

        return replace(self, **changes)


# Per-step cost model (floating-point operations).  Counts follow the
# implementation below:
#   fixed    belief update (5), surprise (2), energy update (5), score (1),
#            gradient EWMA (4), precision EWMA + inverse (6), bookkeeping (7)
#   agent    per agent: transfer operator incl. amortised Gaussian draw (24),
#            accumulation (1), plasticity bookkeeping (7)
#   entropy  min/max pass (2w), bin index (3w), counting (w), -p log p per bin (4b)
#   instab   |diff| and sum per sample per scale (3 * sum of scales) + mean
C_FIXED = 30
C_AGENT = 32


def entropy_cost(window: int, bins: int) -> int:
    return 6 * window + 4 * bins


def instability_cost(scales: Sequence[int]) -> int:
    return 3 * sum(scales) + len(scales)


def step_flops(n_agents: int, params: EngineParams) -> int:
    flops = C_FIXED + C_AGENT * n_agents + entropy_cost(params.entropy.window, params.entropy.bins)
    if params.variant.instability:
        scales = params.instability_scales if params.variant.multiscale else params.instability_scales[:1]
        flops += instability_cost(scales)
    return flops


@dataclass(slots=True)
class TraceRecord:
    step: int
    x: float
    mu: float
    free_energy: float
    precision: float
    energy: float
    n_agents: int
    entropy: float
    instability: float
    score: float
    births: int
    deaths: int
    flops_step: int
    label: bool | None = None

    @property
    def n_cost(self) -> int:
        """Population that paid maintenance during this step (before plasticity)."""
        return self.n_agents - self.births + self.deaths


TRACE_FIELDS = (
    "step", "x", "mu", "free_energy", "precision", "energy", "n_agents", "entropy",
    "instability", "score", "births", "deaths", "flops_step", "label",
)


def free_energy(x: float, mu: float) -> float:
    return abs(x - mu)


def update_precision(var: float, err: float, eps: float, decay: float) -> tuple[float, float]:
    """EWMA of squared error and the resulting precision ``1 / (eps + var)``."""
    var = decay * var + (1.0 - decay) * err * err
    return var, 1.0 / (eps + var)


def mean_abs_diff(samples: Sequence[float]) -> float:
    n = len(samples)
    if n < 2:
        return 0.0
    total = 0.0
    prev = samples[0]
    for v in samples[1:]:
        total += abs(v - prev)
        prev = v
    return total / (n - 1)


def instability_index(history: Sequence[float], scales: Sequence[int], multiscale: bool = True) -> float:
    """Mean absolute first difference over trailing windows.

    With ``multiscale`` the per-scale values are averaged, otherwise only the
    first scale is used.  ``history`` is ordered oldest first.
    """
    if len(history) < 2:
        return 0.0
    hist = list(history)
    use = scales if multiscale else scales[:1]
    return sum(mean_abs_diff(hist[-s:]) for s in use) / len(use)


def wave_entropy(window: Sequence[float], bins: int) -> float:
    """Base-2 Shannon entropy of a ``bins``-bin histogram spanning the window's range."""
    w = np.asarray(window, dtype=float)
    if w.size == 0:
        return 0.0
    lo, hi = w.min(), w.max()
    if hi == lo:
        return 0.0
    idx = ((w - lo) * (bins / (hi - lo))).astype(np.int64)
    np.minimum(idx, bins - 1, out=idx)
    counts = np.bincount(idx, minlength=bins)
    p = counts[counts > 0] / w.size
    return float(max(0.0, -(p * np.log2(p)).sum()))


@dataclass
class EngineState:
    mu: float = 0.0
    mu_prev: float = 0.0
    energy: float = 1.0
    precision: float = 1.0
    err_var: float = 0.0
    f_prev: float = 0.0
    grad_f: float = 0.0
    step: int = 0
    pop: AgentPopulation = field(default_factory=AgentPopulation)
    history: deque = field(default_factory=deque)
    entropy_window: deque = field(default_factory=deque)
    flops_total: int = 0


class Engine:
    def __init__(self, params: EngineParams | None = None):
        self.params = params or EngineParams()
        p = self.params
        hist_len = max(p.instability_scales) if p.instability_scales else 2
        self.state = EngineState(
            energy=p.e_init,
            history=deque(maxlen=max(hist_len, 2)),
            entropy_window=deque(maxlen=p.entropy.window),
        )
        self.rng = np.random.default_rng(p.seed)
        self._noise_scale = math.sqrt(2.0 * p.diffusion_d)
        self.events = []

    def step(self, frame: SignalFrame) -> TraceRecord:
        p = self.params
        s = self.state
        variant = p.variant
        x = float(frame.value)
        if not math.isfinite(x):
            raise StreamError(f"non-finite sample {x!r} at step {s.step}", s.step)

        # collective action, in population order
        dmu = s.mu - s.mu_prev
        e_thresh = p.plasticity.e_thresh
        jitter = variant.jitter
        action = 0.0
        for agent in s.pop.agents:
            action += agent.process(s.mu, dmu, s.energy, e_thresh, self.rng, jitter)

        mu_new = p.gamma * s.mu + (1.0 - p.gamma) * (x + action)
        if self._noise_scale > 0.0:
            mu_new += self._noise_scale * float(self.rng.standard_normal())

        f = free_energy(x, mu_new)
        if variant.adaptive_precision:
            s.err_var, s.precision = update_precision(s.err_var, f, p.precision.eps, p.precision.decay)
        else:
            s.precision = 1.0

        s.history.append(x)
        s.entropy_window.append(x)
        instab = 0.0
        drive = 0.0
        if variant.instability:
            instab = instability_index(s.history, p.instability_scales, variant.multiscale)
            drive = p.alpha_i * instab
        entropy = wave_entropy(s.entropy_window, p.entropy.bins)

        n_cost = len(s.pop)
        s.energy = s.energy + (p.alpha * f * s.precision + drive - p.beta * n_cost)

        s.grad_f = p.grad_decay * s.grad_f + (1.0 - p.grad_decay) * (f - s.f_prev)
        s.f_prev = f
        events = apply_plasticity(s.pop, s.energy, s.grad_f, p.plasticity, self.rng, s.step)
        if events:
            self.events.extend(events)
        births = sum(e.event == "birth" for e in events)
        deaths = len(events) - births

        flops = step_flops(n_cost, p)
        s.flops_total += flops
        s.mu_prev, s.mu = s.mu, mu_new

        rec = TraceRecord(
            step=s.step,
            x=x,
            mu=mu_new,
            free_energy=f,
            precision=s.precision,
            energy=s.energy,
            n_agents=len(s.pop),
            entropy=entropy,
            instability=instab,
            score=-s.energy,
            births=births,
            deaths=deaths,
            flops_step=flops,
            label=frame.label,
        )
        s.step += 1
        return rec


def run_stream(params: EngineParams, stream: Iterable[SignalFrame]) -> list[TraceRecord]:
    """Run a fresh engine over ``stream``; one record per frame."""
    engine = Engine(params)
    out = []
    for i, frame in enumerate(stream):
        try:
            out.append(engine.step(frame))
        except StreamError as exc:
            raise StreamError(f"step {i}: {exc}", i) from exc
    return out


def score_beat(params: EngineParams, beat: Beat) -> float:
    """Anomaly score of one beat: negated final energy of a fresh engine run."""
    engine = Engine(params)
    rec = None
    for t, v in enumerate(beat.samples):
        rec = engine.step(SignalFrame(t, float(v)))
    if rec is None:
        raise ValueError("empty beat")
    return -rec.energy


def flop_estimate(records: Sequence[TraceRecord], beat_len: int | None = None) -> dict:
    total = 0
    for r in records:
        total += r.flops_step
    n = len(records)
    out = {
        "flops_total": total,
        "flops_per_sample": total / n if n else 0.0,
        "flops_per_beat": None,
    }
    if beat_len:
        n_beats = n // beat_len
        if n_beats:
            out["flops_per_beat"] = sum(r.flops_step for r in records[: n_beats * beat_len]) / n_beats
    return out
