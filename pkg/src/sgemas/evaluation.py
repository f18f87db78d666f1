"""Detection metrics, the leaky-integrator baseline, ablation sweeps and phase exports."""

from __future__ import annotations

import hashlib
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .engine import EngineParams, TraceRecord, Variant, run_stream, score_beat
from .errors import DegenerateInputError, UndefinedAUCError
from .signal_io import Beat, SignalFrame

EXACT_MAX_N = 20


@dataclass(frozen=True, slots=True)
class ScoredItem:
    score: float
    label: bool


def _split_items(items) -> tuple[np.ndarray, np.ndarray]:
    items = list(items)
    scores = np.array([float(it.score) for it in items])
    labels = np.array([bool(it.label) for it in items])
    return scores, labels


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"AUC undefined with {n_pos} positives and {n_neg} negatives")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_items(items: Iterable[ScoredItem]) -> float:
    return roc_auc(*_split_items(items))


def roc_curve(scores: Sequence[float], labels: Sequence[bool]) -> list[tuple[float, float, float]]:
    """ROC points ``(threshold, fpr, tpr)`` from the strictest threshold down.

    Starts at (inf, 0, 0) and ends at (1, 1); tied scores share one point.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("ROC undefined for a single-class label set")
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    tp = np.cumsum(lab)
    fp = np.cumsum(~lab)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    points = [(math.inf, 0.0, 0.0)]
    for i in last:
        points.append((float(s[i]), float(fp[i] / n_neg), float(tp[i] / n_pos)))
    return points


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str


def _signed_rank_parts(diffs: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0.0]
    if d.size == 0:
        raise DegenerateInputError("all paired differences are zero")
    ranks = rankdata(np.abs(d))
    return d, ranks


def _exact_p(ranks: np.ndarray, w: float) -> float:
    # Doubled ranks are integers even with ties; count sign patterns by DP.
    r2 = np.rint(ranks * 2).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    reach = 0
    for r in r2:
        r = int(r)
        counts[r : reach + r + 1] = counts[r : reach + r + 1] + counts[: reach + 1]
        reach += r
    w2 = int(round(w * 2))
    sums = np.arange(total + 1)
    hits = int(counts[np.minimum(sums, total - sums) <= w2].sum())
    return min(1.0, hits / 2 ** len(r2))


def _approx_p(ranks: np.ndarray, w: float) -> float:
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3) - tie_counts).sum()) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        return 1.0
    z = (abs(w - mean) - 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(max(z, 0.0) / math.sqrt(2.0)))


def wilcoxon_signed_rank(diffs: Sequence[float], method: str = "auto", min_n: int = 5) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped; tied magnitudes get average ranks.  The
    exact null distribution is used for n <= 20 (``method="auto"``), the
    tie-corrected normal approximation with continuity correction above.
    """
    d, ranks = _signed_rank_parts(diffs)
    n = d.size
    if n < min_n:
        raise DegenerateInputError(f"need at least {min_n} non-zero differences, got {n}")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "approx"
    if method == "exact":
        p = _exact_p(ranks, w)
    elif method == "approx":
        p = _approx_p(ranks, w)
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(w, p, n, method)


@dataclass(slots=True)
class BaselineRecord:
    step: int
    x: float
    mu: float
    free_energy: float
    score: float
    label: bool | None = None


def leaky_baseline_run(gamma_naive: float, stream: Iterable[SignalFrame]) -> list[BaselineRecord]:
    """Naive leaky integrator: mu <- g*mu + (1-g)*x.

    Each sample is scored by its surprise against the belief held before it
    arrived, |x_t - mu_{t-1}|; with g = 0 that is |x_t - x_{t-1}|.
    """
    if not 0.0 <= gamma_naive < 1.0:
        raise ValueError("gamma_naive must lie in [0, 1)")
    mu = 0.0
    out = []
    for i, frame in enumerate(stream):
        x = float(frame.value)
        f = abs(x - mu)
        mu = gamma_naive * mu + (1.0 - gamma_naive) * x
        out.append(BaselineRecord(i, x, mu, f, f, frame.label))
    return out


def baseline_beat_scores(gamma_naive: float, beats: Sequence[Beat]) -> list[float]:
    """Per-beat mean baseline surprise; the integrator restarts on every beat."""
    scores = []
    for beat in beats:
        recs = leaky_baseline_run(gamma_naive, (SignalFrame(t, float(v)) for t, v in enumerate(beat.samples)))
        scores.append(float(np.mean([r.score for r in recs])))
    return scores


def engine_beat_scores(params: EngineParams, beats: Sequence[Beat]) -> list[float]:
    return [score_beat(params, b) for b in beats]


@dataclass(frozen=True)
class PhasePoint:
    step: int
    entropy: float
    energy: float
    label: bool | None


def phase_trace_export(trace: Sequence[TraceRecord]) -> list[PhasePoint]:
    if not trace:
        raise ValueError("phase export needs a non-empty trace")
    return [PhasePoint(r.step, r.entropy, r.energy, r.label) for r in trace]


# --------------------------------------------------------------------------
# ablation sweep


@dataclass
class StreamInput:
    """A labeled evaluation stream: continuous frames, or pre-framed beats."""

    stream_id: str
    frames: list[SignalFrame] | None = None
    beats: list[Beat] | None = None


@dataclass
class AblationCell:
    variant: str
    stream_id: str
    auc: float | None
    n_pos: int
    n_neg: int
    seed: int
    error: str | None = None


@dataclass
class AblationReport:
    mode: str
    base_seed: int
    variants: list[str]
    stream_ids: list[str]
    cells: list[AblationCell]
    summary: dict[str, dict] = field(default_factory=dict)
    pvalues: dict[str, dict] = field(default_factory=dict)

    def table(self) -> dict[str, dict[str, float | None]]:
        out: dict[str, dict[str, float | None]] = {}
        for c in self.cells:
            out.setdefault(c.variant, {})[c.stream_id] = c.auc
        return out

    def to_dict(self) -> dict:
        return {
            "pipeline": {"mode": self.mode, "score": "negative_energy", "base_seed": self.base_seed},
            "variants": self.variants,
            "streams": self.stream_ids,
            "cells": [
                {
                    "variant": c.variant,
                    "stream_id": c.stream_id,
                    "auc": c.auc,
                    "n_pos": c.n_pos,
                    "n_neg": c.n_neg,
                    "seed": c.seed,
                    "error": c.error,
                }
                for c in self.cells
            ],
            "summary": self.summary,
            "pvalues": self.pvalues,
        }

    @property
    def failed_cells(self) -> list[AblationCell]:
        return [c for c in self.cells if c.error is not None]


def derive_seed(base_seed: int, *parts: str) -> int:
    """Stable sub-seed from a base seed and string parts (independent of PYTHONHASHSEED)."""
    key = ":".join([str(base_seed), *parts]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def _score_stream(params: EngineParams, item: StreamInput) -> tuple[np.ndarray, np.ndarray]:
    if item.beats is not None:
        scores = np.array(engine_beat_scores(params, item.beats))
        labels = np.array([bool(b.label) for b in item.beats])
        if any(b.label is None for b in item.beats):
            raise ValueError(f"stream {item.stream_id} has unlabeled beats")
        return scores, labels
    trace = run_stream(params, item.frames)
    if any(r.label is None for r in trace):
        raise ValueError(f"stream {item.stream_id} has unlabeled frames")
    return np.array([r.score for r in trace]), np.array([bool(r.label) for r in trace])


def _run_cell(args) -> AblationCell:
    name, variant, params, item, seed = args
    try:
        cell_params = params.replace(variant=Variant(variant), seed=seed)
        scores, labels = _score_stream(cell_params, item)
        n_pos = int(labels.sum())
        n_neg = int(labels.size - n_pos)
        return AblationCell(name, item.stream_id, roc_auc(scores, labels), n_pos, n_neg, seed)
    except Exception as exc:  # recorded per cell, the sweep carries on
        return AblationCell(name, item.stream_id, None, 0, 0, seed, f"{type(exc).__name__}: {exc}")


def run_ablation(
    params: EngineParams,
    streams: Sequence[StreamInput],
    variants: Sequence[str] = ("v3_0", "v3_1", "v3_2", "v3_3"),
    base_seed: int = 0,
    reference: str | None = None,
    workers: int = 1,
) -> AblationReport:
    """Run every variant on every stream and compare each variant to the reference.

    ``variants`` entries may be repeated under distinct labels using
    ``"label=v3_x"``.  The reference defaults to ``v3_0`` when present, else
    the first variant.  Paired Wilcoxon p-values need >= 5 non-zero
    differences; otherwise the p-value block records the reason.
    """
    names, kinds = [], []
    for v in variants:
        name, _, kind = v.partition("=")
        kind = kind or name
        Variant(kind)
        names.append(name)
        kinds.append(kind)
    if len(set(names)) != len(names):
        raise ValueError("variant labels must be unique")
    jobs = []
    for name, kind in zip(names, kinds):
        for item in streams:
            # seeds keyed by variant kind so relabeled duplicates see the same noise
            jobs.append((name, kind, params, item, derive_seed(base_seed, kind, item.stream_id)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]

    report = AblationReport(
        mode="per-beat" if any(s.beats is not None for s in streams) else "per-sample",
        base_seed=base_seed,
        variants=names,
        stream_ids=[s.stream_id for s in streams],
        cells=cells,
    )
    table = report.table()
    for name in names:
        vals = [a for a in table[name].values() if a is not None]
        report.summary[name] = {
            "mean_auc": statistics.fmean(vals) if vals else None,
            "std_auc": statistics.pstdev(vals) if len(vals) > 1 else (0.0 if vals else None),
            "n_streams": len(vals),
        }
    ref = reference or ("v3_0" if "v3_0" in names else names[0])
    for name in names:
        if name == ref:
            continue
        key = f"{name}_vs_{ref}"
        pairs = [
            (table[name][sid], table[ref][sid])
            for sid in report.stream_ids
            if table[name].get(sid) is not None and table[ref].get(sid) is not None
        ]
        if len(pairs) < 2:
            report.pvalues[key] = {"error": f"need >= 2 paired streams, got {len(pairs)}"}
            continue
        try:
            res = wilcoxon_signed_rank([a - b for a, b in pairs])
            report.pvalues[key] = {"statistic": res.statistic, "p_value": res.p_value, "n": res.n, "method": res.method}
        except DegenerateInputError as exc:
            report.pvalues[key] = {"error": f"degenerate: {exc}"}
    return report
