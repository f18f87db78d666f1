"""Command-line entry point: ``sgemas simulate|detect|evaluate|ablate``.

Every command loads and validates the whole config, computes all results in
memory, and only then writes its artifacts (each one atomically).  Exit
status: 0 on success, 2 for configuration errors, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import PRESETS, CsvInput, RunConfig, SyntheticInput, load_config, load_preset
from .engine import TRACE_FIELDS, EngineParams, TraceRecord, flop_estimate, run_stream
from .errors import ConfigError, ParseError, SchemaError, StreamError, UndefinedAUCError
from .evaluation import (
    AblationReport,
    StreamInput,
    baseline_beat_scores,
    engine_beat_scores,
    leaky_baseline_run,
    phase_trace_export,
    roc_auc,
    roc_curve,
    run_ablation,
)
from .signal_io import (
    SignalFrame,
    generate_synthetic,
    load_csv_series,
    rolling_zscore,
    segment_beats,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


# ---------------------------------------------------------------- formatting

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def trace_csv(records: Sequence[TraceRecord]) -> str:
    return _csv_text(TRACE_FIELDS, ([getattr(r, f) for f in TRACE_FIELDS] for r in records))


def trace_jsonl(records: Sequence[TraceRecord]) -> str:
    return "".join(json.dumps({f: getattr(r, f) for f in TRACE_FIELDS}) + "\n" for r in records)


def phase_csv(records: Sequence[TraceRecord]) -> str:
    pts = phase_trace_export(records)
    return _csv_text(("step", "entropy", "energy", "label"), ((p.step, p.entropy, p.energy, p.label) for p in pts))


def roc_csv(points) -> str:
    return _csv_text(("threshold", "fpr", "tpr"), points)


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_all(artifacts: dict[Path, str]) -> None:
    for path, text in artifacts.items():
        write_atomic(path, text)


# ---------------------------------------------------------------- inputs

@dataclass
class Stream:
    stream_id: str
    frames: list[SignalFrame]

    @property
    def labeled(self) -> bool:
        return bool(self.frames) and all(f.label is not None for f in self.frames)


def _suffix(cfg: RunConfig, i: int, name: str) -> str:
    return name if _n_streams(cfg) == 1 else f"{Path(name).stem}-{i}{Path(name).suffix}"


def _n_streams(cfg: RunConfig) -> int:
    if isinstance(cfg.input, SyntheticInput):
        return cfg.input.replicates
    return len(cfg.input.paths)


def load_streams(cfg: RunConfig) -> list[Stream]:
    if isinstance(cfg.input, SyntheticInput):
        return [
            Stream(f"synthetic-{spec.seed}", list(generate_synthetic(spec)))
            for spec in cfg.input.specs(cfg.seed)
        ]
    ci: CsvInput = cfg.input
    out = []
    for path in ci.paths:
        try:
            raw = list(load_csv_series(path, ci.value_column, ci.label_column, ci.delimiter, ci.has_header))
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}", exc.row) from None
        except SchemaError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        out.append(Stream(Path(path).stem, list(rolling_zscore(raw, ci.window_len))))
    return out


def _beat_len(cfg: RunConfig) -> int | None:
    return cfg.input.beat_len if isinstance(cfg.input, CsvInput) else None


def _out(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.output.dir) / name


def _trace_text(cfg: RunConfig, records) -> str:
    return trace_jsonl(records) if cfg.output.format == "jsonl" else trace_csv(records)


def _trace_name(cfg: RunConfig, i: int) -> str:
    name = cfg.output.trace_path
    if cfg.output.format == "jsonl" and name.endswith(".csv"):
        name = name[:-4] + ".jsonl"
    return _suffix(cfg, i, name)


def _check_output_dir(cfg: RunConfig) -> None:
    d = Path(cfg.output.dir)
    probe = d
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise ConfigError(f"output.dir: {d} is not writable")


# ---------------------------------------------------------------- commands

def lifecycle_summary(records: Sequence[TraceRecord]) -> dict:
    n = np.array([r.n_agents for r in records])
    flops = np.array([r.flops_step for r in records], dtype=float)
    labels = [r.label for r in records]
    out = {
        "steps": len(records),
        "peak_n": int(n.max()) if len(n) else 0,
        "peak_step": int(n.argmax()) if len(n) else None,
        "final_energy": records[-1].energy if records else None,
        **flop_estimate(records),
    }
    if labels and all(lab is not None for lab in labels):
        lab = np.array(labels, dtype=bool)
        out["flops_per_sample_quiescent"] = float(flops[~lab].mean()) if (~lab).any() else None
        out["flops_per_sample_anomalous"] = float(flops[lab].mean()) if lab.any() else None
    return out


def cmd_simulate(cfg: RunConfig) -> int:
    if not isinstance(cfg.input, SyntheticInput):
        raise ConfigError("simulate needs an input.synthetic section")
    _check_output_dir(cfg)
    artifacts: dict[Path, str] = {}
    summaries = []
    for i, stream in enumerate(load_streams(cfg)):
        records = run_stream(cfg.engine, stream.frames)
        artifacts[_out(cfg, _trace_name(cfg, i))] = _trace_text(cfg, records)
        artifacts[_out(cfg, _suffix(cfg, i, "phase.csv"))] = phase_csv(records)
        s = {"stream_id": stream.stream_id, **lifecycle_summary(records)}
        summaries.append(s)
    report = {"command": "simulate", "variant": cfg.engine.variant.value, "seed": cfg.seed, "runs": summaries}
    artifacts[_out(cfg, cfg.output.report_path)] = json_text(report)
    write_all(artifacts)
    for s in summaries:
        print(
            f"{s['stream_id']}: steps={s['steps']} peak_n={s['peak_n']} "
            f"final_E={s['final_energy']:.4f} flops_total={s['flops_total']}"
        )
    return EXIT_OK


def _score_units(cfg: RunConfig, stream: Stream, params: EngineParams):
    """Engine scores and labels at the configured granularity."""
    beat_len = _beat_len(cfg)
    if cfg.eval.mode == "per-beat" or beat_len:
        if not beat_len:
            raise ConfigError("per-beat scoring needs input.csv.beat_len")
        beats = segment_beats(stream.frames, beat_len)
        return beats, engine_beat_scores(params, beats), [b.label for b in beats]
    records = run_stream(params, stream.frames)
    return None, [r.score for r in records], [f.label for f in stream.frames]


def cmd_detect(cfg: RunConfig) -> int:
    if not isinstance(cfg.input, CsvInput):
        raise ConfigError("detect needs an input.csv section")
    _check_output_dir(cfg)
    artifacts = {}
    lines = []
    for i, stream in enumerate(load_streams(cfg)):
        beats, scores, labels = _score_units(cfg, stream, cfg.engine)
        unit = "beat" if beats is not None else "step"
        rows = ((k, s, lab) for k, (s, lab) in enumerate(zip(scores, labels)))
        artifacts[_out(cfg, _suffix(cfg, i, "scores.csv"))] = _csv_text((unit, "score", "label"), rows)
        lines.append(f"{stream.stream_id}: {len(scores)} {unit}s scored" + ("" if any(l is not None for l in labels) else " (unlabeled)"))
    write_all(artifacts)
    print("\n".join(lines))
    return EXIT_OK


def _read_scores(path: str) -> tuple[list[float], list[bool]]:
    scores, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "score" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise SchemaError(f"{path}: expected score and label columns")
        for row in reader:
            if row["label"] == "":
                raise ConfigError(f"{path}: scores file has no labels; evaluation needs labeled input")
            scores.append(float(row["score"]))
            labels.append(row["label"] == "1")
    return scores, labels


def evaluate_scores(scores, labels) -> dict:
    return {"auc": roc_auc(scores, labels), "n_pos": int(sum(labels)), "n_neg": int(len(labels) - sum(labels))}


def cmd_evaluate(cfg: RunConfig, scores_path: str | None = None) -> int:
    _check_output_dir(cfg)
    artifacts = {}
    if scores_path is not None:
        scores, labels = _read_scores(scores_path)
        res = evaluate_scores(scores, labels)
        artifacts[_out(cfg, "roc.csv")] = roc_csv(roc_curve(scores, labels))
        artifacts[_out(cfg, cfg.output.report_path)] = json_text({"command": "evaluate", "scores": scores_path, **res})
        write_all(artifacts)
        print(f"{scores_path}: auc={res['auc']:.4f} n_pos={res['n_pos']} n_neg={res['n_neg']}")
        return EXIT_OK

    streams = load_streams(cfg)
    for s in streams:
        if not s.labeled:
            raise ConfigError(f"{s.stream_id}: input has no labels; evaluation needs labeled input")
    results = []
    lines = []
    for i, stream in enumerate(streams):
        beats, scores, labels = _score_units(cfg, stream, cfg.engine)
        entry = {"stream_id": stream.stream_id, "engine": evaluate_scores(scores, labels)}
        artifacts[_out(cfg, _suffix(cfg, i, "roc.csv"))] = roc_csv(roc_curve(scores, labels))
        line = f"{stream.stream_id}: engine_auc={entry['engine']['auc']:.4f}"
        if cfg.eval.baseline_gamma is not None:
            if beats is not None:
                b_scores = baseline_beat_scores(cfg.eval.baseline_gamma, beats)
            else:
                b_scores = [r.score for r in leaky_baseline_run(cfg.eval.baseline_gamma, stream.frames)]
            entry["baseline"] = {"gamma": cfg.eval.baseline_gamma, **evaluate_scores(b_scores, labels)}
            artifacts[_out(cfg, _suffix(cfg, i, "roc_baseline.csv"))] = roc_csv(roc_curve(b_scores, labels))
            line += f" baseline_auc={entry['baseline']['auc']:.4f}"
        results.append(entry)
        lines.append(line)
    report = {
        "command": "evaluate",
        "pipeline": {
            "mode": "per-beat" if _beat_len(cfg) else "per-sample",
            "score": "negative_energy",
            "variant": cfg.engine.variant.value,
        },
        "seed": cfg.seed,
        "streams": results,
    }
    artifacts[_out(cfg, cfg.output.report_path)] = json_text(report)
    write_all(artifacts)
    print("\n".join(lines))
    return EXIT_OK


def ablation_table_csv(report: AblationReport) -> str:
    rows = ((c.variant, c.stream_id, c.auc, c.n_pos, c.n_neg) for c in report.cells)
    return _csv_text(("variant", "stream_id", "auc", "n_pos", "n_neg"), rows)


def build_ablation(cfg: RunConfig, workers: int = 1) -> AblationReport:
    streams = load_streams(cfg)
    if len(streams) < 2:
        raise ConfigError("ablate needs at least 2 streams (input.synthetic.replicates or input.csv.paths)")
    for s in streams:
        if not s.labeled:
            raise ConfigError(f"{s.stream_id}: input has no labels; ablation needs labeled input")
    beat_len = _beat_len(cfg)
    items = []
    for s in streams:
        if beat_len:
            items.append(StreamInput(s.stream_id, beats=segment_beats(s.frames, beat_len)))
        else:
            items.append(StreamInput(s.stream_id, frames=s.frames))
    return run_ablation(cfg.engine, items, cfg.eval.variants, base_seed=cfg.seed, workers=workers)


def cmd_ablate(cfg: RunConfig, workers: int = 1) -> int:
    _check_output_dir(cfg)
    report = build_ablation(cfg, workers)
    report_path = _out(cfg, cfg.output.report_path)
    write_all({
        report_path: json_text(report.to_dict()),
        report_path.with_suffix(".csv"): ablation_table_csv(report),
    })
    for name in report.variants:
        s = report.summary[name]
        mean = "n/a" if s["mean_auc"] is None else f"{s['mean_auc']:.4f}"
        std = "n/a" if s["std_auc"] is None else f"{s['std_auc']:.4f}"
        print(f"{name}: mean_auc={mean} std={std} n={s['n_streams']}")
    for key, block in report.pvalues.items():
        print(f"{key}: " + (f"p={block['p_value']:.4g} ({block['method']})" if "p_value" in block else block["error"]))
    for c in report.failed_cells:
        print(f"failed cell {c.variant}/{c.stream_id}: {c.error}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def resolve_config(ref: str) -> RunConfig:
    """Load a config file, or a shipped preset when ``ref`` names one."""
    if ref in PRESETS and not Path(ref).exists():
        return load_preset(ref)
    return load_config(ref)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgemas", description="Metabolic agent-population anomaly detector.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "run the engine on synthetic input and write the trace"),
        ("detect", "score CSV input per sample or per beat"),
        ("evaluate", "AUC and ROC points for engine (and baseline) scores"),
        ("ablate", "v3_0..v3_3 sweep with paired Wilcoxon tests"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help=f"TOML config path or preset ({', '.join(PRESETS)})")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override output.dir")
        if name != "ablate":
            p.add_argument("--variant", choices=["v3_0", "v3_1", "v3_2", "v3_3"], help="override engine.variant")
        if name == "evaluate":
            p.add_argument("--scores", help="evaluate an existing scores CSV instead of running the engine")
        if name == "ablate":
            p.add_argument("--workers", type=int, default=1, help="parallel sweep cells")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.config).with_overrides(args.seed, args.out, getattr(args, "variant", None))
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "detect":
            return cmd_detect(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.scores)
        return cmd_ablate(cfg, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, SchemaError, StreamError, UndefinedAUCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
