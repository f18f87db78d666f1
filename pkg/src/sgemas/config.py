"""Run configuration: a sectioned TOML file mapped onto typed dataclasses.

Grammar (every key optional unless noted; unknown keys are rejected)::

    [run]                 seed
    [engine]              gamma alpha beta alpha_i diffusion_d e_init grad_decay
                          variant instability_scales
    [engine.precision]    eps decay
    [engine.entropy]      window bins
    [plasticity]          e_thresh e_crit eta_learning omega tau_grad tau_flat n_max mode
    [plasticity.spawn]    sensor_sigma regulator_k_p regulator_k_d catalyst_lambda
    [input.synthetic]     total_len (required) amplitude frequency noise_sigma replicates
    [[input.synthetic.segments]]  kind start length intensity
    [input.csv]           path | paths (required) value_column label_column delimiter
                          has_header window_len beat_len
    [eval]                mode variants baseline_gamma
    [output]              dir trace_path report_path format

Exactly one of ``input.synthetic`` / ``input.csv`` must be present.  The run
seed seeds the engine and, for synthetic input, replicate ``i`` uses
``seed + i``.
"""

from __future__ import annotations

import dataclasses
import os
import sys
import typing
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agents import PlasticityParams, SpawnParams
from .engine import EngineParams, EntropyParams, PrecisionParams, Variant
from .errors import ConfigError
from .signal_io import Segment, SyntheticSpec

PRESETS = ("lifecycle", "v33-synthetic", "inertia-ablation", "ablation-v3x")


@dataclass(frozen=True)
class SyntheticInput:
    spec: SyntheticSpec
    replicates: int = 1

    def specs(self, seed: int) -> list[SyntheticSpec]:
        return [self.spec.with_seed(seed + i) for i in range(self.replicates)]


@dataclass(frozen=True)
class CsvInput:
    paths: tuple[str, ...]
    value_column: str | int = 0
    label_column: str | int | None = None
    delimiter: str = ","
    has_header: bool = True
    window_len: int = 3600
    beat_len: int | None = None


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "per-sample"
    variants: tuple[str, ...] = ("v3_0", "v3_1", "v3_2", "v3_3")
    baseline_gamma: float | None = 0.4


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    trace_path: str = "trace.csv"
    report_path: str = "report.json"
    format: str = "csv"


@dataclass(frozen=True)
class RunConfig:
    engine: EngineParams
    input: SyntheticInput | CsvInput
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    source: str = "<memory>"

    @property
    def plasticity(self) -> PlasticityParams:
        return self.engine.plasticity

    def with_overrides(self, seed: int | None = None, out: str | None = None, variant: str | None = None) -> RunConfig:
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=seed, engine=cfg.engine.replace(seed=seed))
        if out is not None:
            cfg = dataclasses.replace(cfg, output=dataclasses.replace(cfg.output, dir=out))
        if variant is not None:
            try:
                v = Variant(variant)
            except ValueError:
                raise ConfigError(f"--variant: unknown variant {variant!r}") from None
            cfg = dataclasses.replace(cfg, engine=cfg.engine.replace(variant=v))
        return cfg


def _check_keys(table: dict, allowed: set[str], where: str) -> None:
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


def _coerce(value: Any, hint: Any, where: str) -> Any:
    origin = typing.get_origin(hint)
    if origin is typing.Union or (sys.version_info >= (3, 10) and origin is getattr(__import__("types"), "UnionType", None)):
        args = typing.get_args(hint)
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{where}: invalid value {value!r}")
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        (item,) = typing.get_args(hint)[:1]
        return tuple(_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(value)
        except ValueError:
            raise ConfigError(f"{where}: invalid value {value!r}") from None
    return value


def _build(cls, table: dict, where: str, nested: dict[str, Any] | None = None, skip: set[str] = frozenset()):
    nested = nested or {}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    _check_keys(table, names, where)
    kwargs = dict(nested)
    for key, value in table.items():
        if key in nested:
            continue
        kwargs[key] = _coerce(value, hints[key], f"{where}.{key}")
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _as_table(obj: Any, where: str) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a table")
    return obj


def parse_config(data: dict, source: str = "<memory>") -> RunConfig:
    _check_keys(data, {"run", "engine", "plasticity", "input", "eval", "output"}, "config")
    run = _as_table(data.get("run"), "run")
    _check_keys(run, {"seed"}, "run")
    seed = _coerce(run.get("seed", 0), int, "run.seed")

    plast = dict(_as_table(data.get("plasticity"), "plasticity"))
    spawn = _build(SpawnParams, _as_table(plast.pop("spawn", None), "plasticity.spawn"), "plasticity.spawn")
    plasticity = _build(PlasticityParams, plast, "plasticity", nested={"spawn": spawn})

    eng = dict(_as_table(data.get("engine"), "engine"))
    precision = _build(PrecisionParams, _as_table(eng.pop("precision", None), "engine.precision"), "engine.precision")
    entropy = _build(EntropyParams, _as_table(eng.pop("entropy", None), "engine.entropy"), "engine.entropy")
    engine = _build(
        EngineParams,
        eng,
        "engine",
        nested={"precision": precision, "entropy": entropy, "plasticity": plasticity, "seed": seed},
        skip={"seed"},
    )

    inp = _as_table(data.get("input"), "input")
    _check_keys(inp, {"synthetic", "csv"}, "input")
    if ("synthetic" in inp) == ("csv" in inp):
        raise ConfigError("input: exactly one of input.synthetic or input.csv is required")
    if "synthetic" in inp:
        syn = dict(_as_table(inp["synthetic"], "input.synthetic"))
        if "total_len" not in syn:
            raise ConfigError("input.synthetic.total_len is required")
        replicates = _coerce(syn.pop("replicates", 1), int, "input.synthetic.replicates")
        if replicates < 1:
            raise ConfigError("input.synthetic.replicates must be >= 1")
        segs = []
        for i, s in enumerate(syn.pop("segments", [])):
            s = _as_table(s, f"input.synthetic.segments[{i}]")
            for req in ("kind", "start", "length"):
                if req not in s:
                    raise ConfigError(f"input.synthetic.segments[{i}].{req} is required")
            segs.append(_build(Segment, s, f"input.synthetic.segments[{i}]"))
        spec = _build(SyntheticSpec, syn, "input.synthetic", nested={"segments": tuple(segs), "seed": seed}, skip={"seed"})
        source_input: SyntheticInput | CsvInput = SyntheticInput(spec, replicates)
    else:
        csv_t = dict(_as_table(inp["csv"], "input.csv"))
        if "path" in csv_t and "paths" in csv_t:
            raise ConfigError("input.csv: give either path or paths, not both")
        if "path" in csv_t:
            csv_t["paths"] = [csv_t.pop("path")]
        if not csv_t.get("paths"):
            raise ConfigError("input.csv.path is required")
        source_input = _build(CsvInput, csv_t, "input.csv")
        base = Path(source).parent if source not in ("<memory>",) and not source.startswith("preset:") else Path(".")
        source_input = dataclasses.replace(
            source_input, paths=tuple(str(base / p) if not os.path.isabs(p) else p for p in source_input.paths)
        )
        if source_input.window_len < 1:
            raise ConfigError("input.csv.window_len must be >= 1")
        if source_input.beat_len is not None and source_input.beat_len < 2:
            raise ConfigError("input.csv.beat_len must be >= 2")

    ev = _build(EvalConfig, _as_table(data.get("eval"), "eval"), "eval")
    if ev.mode not in ("per-sample", "per-beat"):
        raise ConfigError(f"eval.mode must be per-sample or per-beat, got {ev.mode!r}")
    if not ev.variants:
        raise ConfigError("eval.variants must be non-empty")
    for v in ev.variants:
        kind = v.partition("=")[2] or v
        if kind not in {x.value for x in Variant}:
            raise ConfigError(f"eval.variants: unknown variant {kind!r}")
    if ev.baseline_gamma is not None and not 0.0 <= ev.baseline_gamma < 1.0:
        raise ConfigError("eval.baseline_gamma must lie in [0, 1)")
    if ev.mode == "per-beat" and isinstance(source_input, CsvInput) and not source_input.beat_len:
        raise ConfigError("eval.mode = per-beat needs input.csv.beat_len")

    out = _build(OutputConfig, _as_table(data.get("output"), "output"), "output")
    if out.format not in ("csv", "jsonl"):
        raise ConfigError(f"output.format must be csv or jsonl, got {out.format!r}")

    return RunConfig(engine=engine, input=source_input, eval=ev, output=out, seed=seed, source=source)


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("sgemas.presets").joinpath(f"{name}.toml").read_text(encoding="utf-8")


def load_preset(name: str) -> RunConfig:
    return parse_config(tomllib.loads(preset_text(name)), f"preset:{name}")
