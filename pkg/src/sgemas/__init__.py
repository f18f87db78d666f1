"""Online anomaly detection with an energy-regulated agent population."""

from .agents import AgentKind, AgentPopulation, PlasticityParams, SpawnParams
from .config import RunConfig, load_config, load_preset
from .engine import Engine, EngineParams, TraceRecord, Variant, run_stream, score_beat
from .errors import (
    ConfigError,
    DegenerateInputError,
    ParseError,
    SchemaError,
    StreamError,
    UndefinedAUCError,
)
from .evaluation import leaky_baseline_run, roc_auc, run_ablation, wilcoxon_signed_rank
from .signal_io import Segment, SignalFrame, SyntheticSpec, generate_synthetic, load_csv_series

__version__ = "0.1.0"
