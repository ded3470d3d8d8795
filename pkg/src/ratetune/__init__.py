"""Sampling-rate tuning for overlapping classifiers, with a schedule simulator."""

from .inference import (
    Factor,
    FactorGraph,
    InferenceConfig,
    InferenceError,
    InferenceResult,
    apply_min_rate,
    build_factor_graph,
    exact_posterior,
    infer_rates,
)
from .metrics import (
    CONVENTIONAL,
    PAPER_EXACT,
    ConfusionRates,
    check_goals,
    confusion_rates,
    expenses,
    exploitation_probability,
    f1_sr,
    scan_cost,
)
from .model import (
    Classifier,
    ClassifierSet,
    CostModel,
    Goals,
    MinRatePolicy,
    ObservationDataset,
    Sample,
    SamplingVector,
    WeightPolicy,
    apply_weight_policy,
    validate_dataset,
)
from .schedule import generate_schedule, parse_schedule, write_schedule
from .selection import (
    F1SR,
    Batch,
    Budget,
    Expenses,
    Prioritized,
    SelectionProblem,
    SelectionResult,
    partition_batches,
    partition_dataset,
    select_batches,
)
from .simulation import Grid, SimConfig, SimReport, Summary, run_simulation, summarize, sweep
from .traces import SignatureLifecycle, filter_schedule, generate_signature_traces

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
