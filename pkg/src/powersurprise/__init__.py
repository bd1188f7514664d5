"""Bayesian-surprise tracking for power-meter event streams.

Clusters appliance events in a truncated variational DP Gaussian
mixture, tracks postdictive and transitional surprise per window of
events, and locates the point where further training data stops being
informative via a joint threshold with patience.
"""

__version__ = "0.1.0"

from .blockfilter import Event, FilterParams, SteadySegment, block_filter, extract_events
from .cutoff import CutoffConfig, CutoffResult, DpgmmConfig, run_pipeline, scan
from .dpgmm import (
    MixtureState, NiwParams, assign_states, elbo, expected_weights, fit_update,
    init_model, predictive_density)
from .estimators import DirichletProcessGMM, EventExtractor, SurpriseCutoff
from .ingest import IngestConfig, PowerSeries, load_series, mean_absolute_error, resample
from .markov import TransitionModel, record_transition, transition_row, transitional_surprise_window
from .surprise import (
    DiscreteDistribution, GridSpec, SurpriseTrace, discretize_predictive,
    js_divergence, kl_divergence, normalize_trace, postdictive_surprise)
from .synth import ApplianceSpec, NoveltyEvent, SyntheticSpec, generate

__all__ = [
    "ApplianceSpec", "CutoffConfig", "CutoffResult", "DirichletProcessGMM",
    "DiscreteDistribution", "DpgmmConfig", "Event", "EventExtractor",
    "FilterParams", "GridSpec", "IngestConfig", "MixtureState", "NiwParams",
    "NoveltyEvent", "PowerSeries", "SteadySegment", "SurpriseCutoff",
    "SurpriseTrace", "SyntheticSpec", "TransitionModel", "assign_states",
    "block_filter", "discretize_predictive", "elbo", "expected_weights",
    "extract_events", "fit_update", "generate", "init_model", "js_divergence",
    "kl_divergence", "load_series", "mean_absolute_error", "normalize_trace",
    "postdictive_surprise", "predictive_density", "record_transition",
    "resample", "run_pipeline", "scan", "transition_row",
    "transitional_surprise_window",
]
