"""Windowed surprise pipeline and joint-threshold cutoff location.

Events stream through consecutive, non-overlapping windows of ``w``
events. Each window refits the mixture on the cumulative event set
(warm-started), measures postdictive surprise between the pre- and
post-window predictives, and accumulates transitional surprise over the
window's label transitions. The scan then looks for the earliest window
followed by a full patience run of windows where both max-normalized
channels stay at or below their thresholds.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import dpgmm, markov, surprise
from .blockfilter import FilterParams, events_from_series, events_to_matrix
from .errors import ConfigError, InsufficientDataError
from .validation import check_in_range, check_positive, check_positive_int


@dataclass(frozen=True)
class DpgmmConfig:
    """Hyperparameters of the event mixture, all overridable.

    ``phi_mean=None`` centres the base prior on the first window's mean
    feature, and ``nu=None`` resolves to dim + 2.
    """

    truncation: int = 30
    alpha: float = 1.0
    kappa: float = 0.01
    nu: float = None
    scale_watts: float = 50.0
    phi_mean: float = None
    # absolute ELBO gain below which a window's refit stops; the stream
    # keeps refining on later windows, so this only bounds staleness
    tol: float = 1e-3
    # per-window iteration budget; unfinished slow merges resume at the
    # next window's warm start, so a modest cap keeps streaming cheap
    max_iter: int = 150
    n_init: int = 4

    def __post_init__(self):
        check_positive_int(self.truncation, "truncation", minimum=2)
        check_positive(self.alpha, "alpha")
        check_positive(self.kappa, "kappa")
        check_positive(self.scale_watts, "scale_watts")
        check_positive(self.tol, "tol")
        check_positive_int(self.max_iter, "max_iter")
        check_positive_int(self.n_init, "n_init")

    def base_prior(self, dim, fallback_mean):
        phi = [self.phi_mean] * dim if self.phi_mean is not None else fallback_mean
        return dpgmm.NiwParams.default(
            dim=dim, phi_mean=phi, kappa=self.kappa, nu=self.nu,
            scale_watts=self.scale_watts)


@dataclass(frozen=True)
class CutoffConfig:
    """Windowing, thresholds, and nested module parameters for one run."""

    window_events: int
    seed: int
    patience: int = 100
    thresh_postdictive: float = 0.01
    thresh_transitional: float = 0.05
    divergence: str = "js"
    grid_points: int = 2048
    grid: surprise.GridSpec = None
    smoothing: float = 1.0
    relabel: bool = True
    feature_dim: int = 1
    filter_params: FilterParams = field(default_factory=FilterParams)
    mixture: DpgmmConfig = field(default_factory=DpgmmConfig)

    def __post_init__(self):
        check_positive_int(self.window_events, "window_events")
        check_positive_int(self.patience, "patience")
        check_in_range(self.thresh_postdictive, "thresh_postdictive", 0.0, 1.0)
        check_in_range(self.thresh_transitional, "thresh_transitional", 0.0, 1.0)
        if self.divergence not in surprise.DIVERGENCE_KINDS:
            raise ConfigError(
                f"divergence must be one of {surprise.DIVERGENCE_KINDS}, "
                f"got {self.divergence!r}")
        check_positive_int(self.grid_points, "grid_points", minimum=64)
        check_positive(self.smoothing, "smoothing")
        if self.feature_dim not in (1, 2):
            raise ConfigError("feature_dim must be 1 or 2")
        if int(self.seed) != self.seed:
            raise ConfigError("seed must be an integer")


@dataclass(frozen=True)
class CutoffResult:
    """Scan outcome plus the trace and run bookkeeping."""

    found: bool
    cutoff_window: int = -1
    cutoff_event: int = -1
    cutoff_timestamp: float = float("nan")
    truncated_patience: bool = False
    trace: surprise.SurpriseTrace = None
    summary: dict = field(default_factory=dict)
    model: dpgmm.MixtureState = None


def scan(trace, cfg):
    """Earliest window whose patience run satisfies the joint threshold.

    A window is quiet when both normalized channels are at or below
    their thresholds on the final renormalized trace. The cutoff is the
    start of the first quiet run lasting a full patience; if no run
    completes but the trace ends inside a quiet run, that run's start is
    returned with ``truncated_patience`` set (the last surprising window
    never got outvoted, so its successor stands as the provisional
    cutoff).
    """
    if trace is None or len(trace) == 0:
        raise InsufficientDataError("cannot scan an empty trace")
    quiet = ((trace.norm_postdictive <= cfg.thresh_postdictive)
             & (trace.norm_transitional <= cfg.thresh_transitional))
    run_start = None
    for i in range(quiet.size):
        if quiet[i]:
            if run_start is None:
                run_start = i
            if i - run_start + 1 >= cfg.patience:
                return _result_at(trace, cfg, run_start, truncated=False)
        else:
            run_start = None
    if run_start is not None:  # trace ended inside a quiet run shorter than rho
        return _result_at(trace, cfg, run_start, truncated=True)
    return CutoffResult(found=False, trace=trace)


def _result_at(trace, cfg, window, truncated):
    return CutoffResult(
        found=True,
        cutoff_window=int(trace.window_index[window]),
        cutoff_event=int(trace.event_index[window]),
        truncated_patience=truncated,
        trace=trace,
    )


def scan_online(trace, cfg):
    """Streaming-mode scan: provisional cutoffs plus a revision log.

    Replays the trace window by window, renormalizing to the running
    maxima, and records every change of the provisional cutoff. The
    revision log makes visible how retroactive renormalization can
    invalidate an already-declared provisional cutoff; the final entry
    matches the offline :func:`scan` on the fully renormalized trace.
    """
    if trace is None or len(trace) == 0:
        raise InsufficientDataError("cannot scan an empty trace")
    revisions = []
    current = None
    for t in range(len(trace)):
        partial = surprise.make_trace(
            trace.raw_postdictive[:t + 1], trace.raw_transitional[:t + 1],
            window_events=cfg.window_events)
        res = scan(partial, cfg)
        marker = (res.cutoff_window, res.truncated_patience) if res.found else None
        if marker != current:
            revisions.append({
                "at_window": t,
                "cutoff_window": res.cutoff_window if res.found else None,
                "truncated_patience": res.truncated_patience if res.found else None,
            })
            current = marker
    final = scan(surprise.normalize_trace(trace), cfg)
    return final, revisions


def run_pipeline(series, cfg):
    """Filter, cluster, and score a power series; locate the cutoff.

    Deterministic given the config (which carries the seed). Requires
    at least two full windows of events; trailing events that do not
    fill a window are reported in the summary but not scored.
    """
    if cfg.feature_dim != 1:
        raise ConfigError(
            "surprise tracking operates on 1-D delta features; "
            "feature_dim=2 is available for clustering APIs only")
    events = events_from_series(series, cfg.filter_params, cfg.feature_dim)
    w = cfg.window_events
    n_windows = len(events) // w
    if n_windows < 2:
        raise InsufficientDataError(
            f"{len(events)} events yield {n_windows} windows of {w}; "
            "at least 2 full windows are required")

    X = events_to_matrix(events)
    first_window_mean = X[:w].mean(axis=0)
    prior = cfg.mixture.base_prior(cfg.feature_dim, first_window_mean)
    model = dpgmm.init_model(cfg.mixture.truncation, cfg.mixture.alpha,
                             prior, cfg.seed)

    raw_so = np.empty(n_windows)
    raw_st = np.empty(n_windows)
    frozen_labels = np.empty(0, dtype=np.int64)
    elbo_min_step = np.inf
    for j in range(n_windows):
        hi = (j + 1) * w
        model_before = model
        model = dpgmm.fit_update(model, X[:hi], tol=cfg.mixture.tol,
                                 max_iter=cfg.mixture.max_iter,
                                 n_init=cfg.mixture.n_init)
        if len(model.elbo_trace) > 1:
            elbo_min_step = min(elbo_min_step,
                                float(np.diff(model.elbo_trace).min()))
        raw_so[j] = surprise.postdictive_surprise(
            model_before, model, grid=cfg.grid, kind=cfg.divergence,
            n_points=cfg.grid_points)
        if cfg.relabel:
            labels = dpgmm.assign_states(model, X[:hi])
        else:
            new = dpgmm.assign_states(model, X[hi - w:hi])
            frozen_labels = np.concatenate([frozen_labels, new])
            labels = frozen_labels
        raw_st[j] = markov.transitional_surprise_window(
            labels, n_prior=j * w, window=w - 1,
            n_states=cfg.mixture.truncation, smoothing=cfg.smoothing,
            kind=cfg.divergence)

    trace = surprise.make_trace(raw_so, raw_st, window_events=w)
    result = scan(trace, cfg)
    weights = dpgmm.expected_weights(model)
    summary = {
        "n_samples": len(series),
        "n_gap_segments": len(series.segment_starts),
        "n_events": len(events),
        "n_windows": n_windows,
        "leftover_events": len(events) - n_windows * w,
        "effective_components": int(np.sum(weights > 0.01)),
        "all_zero_postdictive": bool(np.all(raw_so == 0.0)),
        "all_zero_transitional": bool(np.all(raw_st == 0.0)),
        "elbo_min_step": (None if not np.isfinite(elbo_min_step)
                          else elbo_min_step),
    }
    timestamp = float("nan")
    if result.found:
        timestamp = events[result.cutoff_event - 1].time
    return replace(result, cutoff_timestamp=timestamp, summary=summary,
                   model=model)
