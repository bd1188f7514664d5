"""Divergence kernels, predictive discretization, and surprise traces.

Divergences between the continuous posterior predictives are computed on
a discretized support: the mixture density is evaluated on a regular
grid wide enough to cover every component mean plus eight expected
standard deviations, turned into cell masses, and compared with KL or
Jensen-Shannon divergence (natural log; base 2 available via ``unit``).
"""

import csv
import io
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import dpgmm
from .errors import AbsoluteContinuityError, ConfigError
from .validation import as_float_array, check_positive_int

KL_FLOOR = 1e-300
LN2 = float(np.log(2.0))

DIVERGENCE_KINDS = ("js", "kl")
GRID_PAD_SIGMAS = 8.0


@dataclass(frozen=True)
class GridSpec:
    """Regular 1-D discretization grid over watts."""

    lo: float
    hi: float
    n_points: int = 2048

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ConfigError(f"grid must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        check_positive_int(self.n_points, "n_points", minimum=64)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "n_points", int(self.n_points))

    def points(self):
        return np.linspace(self.lo, self.hi, self.n_points)

    @property
    def cell_width(self):
        return (self.hi - self.lo) / (self.n_points - 1)


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability masses on an ordered support grid."""

    support: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        support = as_float_array(self.support, "support")
        mass = as_float_array(self.mass, "mass")
        if support.shape[0] != mass.shape[0]:
            raise ValueError("support and mass must have equal length")
        if support.ndim == 1 and support.size > 1 and not np.all(np.diff(support) > 0):
            raise ValueError("support must be strictly increasing")
        if np.any(mass < 0):
            raise ValueError("mass has negative entries")
        if abs(mass.sum() - 1.0) > 1e-9:
            raise ValueError(f"mass sums to {mass.sum()!r}, expected 1 within 1e-9")
        support.flags.writeable = False
        mass.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "mass", mass)

    def __len__(self):
        return self.mass.size


def _check_same_support(p, q):
    if p.support.shape != q.support.shape or not np.array_equal(p.support, q.support):
        raise ValueError("distributions must share an identical support")


def mass_kl(p, q, flooring=True):
    """KL(p || q) in nats between two mass arrays on a shared support."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    active = p > 0
    if flooring:
        q = np.maximum(q, KL_FLOOR)
    elif np.any(active & (q == 0)):
        raise AbsoluteContinuityError(
            "KL undefined: q(x) = 0 at a point where p(x) > 0 and flooring "
            "is disabled")
    out = np.zeros_like(p)
    np.divide(p, q, out=out, where=active)
    np.log(out, out=out, where=active)
    return float(np.sum(p[active] * out[active]))


def mass_js(p, q):
    """Jensen-Shannon divergence in nats; bounded by ln 2, symmetric."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    m = 0.5 * (p + q)
    # m > 0 wherever p or q is positive, so no flooring is ever needed
    return float(min(0.5 * (mass_kl(p, m, flooring=False)
                            + mass_kl(q, m, flooring=False)), LN2))


def mass_divergence(kind, p, q, flooring=True):
    """Dispatch on divergence kind for raw mass arrays."""
    if kind == "js":
        return mass_js(p, q)
    if kind == "kl":
        return mass_kl(p, q, flooring=flooring)
    raise ConfigError(f"divergence must be one of {DIVERGENCE_KINDS}, got {kind!r}")


def kl_divergence(p, q, flooring=True, unit="nats"):
    """KL(p || q) between two DiscreteDistributions on the same support.

    Terms with p(x) = 0 contribute nothing. With ``flooring`` (default)
    q is floored at 1e-300 so the result stays finite; disabling it
    raises :class:`AbsoluteContinuityError` when q vanishes where p does
    not.
    """
    _check_same_support(p, q)
    val = mass_kl(p.mass, q.mass, flooring=flooring)
    return val / LN2 if unit == "bits" else val


def js_divergence(p, q, unit="nats"):
    """Jensen-Shannon divergence: mean of the two KLs to the midpoint."""
    _check_same_support(p, q)
    val = mass_js(p.mass, q.mass)
    return val / LN2 if unit == "bits" else val


def required_grid(models, n_points=2048):
    """Smallest GridSpec covering every component mean +- 8 expected sd."""
    lo, hi = np.inf, -np.inf
    for model in models:
        _, means, covs = dpgmm.plugin_components(model)
        sd = np.sqrt(np.einsum("kii->ki", covs)).max(axis=1)
        lo = min(lo, float(np.min(means.min(axis=1) - GRID_PAD_SIGMAS * sd)))
        hi = max(hi, float(np.max(means.max(axis=1) + GRID_PAD_SIGMAS * sd)))
    return GridSpec(lo, hi, n_points)


def _expand_grid(grid, models):
    need = required_grid(models, grid.n_points)
    if need.lo >= grid.lo and need.hi <= grid.hi:
        return grid
    return GridSpec(min(grid.lo, need.lo), max(grid.hi, need.hi), grid.n_points)


def discretize_predictive(model, grid=None, n_points=2048):
    """Evaluate the plug-in predictive on a grid and renormalize to masses.

    The grid is auto-expanded whenever it fails to cover all component
    means plus eight expected standard deviations, keeping divergences
    well-defined when a new model instantiates outlying components.
    Only 1-D models are supported; event features default to the 1-D
    delta representation.
    """
    if model.dim != 1:
        raise ConfigError(
            "discretize_predictive supports 1-D feature models only; "
            "use feature_dim=1 for surprise tracking")
    grid = required_grid([model], n_points) if grid is None \
        else _expand_grid(grid, [model])
    pts = grid.points()
    dens = dpgmm.predictive_density(model, pts.reshape(-1, 1))
    mass = dens * grid.cell_width
    total = mass.sum()
    if total <= 0:
        raise ConfigError("degenerate grid: predictive mass vanished")
    return DiscreteDistribution(pts, mass / total)


def postdictive_surprise(model_before, model_after, grid=None, kind="js",
                         n_points=2048):
    """Divergence between the discretized predictives of two model states.

    Both predictives are evaluated on one shared grid: the given grid
    expanded (or, with ``grid=None``, the smallest grid) to cover the
    union of both models' component supports.
    """
    if model_before.dim != model_after.dim:
        raise ValueError("models must share feature dimension")
    pair = [model_before, model_after]
    shared = required_grid(pair, n_points) if grid is None \
        else _expand_grid(grid, pair)
    p = discretize_predictive(model_before, shared)
    q = discretize_predictive(model_after, shared)
    return mass_divergence(kind, p.mass, q.mass)


# ---------------------------------------------------------------------------
# surprise traces


@dataclass(frozen=True)
class SurpriseTrace:
    """Per-window raw and max-normalized surprise values.

    ``max_*`` hold the running maxima as of each window; ``norm_*`` are
    the raw channels divided by the channel maximum over all windows so
    far (the retroactive renormalization of the running maxima).
    """

    window_index: np.ndarray
    event_index: np.ndarray
    raw_postdictive: np.ndarray
    raw_transitional: np.ndarray
    max_postdictive: np.ndarray
    max_transitional: np.ndarray
    norm_postdictive: np.ndarray
    norm_transitional: np.ndarray

    def __post_init__(self):
        fields = ("window_index", "event_index", "raw_postdictive",
                  "raw_transitional", "max_postdictive", "max_transitional",
                  "norm_postdictive", "norm_transitional")
        n = None
        for name in fields:
            arr = np.asarray(getattr(self, name))
            arr = arr.astype(np.int64) if name.endswith("index") \
                else arr.astype(np.float64)
            arr.flags.writeable = False
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError("trace channels must have equal length")
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.window_index.size


def make_trace(raw_postdictive, raw_transitional, window_events):
    """Assemble a fully renormalized trace from raw channel values."""
    so = as_float_array(raw_postdictive, "raw_postdictive", allow_empty=True)
    st = as_float_array(raw_transitional, "raw_transitional", allow_empty=True)
    if so.shape != st.shape:
        raise ValueError("raw channels must have equal length")
    if np.any(so < 0) or np.any(st < 0):
        raise ValueError("raw surprise values must be nonnegative")
    n = so.size
    idx = np.arange(n, dtype=np.int64)
    trace = SurpriseTrace(
        window_index=idx,
        event_index=(idx + 1) * int(window_events),
        raw_postdictive=so,
        raw_transitional=st,
        max_postdictive=np.maximum.accumulate(so) if n else so,
        max_transitional=np.maximum.accumulate(st) if n else st,
        norm_postdictive=np.zeros(n),
        norm_transitional=np.zeros(n),
    )
    return normalize_trace(trace)


def normalize_trace(trace):
    """Divide each channel by its global maximum (retroactively applied).

    An all-zero channel normalizes to all zeros; callers flag that in
    the run summary.
    """
    def norm(raw):
        peak = raw.max() if raw.size else 0.0
        return raw / peak if peak > 0 else np.zeros_like(raw)

    return replace(
        trace,
        max_postdictive=(np.maximum.accumulate(trace.raw_postdictive)
                         if len(trace) else trace.raw_postdictive),
        max_transitional=(np.maximum.accumulate(trace.raw_transitional)
                          if len(trace) else trace.raw_transitional),
        norm_postdictive=norm(trace.raw_postdictive),
        norm_transitional=norm(trace.raw_transitional),
    )


TRACE_COLUMNS = ("window_index", "event_index", "raw_postdictive",
                 "raw_transitional", "norm_postdictive", "norm_transitional",
                 "max_postdictive", "max_transitional")


def trace_to_rows(trace):
    cols = [getattr(trace, c) for c in TRACE_COLUMNS]
    return [tuple(col[i] for col in cols) for i in range(len(trace))]


def format_trace_csv(trace, header_lines=()):
    """Render the trace as CSV text; floats keep full round-trip precision."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in trace_to_rows(trace):
        writer.writerow([repr(float(v)) if isinstance(v, float) else int(v)
                         for v in row])
    return buf.getvalue()


def parse_trace_csv(text):
    rows = [r for r in csv.reader(io.StringIO(text))
            if r and not r[0].startswith("#")]
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ConfigError("not a trace CSV: header row missing or wrong")
    data = {c: [] for c in TRACE_COLUMNS}
    for r in rows[1:]:
        for c, v in zip(TRACE_COLUMNS, r):
            data[c].append(float(v))
    return SurpriseTrace(**{c: np.asarray(data[c]) for c in TRACE_COLUMNS})


def trace_to_dict(trace):
    return {c: getattr(trace, c).tolist() for c in TRACE_COLUMNS}


def trace_from_dict(payload):
    return SurpriseTrace(**{c: np.asarray(payload[c]) for c in TRACE_COLUMNS})


def write_text_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_trace_csv(trace, path, header_lines=()):
    write_text_atomic(path, format_trace_csv(trace, header_lines))


def write_trace_json(trace, path, meta=None):
    payload = dict(meta or {})
    payload["trace"] = trace_to_dict(trace)
    write_text_atomic(path, json.dumps(payload, indent=1) + "\n")
