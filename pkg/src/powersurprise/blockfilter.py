"""Steady-state block filtering and appliance-event extraction.

The filter replaces the raw signal with the mean level between detected
change-points. A change-point is confirmed once ``min_segment_len``
consecutive samples deviate from the current segment's running level by
more than an adaptive threshold; shorter excursions are treated as
transients and absorbed. Events are the level differences between
consecutive segments that exceed ``event_threshold``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .validation import as_float_array, check_in_range, check_positive, check_positive_int


@dataclass(frozen=True)
class FilterParams:
    """Thresholds for change-point confirmation and event extraction.

    The adaptive change threshold at any sample is
    ``max(abs_threshold, rel_threshold * current running level)``.
    """

    abs_threshold: float = 15.0
    rel_threshold: float = 0.05
    min_segment_len: int = 3
    event_threshold: float = 50.0

    def __post_init__(self):
        check_positive(self.abs_threshold, "abs_threshold")
        check_in_range(self.rel_threshold, "rel_threshold", 0.0, 1.0, include_hi=False)
        check_positive_int(self.min_segment_len, "min_segment_len")
        check_positive(self.event_threshold, "event_threshold")


@dataclass(frozen=True)
class SteadySegment:
    """A maximal run of samples imputed with one mean level."""

    start_index: int
    end_index: int  # inclusive
    level: float

    def __post_init__(self):
        if self.start_index > self.end_index:
            raise ValueError("start_index must be <= end_index")
        if not np.isfinite(self.level):
            raise ValueError("segment level must be finite")

    @property
    def length(self):
        return self.end_index - self.start_index + 1


@dataclass(frozen=True)
class Event:
    """A steady-level transition used as a clustering observation.

    ``feature`` is the vector handed to the mixture model: ``[delta]``
    for feature_dim=1, ``[delta, post_level]`` for feature_dim=2.
    """

    time: float
    delta: float
    post_level: float
    feature: tuple

    @staticmethod
    def from_levels(time, prev_level, post_level, feature_dim):
        delta = post_level - prev_level
        if feature_dim == 1:
            feature = (delta,)
        elif feature_dim == 2:
            feature = (delta, post_level)
        else:
            raise ConfigError(f"feature_dim must be 1 or 2, got {feature_dim!r}")
        return Event(float(time), float(delta), float(post_level), feature)


def events_to_matrix(events):
    """Stack event feature vectors into an (n_events, d) float array."""
    if not events:
        return np.empty((0, 1))
    return np.asarray([e.feature for e in events], dtype=np.float64)


def block_filter(values, params=None):
    """Segment a power signal into steady-state levels.

    Parameters
    ----------
    values : array-like of float
        Raw power samples from one contiguous series segment.
    params : FilterParams, optional

    Returns
    -------
    list of SteadySegment
        Consecutive, non-overlapping, covering every sample. Each
        segment's level is the mean of all its samples, transients
        included.
    """
    params = params or FilterParams()
    x = as_float_array(values, "values", ndim=1)
    if x.size < params.min_segment_len:
        raise InsufficientDataError(
            f"series of {x.size} samples is shorter than "
            f"min_segment_len={params.min_segment_len}")

    segments = []
    seg_start = 0
    # running level over in-segment samples, excluding the pending excursion
    level_sum = x[0]
    level_n = 1
    pending_start = None

    for t in range(1, x.size):
        level = level_sum / level_n
        thresh = max(params.abs_threshold, params.rel_threshold * abs(level))
        if abs(x[t] - level) > thresh:
            if pending_start is None:
                pending_start = t
            if t - pending_start + 1 >= params.min_segment_len:
                segments.append(SteadySegment(
                    seg_start, pending_start - 1,
                    float(np.mean(x[seg_start:pending_start]))))
                seg_start = pending_start
                level_sum = float(np.sum(x[pending_start:t + 1]))
                level_n = t - pending_start + 1
                pending_start = None
        else:
            if pending_start is not None:
                # transient absorbed: fold the excursion into the level
                level_sum += float(np.sum(x[pending_start:t]))
                level_n += t - pending_start
                pending_start = None
            level_sum += x[t]
            level_n += 1

    segments.append(SteadySegment(
        seg_start, x.size - 1, float(np.mean(x[seg_start:]))))
    return segments


def extract_events(segments, params=None, feature_dim=1, timestamps=None):
    """Turn consecutive segment-level differences into events.

    Level changes with magnitude below ``params.event_threshold`` are
    suppressed. With ``timestamps`` given, each event carries the
    timestamp of the first sample of its post-change segment; otherwise
    times are sample indices.
    """
    params = params or FilterParams()
    if len(segments) < 2:
        return []
    events = []
    for prev, cur in zip(segments[:-1], segments[1:]):
        delta = cur.level - prev.level
        if abs(delta) < params.event_threshold:
            continue
        t = cur.start_index if timestamps is None else timestamps[cur.start_index]
        events.append(Event.from_levels(t, prev.level, cur.level, feature_dim))
    return events


def events_from_series(series, params=None, feature_dim=1):
    """Block-filter each gap-separated segment of a series and extract events.

    Gap boundaries never produce events; the per-segment event lists are
    concatenated in time order.
    """
    params = params or FilterParams()
    events = []
    for lo, hi in series.segments():
        if hi - lo < params.min_segment_len:
            continue
        segs = block_filter(series.values[lo:hi], params)
        shifted = [SteadySegment(s.start_index + lo, s.end_index + lo, s.level)
                   for s in segs]
        events.extend(extract_events(
            shifted, params, feature_dim, timestamps=series.timestamps))
    return events


def reconstruct(segments, n_samples):
    """Piecewise-constant signal implied by the segments (for diagnostics)."""
    out = np.empty(n_samples)
    for seg in segments:
        out[seg.start_index:seg.end_index + 1] = seg.level
    return out
