"""Loading, validation, and resampling of raw power time series.

The canonical in-memory form is :class:`PowerSeries`: epoch-second
timestamps with uniform spacing inside each analysis segment. Gaps longer
than ``max_gap`` split the series into independent segments (recorded in
``segment_starts``) so that downstream change-point filtering never treats
a meter outage as an appliance event.
"""

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, DataFormatError, InsufficientDataError
from .validation import as_float_array, check_positive

GAP_FILL_MODES = ("forward-fill", "zero-fill", "drop-segment")
NEGATIVE_POLICIES = ("reject", "clamp")


@dataclass(frozen=True)
class PowerSeries:
    """Timestamped power readings in watts.

    Parameters
    ----------
    timestamps : ndarray of float
        Seconds since epoch, strictly increasing.
    values : ndarray of float
        Power readings in watts, finite.
    sample_period : float
        Nominal spacing in seconds; exact within each segment after
        resampling.
    segment_starts : tuple of int
        Indices where independent analysis segments begin (always
        includes 0). Segments are separated by gaps longer than the
        ingest ``max_gap``.
    """

    timestamps: np.ndarray
    values: np.ndarray
    sample_period: float
    segment_starts: tuple = (0,)

    def __post_init__(self):
        ts = as_float_array(self.timestamps, "timestamps", ndim=1)
        vals = as_float_array(self.values, "values", ndim=1)
        if ts.shape != vals.shape:
            raise ValueError("timestamps and values must have equal length")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        check_positive(self.sample_period, "sample_period")
        starts = tuple(int(s) for s in self.segment_starts)
        if not starts or starts[0] != 0 or list(starts) != sorted(set(starts)):
            raise ValueError("segment_starts must be sorted, unique, and begin with 0")
        if starts[-1] >= ts.size:
            raise ValueError("segment_starts index out of range")
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "sample_period", float(self.sample_period))
        object.__setattr__(self, "segment_starts", starts)

    def __len__(self):
        return self.timestamps.size

    def segments(self):
        """Yield (start, stop) index pairs of the independent segments."""
        bounds = list(self.segment_starts) + [len(self)]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            yield lo, hi


@dataclass(frozen=True)
class IngestConfig:
    """Parsing and validation policy for :func:`load_series`.

    ``resample_period=None`` keeps the native sample spacing. ``max_gap``
    is the longest gap (seconds) that will be filled; anything longer
    splits the series. ``negative_policy`` is either ``"reject"`` or
    ``"clamp"`` (clamp-to-zero).
    """

    resample_period: float = None
    gap_fill: str = "forward-fill"
    max_gap: float = 300.0
    negative_policy: str = "clamp"
    timestamp_column: int = 0
    value_column: int = 1
    delimiter: str = None
    header: str = "auto"

    def __post_init__(self):
        if self.resample_period is not None:
            check_positive(self.resample_period, "resample_period")
        check_positive(self.max_gap, "max_gap")
        if self.gap_fill not in GAP_FILL_MODES:
            raise ConfigError(
                f"gap_fill must be one of {GAP_FILL_MODES}, got {self.gap_fill!r}")
        if self.negative_policy not in NEGATIVE_POLICIES:
            raise ConfigError(
                f"negative_policy must be one of {NEGATIVE_POLICIES}, "
                f"got {self.negative_policy!r}")
        if self.resample_period is not None and self.resample_period > self.max_gap:
            raise ConfigError("max_gap must be >= resample_period")


def _parse_timestamp(token, line_no):
    """Accept integer/float epoch seconds or an ISO-8601 datetime."""
    token = token.strip()
    try:
        return float(token)
    except ValueError:
        pass
    try:
        iso = token.replace("Z", "+00:00") if token.endswith("Z") else token
        dt = datetime.fromisoformat(iso)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.timestamp()
    except ValueError:
        raise DataFormatError(
            f"line {line_no}: unparseable timestamp {token!r}") from None


def _parse_value(token, line_no):
    try:
        v = float(token)
    except ValueError:
        raise DataFormatError(
            f"line {line_no}: unparseable power value {token!r}") from None
    if not math.isfinite(v):
        raise DataFormatError(f"line {line_no}: non-finite power value {token!r}")
    return v


def _sniff_delimiter(sample_line):
    if "\t" in sample_line:
        return "\t"
    return ","


def parse_rows(text, cfg):
    """Parse delimited text into raw (timestamps, values) arrays.

    Returns the arrays before any gap handling or resampling. Raises
    :class:`DataFormatError` with a line number on the first bad row.
    """
    lines = text.splitlines()
    first_data = next((ln for ln in lines if ln.strip()), None)
    if first_data is None:
        raise InsufficientDataError("input contains no data rows")
    delim = cfg.delimiter or _sniff_delimiter(first_data)
    reader = csv.reader(io.StringIO(text), delimiter=delim)

    needed = max(cfg.timestamp_column, cfg.value_column) + 1
    times, values, line_nos = [], [], []
    first_row_seen = False
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        is_first = not first_row_seen
        first_row_seen = True
        if is_first and cfg.header is True:
            continue
        if len(row) < needed:
            raise DataFormatError(
                f"line {line_no}: expected at least {needed} columns, got {len(row)}")
        t_tok = row[cfg.timestamp_column]
        v_tok = row[cfg.value_column]
        if is_first and cfg.header == "auto":
            try:
                t = _parse_timestamp(t_tok, line_no)
                v = _parse_value(v_tok, line_no)
            except DataFormatError:
                continue  # unparseable first row is a header
        else:
            t = _parse_timestamp(t_tok, line_no)
            v = _parse_value(v_tok, line_no)
        times.append(t)
        values.append(v)
        line_nos.append(line_no)

    if not times:
        raise InsufficientDataError("input contains no data rows")
    ts = np.asarray(times, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    return ts, vals, line_nos


def _apply_negative_policy(values, line_nos, policy):
    neg = values < 0
    if not neg.any():
        return values
    if policy == "reject":
        bad = int(np.argmax(neg))
        raise DataFormatError(
            f"line {line_nos[bad]}: negative power reading {values[bad]!r} "
            "(negative_policy=reject)")
    return np.where(neg, 0.0, values)


def _fill_gaps(ts, vals, native, cfg):
    """Fill or split gaps, returning padded arrays plus segment starts."""
    out_t = [ts[0]]
    out_v = [vals[0]]
    seg_starts = [0]
    for i in range(1, ts.size):
        dt = ts[i] - ts[i - 1]
        n_missing = int(round(dt / native)) - 1
        if n_missing > 0:
            split = dt > cfg.max_gap * (1 + 1e-9) or cfg.gap_fill == "drop-segment"
            if split:
                seg_starts.append(len(out_t))
            else:
                fill = out_v[-1] if cfg.gap_fill == "forward-fill" else 0.0
                for j in range(1, n_missing + 1):
                    out_t.append(ts[i - 1] + j * native)
                    out_v.append(fill)
        out_t.append(ts[i])
        out_v.append(vals[i])
    return (np.asarray(out_t), np.asarray(out_v), seg_starts)


def load_series(path, cfg=None):
    """Load, validate, and resample a two-column power file.

    Parameters
    ----------
    path : str or pathlib.Path
        Delimited text (comma or tab), columns selectable via cfg.
    cfg : IngestConfig, optional

    Returns
    -------
    PowerSeries
        Uniformly spaced within each segment; gaps longer than
        ``cfg.max_gap`` become segment boundaries.
    """
    cfg = cfg or IngestConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc

    ts, vals, line_nos = parse_rows(text, cfg)
    if ts.size > 1 and not np.all(np.diff(ts) > 0):
        bad = int(np.argmax(np.diff(ts) <= 0)) + 1
        raise DataFormatError(
            f"line {line_nos[bad]}: timestamps not strictly increasing")
    vals = _apply_negative_policy(vals, line_nos, cfg.negative_policy)

    if ts.size == 1:
        native = cfg.resample_period or 1.0
        return PowerSeries(ts, vals, native)

    # native spacing = modal timestamp difference (ties -> smallest), which
    # is robust to gaps dominating the diff distribution in short files
    diffs = np.round(np.diff(ts), 6)
    uniq, counts = np.unique(diffs, return_counts=True)
    native = float(uniq[counts == counts.max()].min())
    ts, vals, seg_starts = _fill_gaps(ts, vals, native, cfg)
    series = PowerSeries(ts, vals, native, tuple(seg_starts))
    if cfg.resample_period is not None and cfg.resample_period != native:
        series = resample(series, cfg.resample_period)
    return series


def resample(series, period):
    """Mean-aggregate a series into uniform bins of width ``period``.

    Bin timestamps are the bin start times, anchored at each segment's
    first sample, which makes the operation idempotent. Upsampling
    (period below the native spacing) is rejected.
    """
    period = check_positive(period, "period")
    if period < series.sample_period * (1 - 1e-9):
        raise ConfigError(
            f"period {period} s is below the native spacing "
            f"{series.sample_period} s; upsampling is not supported")

    out_t, out_v, seg_starts = [], [], []
    for lo, hi in series.segments():
        seg_starts.append(len(out_t))
        t = series.timestamps[lo:hi]
        v = series.values[lo:hi]
        t0 = t[0]
        idx = np.floor((t - t0) / period + 1e-9).astype(np.int64)
        n_bins = int(idx[-1]) + 1
        sums = np.bincount(idx, weights=v, minlength=n_bins)
        counts = np.bincount(idx, minlength=n_bins)
        # interior empty bins (timestamp jitter) take the previous bin's mean
        means = np.empty(n_bins)
        last = v[0]
        for b in range(n_bins):
            if counts[b] > 0:
                last = sums[b] / counts[b]
            means[b] = last
        out_t.extend(t0 + period * np.arange(n_bins))
        out_v.extend(means)

    return PowerSeries(
        np.asarray(out_t), np.asarray(out_v), period, tuple(seg_starts))


def mean_absolute_error(pred, truth):
    """Mean absolute error in watts between two equal-length sequences."""
    p = as_float_array(pred, "pred", ndim=1)
    t = as_float_array(truth, "truth", ndim=1)
    if p.shape != t.shape:
        raise ValueError(
            f"length mismatch: pred has {p.size} samples, truth has {t.size}")
    if p.size == 0:
        raise InsufficientDataError("mean_absolute_error needs at least one sample")
    return float(np.mean(np.abs(p - t)))
