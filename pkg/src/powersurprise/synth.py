"""Synthetic labeled power streams for validation.

Each appliance is a semi-Markov state machine: states carry a steady
power level, dwell times are shifted-geometric around a mean, and the
next state follows a row-stochastic transition matrix. The aggregate
signal is the sum of active appliances plus Gaussian noise. A novelty
schedule can add an appliance or replace one's definition mid-stream,
which is how new-component and transition-structure injections are
produced for testing.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .ingest import PowerSeries
from .validation import check_positive, check_positive_int


@dataclass(frozen=True)
class ApplianceSpec:
    """One appliance's state machine."""

    name: str
    levels: tuple
    mean_dwell: tuple
    transitions: tuple
    min_dwell: int = 3
    initial_state: int = 0

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if not levels or not all(np.isfinite(levels)):
            raise ConfigError(f"{self.name}: levels must be finite and non-empty")
        n = len(levels)
        dwell = tuple(float(v) for v in self.mean_dwell)
        if len(dwell) != n or any(v < self.min_dwell for v in dwell):
            raise ConfigError(
                f"{self.name}: mean_dwell needs {n} entries >= min_dwell")
        check_positive_int(self.min_dwell, "min_dwell")
        rows = np.asarray(self.transitions, dtype=np.float64)
        if rows.shape != (n, n) or np.any(rows < 0) or np.any(rows.sum(axis=1) <= 0):
            raise ConfigError(
                f"{self.name}: transitions must be a nonnegative {n}x{n} "
                "matrix with normalizable rows")
        if not 0 <= self.initial_state < n:
            raise ConfigError(f"{self.name}: initial_state out of range")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "mean_dwell", dwell)
        object.__setattr__(
            self, "transitions",
            tuple(tuple(r / r.sum()) for r in rows))

    @property
    def n_states(self):
        return len(self.levels)

    @staticmethod
    def on_off(name, watts, mean_dwell_on, mean_dwell_off, min_dwell=3):
        """Two-state toggling appliance."""
        return ApplianceSpec(
            name=name,
            levels=(0.0, float(watts)),
            mean_dwell=(float(mean_dwell_off), float(mean_dwell_on)),
            transitions=((0.0, 1.0), (1.0, 0.0)),
            min_dwell=min_dwell,
        )

    @staticmethod
    def from_dict(d):
        return ApplianceSpec(
            name=d["name"],
            levels=tuple(d["levels"]),
            mean_dwell=tuple(d["mean_dwell"]),
            transitions=tuple(tuple(r) for r in d["transitions"]),
            min_dwell=int(d.get("min_dwell", 3)),
            initial_state=int(d.get("initial_state", 0)),
        )


@dataclass(frozen=True)
class NoveltyEvent:
    """A scheduled structural change: add or replace an appliance."""

    at_sample: int
    action: str
    appliance: ApplianceSpec
    target: str = None

    def __post_init__(self):
        if self.action not in ("add", "replace"):
            raise ConfigError(f"action must be add|replace, got {self.action!r}")
        if self.at_sample < 0:
            raise ConfigError("at_sample must be nonnegative")

    @staticmethod
    def from_dict(d):
        return NoveltyEvent(
            at_sample=int(d["at_sample"]),
            action=d["action"],
            appliance=ApplianceSpec.from_dict(d["appliance"]),
            target=d.get("target"),
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Full stream description."""

    appliances: tuple
    n_samples: int
    sample_period: float = 1.0
    noise_std: float = 2.0
    base_load: float = 0.0
    novelty: tuple = ()

    def __post_init__(self):
        check_positive_int(self.n_samples, "n_samples")
        check_positive(self.sample_period, "sample_period")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        object.__setattr__(self, "appliances", tuple(self.appliances))
        object.__setattr__(self, "novelty", tuple(self.novelty))

    @staticmethod
    def from_dict(d):
        return SyntheticSpec(
            appliances=tuple(ApplianceSpec.from_dict(a) for a in d["appliances"]),
            n_samples=int(d["n_samples"]),
            sample_period=float(d.get("sample_period", 1.0)),
            noise_std=float(d.get("noise_std", 2.0)),
            base_load=float(d.get("base_load", 0.0)),
            novelty=tuple(NoveltyEvent.from_dict(n) for n in d.get("novelty", ())),
        )


class _Machine:
    """Running state of one appliance during simulation."""

    def __init__(self, spec, rng):
        self.spec = spec
        self.state = spec.initial_state
        self.remaining = self._draw_dwell(rng)

    def _draw_dwell(self, rng):
        mean = self.spec.mean_dwell[self.state]
        lo = self.spec.min_dwell
        if mean <= lo:
            return lo
        # shifted geometric: support lo, lo+1, ..., mean exactly `mean`
        return lo - 1 + int(rng.geometric(1.0 / (mean - lo + 1)))

    def step(self, rng):
        self.remaining -= 1
        if self.remaining <= 0:
            row = np.asarray(self.spec.transitions[self.state])
            self.state = int(rng.choice(row.size, p=row))
            self.remaining = self._draw_dwell(rng)

    @property
    def level(self):
        return self.spec.levels[self.state]


def generate(spec, seed):
    """Simulate the stream; returns (PowerSeries, per-sample joint labels).

    Joint labels are stable integer ids of the tuple of appliance states
    (per appliance name, in first-seen order). Deterministic given
    (spec, seed).
    """
    rng = np.random.default_rng(seed)
    machines = {a.name: _Machine(a, rng) for a in spec.appliances}
    schedule = sorted(spec.novelty, key=lambda n: n.at_sample)
    next_event = 0

    values = np.empty(spec.n_samples)
    joint_ids = np.empty(spec.n_samples, dtype=np.int64)
    id_map = {}
    noise = rng.normal(0.0, spec.noise_std, spec.n_samples) \
        if spec.noise_std > 0 else np.zeros(spec.n_samples)

    for t in range(spec.n_samples):
        while next_event < len(schedule) and schedule[next_event].at_sample == t:
            ev = schedule[next_event]
            if ev.action == "add":
                if ev.appliance.name in machines:
                    raise ConfigError(f"appliance {ev.appliance.name} already active")
                machines[ev.appliance.name] = _Machine(ev.appliance, rng)
            else:
                target = ev.target or ev.appliance.name
                if target not in machines:
                    raise ConfigError(f"cannot replace unknown appliance {target}")
                del machines[target]
                machines[ev.appliance.name] = _Machine(ev.appliance, rng)
            next_event += 1

        if t > 0:
            for m in machines.values():
                m.step(rng)
        key = tuple((name, m.state) for name, m in machines.items())
        joint_ids[t] = id_map.setdefault(key, len(id_map))
        values[t] = spec.base_load + sum(m.level for m in machines.values())

    values = np.maximum(values + noise, 0.0)
    timestamps = spec.sample_period * np.arange(spec.n_samples)
    return PowerSeries(timestamps, values, spec.sample_period), joint_ids
