"""Right-censored samples and the Kaplan-Meier estimator.

Weights are computed with the product form

    W_i = (d_i / n) * prod_{j < i} (1 + (1 - d_j) / (n - j))

over the order statistics, which never divides by an estimated survival
curve and so stays well defined when the curve reaches zero.
"""

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import CsvFormatError, EmptySample, NonPositiveTime


class CensoredObservation(NamedTuple):
    """One observed pair: ``time = min(T, C)`` and ``event = (T <= C)``."""

    time: float
    event: bool


def _frozen(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CensoredSample:
    """Observations sorted by time, uncensored before censored at ties."""

    times: np.ndarray
    events: np.ndarray

    @property
    def n(self):
        return int(self.times.size)

    @property
    def n_events(self):
        return int(np.count_nonzero(self.events))

    @property
    def observations(self):
        return [CensoredObservation(float(t), bool(e)) for t, e in zip(self.times, self.events)]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, CensoredSample):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.events, other.events))

    __hash__ = None

    @classmethod
    def from_arrays(cls, times, events):
        """Validate and sort raw arrays (see :func:`sort_censored`)."""
        times = np.asarray(times, dtype=float).ravel()
        events = np.asarray(events).ravel().astype(bool)
        if times.size == 0:
            raise EmptySample("a censored sample needs at least one observation")
        if times.shape != events.shape:
            raise ValueError("times and events must have the same length")
        if not np.all(times > 0) or not np.all(np.isfinite(times)):
            bad = times[~((times > 0) & np.isfinite(times))][0]
            raise NonPositiveTime(f"observation times must be finite and > 0, got {bad!r}")
        # lexsort is stable: the last key is primary
        order = np.lexsort((~events, times))
        return cls(_frozen(times[order]), _frozen(events[order]))


def sort_censored(raw: Iterable) -> CensoredSample:
    """Order raw ``(time, event)`` pairs with the tie rule applied.

    Sorting is stable on ``(time, censored)``: at equal times uncensored
    entries precede censored ones and each group keeps its input order.

    >>> sort_censored([(2, 1), (1, 0), (1, 1)]).observations
    [CensoredObservation(time=1.0, event=True), CensoredObservation(time=1.0, event=False), CensoredObservation(time=2.0, event=True)]
    """
    raw = list(raw)
    if not raw:
        raise EmptySample("a censored sample needs at least one observation")
    times = [float(t) for t, _ in raw]
    events = [bool(e) for _, e in raw]
    return CensoredSample.from_arrays(times, events)


@dataclass(frozen=True, eq=False)
class KaplanMeierFit:
    """Kaplan-Meier weights aligned with the order statistics of ``sample``."""

    sample: CensoredSample
    weights: np.ndarray
    cumulative: np.ndarray

    @property
    def times(self):
        return self.sample.times

    @property
    def events(self):
        return self.sample.events

    @property
    def n(self):
        return self.sample.n

    @property
    def tau_n(self):
        return float(self.sample.times[-1])

    @property
    def total_mass(self):
        return float(self.cumulative[-1])

    def cdf(self, t):
        return km_eval(self, t)

    def survival(self, t):
        return 1.0 - km_eval(self, t)

    def event_support(self):
        """Times and weights of the uncensored observations only."""
        mask = self.sample.events
        return self.sample.times[mask], self.weights[mask]


def km_fit(sample: CensoredSample) -> KaplanMeierFit:
    n = sample.n
    d = sample.events.astype(float)
    # factor j (1-based) = 1 + (1 - d_j)/(n - j), for j = 1..n-1
    j = np.arange(1, n)
    factors = 1.0 + (1.0 - d[:-1]) / (n - j)
    prefix = np.concatenate([[1.0], np.cumprod(factors)])
    weights = d / n * prefix
    return KaplanMeierFit(sample, _frozen(weights), _frozen(np.cumsum(weights)))


def km_eval(fit: KaplanMeierFit, t):
    """Right-continuous step function ``F_n(t)``; scalar in, float out."""
    t_arr = np.asarray(t, dtype=float)
    k = np.searchsorted(fit.times, t_arr, side="right")
    padded = np.concatenate([[0.0], fit.cumulative])
    out = padded[k]
    return float(out) if out.ndim == 0 else out


def at_risk(sample: CensoredSample, t):
    """Number of observations with time >= t."""
    k = np.searchsorted(sample.times, np.asarray(t, dtype=float), side="left")
    out = sample.n - k
    return int(out) if np.ndim(out) == 0 else out


def diagonal_term(fit: KaplanMeierFit, kernel) -> float:
    """Sum of ``K(X_i, X_i) W_i**2``.

    Multiply by ``n`` to compare with its large-sample limit
    ``int K(x, x) / (1 - G(x-)) dF(x)``.
    """
    x, w = fit.event_support()
    if x.size == 0:
        return 0.0
    return float(np.sum(np.asarray(kernel(x, x), dtype=float) * w * w))


def read_csv(path) -> CensoredSample:
    """Read a ``time,event`` CSV file with a header row.

    Errors name the offending line number (the header is line 1).
    """
    times, events = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, expected header 'time,event'") from None
        if [h.strip().lower() for h in header] != ["time", "event"]:
            raise CsvFormatError(f"{path}:1: expected header 'time,event', got {','.join(header)!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise CsvFormatError(f"{path}:{line}: expected 2 columns, got {len(row)}")
            try:
                t = float(row[0])
            except ValueError:
                raise CsvFormatError(f"{path}:{line}: time {row[0]!r} is not a number") from None
            e = row[1].strip()
            if e not in ("0", "1"):
                raise CsvFormatError(f"{path}:{line}: event must be 0 or 1, got {row[1]!r}")
            if not (t > 0 and np.isfinite(t)):
                raise CsvFormatError(f"{path}:{line}: time must be finite and > 0, got {row[0]!r}")
            times.append(t)
            events.append(e == "1")
    if not times:
        raise EmptySample(f"{path}: no observations")
    return CensoredSample.from_arrays(times, events)


def write_csv(sample: CensoredSample, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event"])
        for t, e in zip(sample.times, sample.events):
            w.writerow([repr(float(t)), int(e)])
