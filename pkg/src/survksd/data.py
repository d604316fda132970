"""Right-censored samples and the classical nonparametric estimators."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, EmptyInputError

log = logging.getLogger(__name__)


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CensoredSample:
    """Observed pairs ``(T_i, Delta_i)``.

    ``times`` keeps the caller's order; ``events[i]`` is True when the
    event was observed and False when ``times[i]`` is a censoring time.
    """

    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        events = np.asarray(self.events).reshape(-1)
        if times.size == 0:
            raise EmptyInputError("empty-input: a censored sample needs n >= 1")
        if events.shape != times.shape:
            raise ValueError(
                f"times and events differ in length ({times.size} vs {events.size})"
            )
        if events.dtype != bool:
            if not np.all(np.isin(events, (0, 1))):
                raise ValueError("event indicators must be boolean or 0/1")
            events = events.astype(bool)
        if not np.all(np.isfinite(times)):
            raise ValueError("observed times must be finite")
        if np.any(times < 0):
            raise ValueError("observed times must be nonnegative")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "events", _frozen(events))

    def __len__(self) -> int:
        return self.times.size

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    def censoring_fraction(self) -> float:
        return 1.0 - self.n_events / self.n

    def take(self, index) -> CensoredSample:
        return CensoredSample(self.times[index], self.events[index])

    def __repr__(self) -> str:
        return f"CensoredSample(n={self.n}, events={self.n_events})"


def read_csv(path, time_column: str = "time", status_column: str = "status") -> CensoredSample:
    """Read a ``time,status`` CSV with a header row.

    Extra columns are ignored with a warning.  Errors name the offending
    line (1-based, header is line 1).
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"empty-input: {path} has no header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in (time_column, status_column) if c not in header]
        if missing:
            raise DataFormatError(
                f"{path}: missing required column(s) {', '.join(missing)}"
            )
        extra = [h for h in header if h not in (time_column, status_column)]
        if extra:
            log.warning("ignoring extra columns: %s", ", ".join(extra))
        it, ist = header.index(time_column), header.index(status_column)
        times, events = [], []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                t = float(row[it])
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: time {row[it]!r} is not a number"
                ) from None
            if not np.isfinite(t) or t < 0:
                raise DataFormatError(
                    f"{path}:{lineno}: time must be finite and nonnegative, got {row[it]!r}"
                )
            s = row[ist].strip()
            if s not in ("0", "1"):
                raise DataFormatError(
                    f"{path}:{lineno}: status must be 0 or 1, got {row[ist]!r}"
                )
            times.append(t)
            events.append(s == "1")
    if not times:
        raise EmptyInputError(f"empty-input: {path} has no data rows")
    return CensoredSample(np.array(times), np.array(events, dtype=bool))


def write_csv(sample: CensoredSample, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "status"])
        for t, d in zip(sample.times, sample.events):
            w.writerow([repr(float(t)), int(d)])


class StepFunction:
    """Right-continuous step function: ``values[k]`` holds on ``[knots[k], knots[k+1])``.

    Before the first knot the function equals ``initial``.
    """

    def __init__(self, knots, values, initial: float):
        self.knots = _frozen(np.asarray(knots, dtype=float))
        self.values = _frozen(np.asarray(values, dtype=float))
        self.initial = float(initial)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        table = np.concatenate(([self.initial], self.values))
        out = table[idx + 1]
        return out if out.ndim else float(out)

    def __repr__(self) -> str:
        return f"StepFunction(jumps={self.knots.size})"


class RiskFunction:
    """Number at risk ``Y(t) = #{i : T_i >= t}``."""

    def __init__(self, times):
        self.times = _frozen(np.sort(np.asarray(times, dtype=float)))

    @property
    def n(self) -> int:
        return self.times.size

    def at(self, t):
        t = np.asarray(t, dtype=float)
        out = self.n - np.searchsorted(self.times, t, side="left")
        return out if out.ndim else int(out)

    __call__ = at


def risk_function(sample: CensoredSample) -> RiskFunction:
    return RiskFunction(sample.times)


def _event_table(sample: CensoredSample):
    """Distinct event times with their death counts and risk-set sizes."""
    ev_times, deaths = np.unique(sample.times[sample.events], return_counts=True)
    at_risk = risk_function(sample).at(ev_times)
    return ev_times, deaths, np.asarray(at_risk)


def kaplan_meier(sample: CensoredSample) -> StepFunction:
    """Product-limit estimate of the survival function (tied events aggregated)."""
    if sample.n == 0:
        raise EmptyInputError("empty-input")
    t, d, y = _event_table(sample)
    return StepFunction(t, np.cumprod(1.0 - d / y), initial=1.0)


def nelson_aalen(sample: CensoredSample) -> StepFunction:
    """Nelson-Aalen estimate of the cumulative hazard."""
    if sample.n == 0:
        raise EmptyInputError("empty-input")
    t, d, y = _event_table(sample)
    return StepFunction(t, np.cumsum(d / y), initial=0.0)
