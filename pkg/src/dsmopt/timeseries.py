"""Exogenous time series aligned to a fixed scheduling grid.

Series files are plain UTF-8 CSV with a ``step,value`` header and one row per
step. Nothing here resamples: a file must already be aligned to the grid's
step length.
"""

from __future__ import annotations

import enum
import io
import math
import re
from dataclasses import dataclass
from typing import Iterable, TextIO

MINUTES_PER_DAY = 24 * 60
MAX_FRACTION_DIGITS = 9

_NUMBER_RE = re.compile(r"^[+-]?(\d+)(\.(\d*))?$")
_CLOCK_RE = re.compile(r"^(\d{1,2}):(\d{2})$")


class TimeSeriesError(ValueError):
    """Base class for series loading and validation failures."""


class RowCountMismatch(TimeSeriesError):
    pass


class MalformedRow(TimeSeriesError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class InvalidValue(TimeSeriesError):
    pass


class NegativeValue(InvalidValue):
    pass


class OffGridLabel(TimeSeriesError):
    pass


class OutOfHorizon(TimeSeriesError):
    pass


class Unit(str, enum.Enum):
    PRICE = "currency/kWh"
    KW = "kW"
    FRACTION = "fraction"
    BINARY = "binary"


@dataclass(frozen=True)
class TimeGrid:
    delta_t_hours: float
    num_steps: int
    start_label: str = "00:00"

    def __post_init__(self):
        if not (self.delta_t_hours > 0 and math.isfinite(self.delta_t_hours)):
            raise ValueError(f"delta_t_hours must be positive, got {self.delta_t_hours}")
        if int(self.num_steps) != self.num_steps or self.num_steps < 1:
            raise ValueError(f"num_steps must be a positive integer, got {self.num_steps}")
        parse_clock(self.start_label)

    @property
    def horizon_hours(self) -> float:
        return self.delta_t_hours * self.num_steps

    def boundary_label(self, k: int) -> str:
        """Wall-clock label of step boundary ``k`` (display only)."""
        minutes = parse_clock(self.start_label) + k * self.delta_t_hours * 60
        minutes = int(round(minutes)) % MINUTES_PER_DAY
        return f"{minutes // 60:02d}:{minutes % 60:02d}"


@dataclass(frozen=True)
class Series:
    name: str
    unit: Unit
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "unit", Unit(self.unit))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        for i, v in enumerate(self.values):
            _check_value(v, self.unit, f"{self.name}[{i}]")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, t: int) -> float:
        return self.values[t]

    def __iter__(self):
        return iter(self.values)


def _check_value(value: float, unit: Unit, where: str) -> None:
    if not math.isfinite(value):
        raise InvalidValue(f"{where}: non-finite value {value!r}")
    if unit in (Unit.KW, Unit.FRACTION) and value < 0:
        raise NegativeValue(f"{where}: negative value {value!r} not allowed for unit {unit.value}")
    if unit is Unit.FRACTION and value > 1:
        raise InvalidValue(f"{where}: fraction {value!r} exceeds 1")
    if unit is Unit.BINARY and value not in (0.0, 1.0):
        raise InvalidValue(f"{where}: binary series value must be 0 or 1, got {value!r}")


def parse_decimal(text: str) -> float:
    """Parse a plain decimal literal (no exponent, no separators, <= 9 fraction digits)."""
    m = _NUMBER_RE.match(text.strip())
    if m is None:
        raise ValueError(f"not a decimal number: {text!r}")
    if m.group(3) is not None and len(m.group(3)) > MAX_FRACTION_DIGITS:
        raise ValueError(f"more than {MAX_FRACTION_DIGITS} fractional digits: {text!r}")
    return float(text)


def format_decimal(value: float) -> str:
    text = f"{value:.{MAX_FRACTION_DIGITS}f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def load_series(source: TextIO | str, grid: TimeGrid, *, name: str = "series",
                unit: Unit | str = Unit.KW) -> Series:
    """Read a ``step,value`` file and check it against ``grid``.

    ``source`` may be an open text stream or the file's content as a string.
    Row ``i`` must carry step index ``i``; the row count must equal
    ``grid.num_steps`` exactly.
    """
    unit = Unit(unit)
    text = source if isinstance(source, str) else source.read()
    lines = [ln for ln in text.splitlines()]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines or lines[0].strip().replace(" ", "") != "step,value":
        raise MalformedRow(1, "expected header 'step,value'")

    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 2:
            raise MalformedRow(lineno, f"expected 2 columns, got {len(cells)}")
        step_text, value_text = (c.strip() for c in cells)
        if step_text != str(len(values)):
            raise MalformedRow(lineno, f"expected step {len(values)}, got {step_text!r}")
        try:
            value = parse_decimal(value_text)
        except ValueError as exc:
            raise MalformedRow(lineno, str(exc)) from None
        _check_value(value, unit, f"{name} row {lineno}")
        values.append(value)

    if len(values) != grid.num_steps:
        raise RowCountMismatch(f"{name}: {len(values)} rows, grid has {grid.num_steps} steps")
    return Series(name, unit, tuple(values))


def write_series(series: Series, stream: TextIO | None = None) -> str:
    buf = io.StringIO()
    buf.write("step,value\n")
    for i, v in enumerate(series.values):
        buf.write(f"{i},{format_decimal(v)}\n")
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def constant_series(value: float, unit: Unit | str, grid: TimeGrid, *, name: str = "constant") -> Series:
    return Series(name, Unit(unit), (float(value),) * grid.num_steps)


def series_from_values(values: Iterable[float], unit: Unit | str, grid: TimeGrid, *,
                       name: str = "series") -> Series:
    values = tuple(float(v) for v in values)
    if len(values) != grid.num_steps:
        raise RowCountMismatch(f"{name}: {len(values)} values, grid has {grid.num_steps} steps")
    return Series(name, Unit(unit), values)


def parse_clock(label: str) -> int:
    """Minutes after midnight for an ``HH:MM`` label; ``24:00`` is allowed."""
    m = _CLOCK_RE.match(label.strip())
    if m is None:
        raise OffGridLabel(f"not a wall-clock label: {label!r}")
    hours, minutes = int(m.group(1)), int(m.group(2))
    if minutes >= 60 or hours > 24 or (hours == 24 and minutes):
        raise OffGridLabel(f"not a wall-clock label: {label!r}")
    return hours * 60 + minutes


def step_of_clock(label: str, grid: TimeGrid) -> int:
    """Index of the step boundary that falls on ``label``.

    Boundary ``k`` sits after step ``k - 1``; so with 30-minute steps starting
    at midnight, ``"07:30"`` maps to 15. Labels earlier than the grid start are
    read as belonging to the following day.
    """
    offset = parse_clock(label) - parse_clock(grid.start_label)
    if offset < 0:
        offset += MINUTES_PER_DAY
    step_minutes = grid.delta_t_hours * 60
    k = offset / step_minutes
    if abs(k - round(k)) > 1e-9:
        raise OffGridLabel(f"{label} is not on a {step_minutes:g}-minute boundary from {grid.start_label}")
    k = int(round(k))
    if k > grid.num_steps:
        raise OutOfHorizon(f"{label} is boundary {k}, horizon has {grid.num_steps} steps")
    return k
