"""DataSeries container and its CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass
class DataSeries:
    x: np.ndarray
    y: np.ndarray
    y_sigma: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.y_sigma is not None:
            self.y_sigma = np.asarray(self.y_sigma, dtype=float).reshape(-1)
            if self.y_sigma.shape != self.y.shape:
                raise ValueError("y_sigma length differs from y")
        if self.x.shape != self.y.shape:
            raise ValueError(f"x and y lengths differ ({self.x.size} vs {self.y.size})")
        if self.x.size > 1 and not np.all(np.diff(self.x) > 0):
            raise ValueError("x must be strictly increasing")

    def __len__(self):
        return self.x.size

    def __eq__(self, other):
        if not isinstance(other, DataSeries):
            return NotImplemented
        sig_eq = (self.y_sigma is None and other.y_sigma is None) or (
            self.y_sigma is not None and other.y_sigma is not None
            and np.array_equal(self.y_sigma, other.y_sigma))
        return (np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and sig_eq and self.meta == other.meta)

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "y": [float(v) for v in self.y],
            "y_sigma": None if self.y_sigma is None else [float(v) for v in self.y_sigma],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataSeries":
        return cls(d["x"], d["y"], d.get("y_sigma"), dict(d.get("meta", {})))


def _fmt(v: float) -> str:
    # repr() gives the shortest string that round-trips a float exactly
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def to_csv(series: DataSeries, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "y_sigma"])
    sig = series.y_sigma if series.y_sigma is not None else [None] * len(series)
    for a, b, s in zip(series.x, series.y, sig):
        w.writerow([_fmt(a), _fmt(b), _fmt(s)])
    return buf.getvalue()


def write_csv(series: DataSeries, path, comments=()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv(series, comments))


def parse_csv(text: str) -> DataSeries:
    """Parse x,y[,y_sigma] CSV; lines starting with '#' are ignored.

    A header row is optional. Ragged or non-numeric rows raise
    ``DataFormatError`` naming the line.
    """
    xs, ys, ss = [], [], []
    ncol = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in next(csv.reader([line]))]
        if cells[0].lower() == "x":
            continue
        if ncol is None:
            ncol = len(cells)
            if ncol not in (2, 3):
                raise DataFormatError(f"line {lineno}: expected 2 or 3 columns, got {ncol}")
        elif len(cells) != ncol:
            raise DataFormatError(
                f"line {lineno}: ragged row ({len(cells)} columns, expected {ncol})")
        try:
            xs.append(float(cells[0]))
            ys.append(float(cells[1]))
            ss.append(float(cells[2]) if ncol == 3 and cells[2] != "" else math.nan)
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric value in {line!r}") from None
    if not xs:
        raise DataFormatError("no data rows found")
    sig = np.array(ss)
    sigma = None if np.all(np.isnan(sig)) else sig
    if sigma is not None and np.any(np.isnan(sigma)):
        raise DataFormatError("y_sigma given for some rows but not others")
    try:
        return DataSeries(xs, ys, sigma)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None


def read_csv(path) -> DataSeries:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_csv(fh.read())
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from None
