"""JSON run report: version, resolved config, data series, fits, timing."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .data import DataFormatError, DataSeries
from .fitting import FitResult

REPORT_KEYS = ("version", "config", "series", "fits", "timing")


@dataclass
class ReportDocument:
    version: str
    config: dict
    series: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    timing: dict | None = None

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "series": {k: v.to_dict() for k, v in self.series.items()},
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "timing": self.timing,
        }

    def to_json(self) -> str:
        # json writes floats with repr, the shortest exact round-trip form
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ReportDocument":
        missing = [k for k in REPORT_KEYS if k not in d]
        if missing:
            raise DataFormatError(f"report lacks key(s) {', '.join(missing)}")
        return cls(d["version"], d["config"],
                   {k: DataSeries.from_dict(v) for k, v in d["series"].items()},
                   {k: FitResult.from_dict(v) for k, v in d["fits"].items()},
                   d["timing"])

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"report is not valid JSON: {exc}") from None

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_json())

    @classmethod
    def read(cls, path) -> "ReportDocument":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise DataFormatError(f"cannot read {path}: {exc}") from None
