"""Run configuration: a TOML file with [run], [spin], [ensemble], [optics],
[pulse], [fit] and [sweep] tables, plus command-line overrides.

Unknown tables or keys are rejected with the line they appear on.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .evolution import OpticalRateModel
from .protocols import EnsembleSpec, PowerMap
from .spin_model import SpinSystemConfig

PROTOCOLS = ("odmr", "zeeman", "rabi", "rabi_power", "t1", "echo", "ramsey")

# default fit model and the parameter a sweep summarises, per protocol
DEFAULT_FITS = {
    "odmr": ("lorentzian", 2, "x0_1"),
    "zeeman": ("linear", 1, "slope"),
    "rabi": ("damped_cosine", 1, "f1"),
    "rabi_power": ("linear", 1, "slope"),
    "t1": ("exp", 1, "T"),
    "echo": ("exp", 1, "T"),
    "ramsey": ("exp", 2, "Ta"),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the table, key and line."""


@dataclass
class PulseParams:
    """Protocol parameters. Times in us, frequencies in MHz, power in mW."""

    f_mw: float | None = None
    omega: float | None = None
    power: float | None = None
    kappa: float = 5.0
    tau_min: float | None = None
    tau_max: float | None = None
    points: int | None = None
    f_min: float | None = None
    f_max: float | None = None
    fields: list | None = None
    powers: list | None = None
    cycle: bool = True


@dataclass
class FitParams:
    model: str | None = None
    n_components: int = 1
    param: str | None = None


@dataclass
class SweepParams:
    variable: str | None = None
    values: list | None = None
    workers: int = 1


@dataclass
class RunConfig:
    protocol: str = "rabi"
    seed: int = 0
    out: str = "out"
    spin: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    optics: dict = field(default_factory=dict)
    pulse: PulseParams = field(default_factory=PulseParams)
    fit: FitParams = field(default_factory=FitParams)
    sweep: SweepParams = field(default_factory=SweepParams)

    # -- resolved physics objects ------------------------------------------
    def spin_config(self) -> SpinSystemConfig:
        return SpinSystemConfig(**_tupled(self.spin))

    def ensemble_spec(self) -> EnsembleSpec:
        return EnsembleSpec(**{"seed": self.seed, **_tupled(self.ensemble)})

    def optics_model(self) -> OpticalRateModel:
        return OpticalRateModel(**self.optics)

    def power_map(self) -> PowerMap:
        return PowerMap(self.pulse.kappa)

    def fit_choice(self) -> tuple[str, int, str]:
        model, n, param = DEFAULT_FITS[self.protocol]
        if self.fit.model is not None:
            model, n = self.fit.model, self.fit.n_components
            param = self.fit.param or param
        elif self.fit.param:
            param = self.fit.param
        return model, n, param

    def validate(self) -> "RunConfig":
        """Build every physics object once so bad values fail early."""
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"[run] protocol: unknown protocol {self.protocol!r}; "
                              f"choose from {', '.join(PROTOCOLS)}")
        for name, build in (("spin", self.spin_config), ("ensemble", self.ensemble_spec),
                            ("optics", self.optics_model), ("pulse", self.power_map)):
            try:
                build()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}] {exc}") from None
        p = self.pulse
        if p.points is not None and p.points < 1:
            raise ConfigError("[pulse] points: must be >= 1")
        if p.tau_max is not None and p.tau_max < 0:
            raise ConfigError("[pulse] tau_max: must be >= 0")
        if p.power is not None and p.power < 0:
            raise ConfigError("[pulse] power: must be >= 0")
        if p.omega is not None and p.omega < 0:
            raise ConfigError("[pulse] omega: must be >= 0")
        if self.fit.n_components not in (1, 2, 3):
            raise ConfigError("[fit] n_components: must be 1, 2 or 3")
        if self.sweep.workers < 1:
            raise ConfigError("[sweep] workers: must be >= 1")
        return self

    def to_dict(self) -> dict:
        """Fully resolved echo of the configuration, defaults included."""
        return {
            "run": {"protocol": self.protocol, "seed": self.seed, "out": self.out},
            "spin": dataclasses.asdict(self.spin_config()),
            "ensemble": dataclasses.asdict(self.ensemble_spec()),
            "optics": self.optics_model().as_dict(),
            "pulse": dataclasses.asdict(self.pulse),
            "fit": dataclasses.asdict(self.fit),
            "sweep": dataclasses.asdict(self.sweep),
        }


def _tupled(d: dict) -> dict:
    # TOML arrays arrive as lists; the frozen dataclasses expect tuples
    return {k: tuple(tuple(v) if isinstance(v, list) else v for v in val)
            if isinstance(val, list) else val for k, val in d.items()}


_TABLE_FIELDS = {
    "run": {"protocol", "seed", "out"},
    "spin": {f.name for f in fields(SpinSystemConfig)},
    "ensemble": {f.name for f in fields(EnsembleSpec)} - {"seed"},
    "optics": set(OpticalRateModel().as_dict()),
    "pulse": {f.name for f in fields(PulseParams)},
    "fit": {f.name for f in fields(FitParams)},
    "sweep": {f.name for f in fields(SweepParams)},
}


def _line_of(text: str, table: str | None, key: str) -> int | None:
    """Best-effort line number of ``key`` (inside ``[table]`` if given)."""
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\[\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if table is None and current == key:
                return no
            continue
        if current == table and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return None


def _where(text, table, key):
    no = _line_of(text, table, key)
    return f"line {no}: " if no else ""


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    cfg = RunConfig()
    for table, body in doc.items():
        if table not in _TABLE_FIELDS:
            raise ConfigError(f"{_where(text, None, table)}unknown table [{table}]; "
                              f"allowed: {', '.join(_TABLE_FIELDS)}")
        if not isinstance(body, dict):
            raise ConfigError(f"{_where(text, None, table)}'{table}' must be a table")
        for key in body:
            if key not in _TABLE_FIELDS[table]:
                raise ConfigError(f"{_where(text, table, key)}unknown key '{key}' in "
                                  f"[{table}]; allowed: {', '.join(sorted(_TABLE_FIELDS[table]))}")
    run = doc.get("run", {})
    cfg.protocol = run.get("protocol", cfg.protocol)
    cfg.seed = run.get("seed", cfg.seed)
    cfg.out = run.get("out", cfg.out)
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError(f"{_where(text, 'run', 'seed')}[run] seed: must be an integer")
    cfg.spin = dict(doc.get("spin", {}))
    cfg.ensemble = dict(doc.get("ensemble", {}))
    cfg.optics = dict(doc.get("optics", {}))
    try:
        cfg.pulse = PulseParams(**doc.get("pulse", {}))
        cfg.fit = FitParams(**doc.get("fit", {}))
        cfg.sweep = SweepParams(**doc.get("sweep", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    try:
        return cfg.validate()
    except ConfigError as exc:
        msg = str(exc)
        m = re.match(r"^\[(\w+)\] (\w+):", msg)
        if m:
            msg = _where(text, m.group(1), m.group(2)) + msg
        raise ConfigError(msg) from None


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def apply_overrides(cfg: RunConfig, **over) -> RunConfig:
    """Command-line overrides; ``None`` values leave the config unchanged."""
    cfg = dataclasses.replace(cfg, spin=dict(cfg.spin),
                              pulse=dataclasses.replace(cfg.pulse),
                              fit=dataclasses.replace(cfg.fit),
                              sweep=dataclasses.replace(cfg.sweep))
    if over.get("protocol") is not None:
        cfg.protocol = over["protocol"]
    if over.get("seed") is not None:
        cfg.seed = over["seed"]
    if over.get("out") is not None:
        cfg.out = over["out"]
    if over.get("B") is not None:
        cfg.spin["B"] = over["B"]
    for key in ("f_mw", "omega", "power", "tau_max", "points"):
        if over.get(key) is not None:
            setattr(cfg.pulse, key, over[key])
    if over.get("model") is not None:
        cfg.fit.model = over["model"]
    if over.get("n_components") is not None:
        cfg.fit.n_components = over["n_components"]
    return cfg.validate()
