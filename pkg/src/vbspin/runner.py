"""Dispatch a RunConfig to the matching experiment driver."""
from __future__ import annotations

import numpy as np

from . import protocols
from .config import ConfigError, RunConfig
from .data import DataSeries
from .spin_model import branch_center

# (tau_min, tau_max, points, omega) defaults per time-domain protocol
TIME_DEFAULTS = {
    "rabi": (0.0, 1.0, 251, 10.0),
    "t1": (0.0, 80.0, 601, 50.0),
    "echo": (0.1, 0.6, 251, 20.0),
    "ramsey": (0.0, 0.5, 251, 20.0),
}
DEFAULT_FIELDS = (10.0, 20.0, 30.0, 40.0, 50.0)
DEFAULT_POWERS = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0)
ODMR_MARGIN = 250.0
ODMR_POINTS = 601


def tau_grid(cfg: RunConfig) -> np.ndarray:
    t_min, t_max, points, _ = TIME_DEFAULTS[cfg.protocol]
    p = cfg.pulse
    if p.tau_max is not None:
        t_max = p.tau_max
        if p.tau_min is None and t_max < t_min:
            t_min = t_max
    if p.tau_min is not None:
        t_min = p.tau_min
    if t_max < t_min:
        raise ConfigError(f"[pulse] tau_max: {t_max:g} is below tau_min {t_min:g}")
    n = p.points if p.points is not None else points
    if t_max == t_min:
        n = 1
    elif n < 2:
        raise ConfigError("[pulse] points: a range needs at least 2 points")
    return np.linspace(t_min, t_max, n)


def drive(cfg: RunConfig) -> float:
    """Rabi frequency (MHz): explicit omega, else from power, else default."""
    p = cfg.pulse
    if p.omega is not None:
        return float(p.omega)
    if p.power is not None:
        return cfg.power_map().omega(p.power)
    return TIME_DEFAULTS[cfg.protocol][3]


def odmr_grid(cfg: RunConfig) -> np.ndarray:
    spin = cfg.spin_config()
    centres = [branch_center(spin, -1), branch_center(spin, +1)]
    p = cfg.pulse
    lo = p.f_min if p.f_min is not None else min(centres) - ODMR_MARGIN
    hi = p.f_max if p.f_max is not None else max(centres) + ODMR_MARGIN
    if not hi > lo:
        raise ConfigError("[pulse] f_max: must exceed f_min")
    return np.linspace(lo, hi, p.points or ODMR_POINTS)


def simulate(cfg: RunConfig) -> DataSeries:
    """The protocol's data series."""
    spin = cfg.spin_config()
    ens = cfg.ensemble_spec()
    p = cfg.pulse
    proto = cfg.protocol
    if proto == "odmr":
        return protocols.odmr_spectrum(spin, odmr_grid(cfg), ens, cfg.optics_model())
    if proto == "zeeman":
        fields = p.fields if p.fields is not None else DEFAULT_FIELDS
        return protocols.zeeman_scan(spin, fields, ens, cfg.optics_model())
    if proto == "rabi_power":
        powers = p.powers if p.powers is not None else DEFAULT_POWERS
        return protocols.rabi_vs_power(spin, powers, cfg.power_map(), p.f_mw, ens=ens)
    tau = tau_grid(cfg)
    omega = drive(cfg)
    if proto == "rabi":
        return protocols.rabi(spin, p.f_mw, omega, tau, ens)
    if proto == "t1":
        return protocols.t1_experiment(spin, tau, ens, p.f_mw, omega)
    if proto == "echo":
        return protocols.echo_experiment(spin, tau, ens, p.f_mw, omega, p.cycle)
    if proto == "ramsey":
        return protocols.ramsey_experiment(spin, p.f_mw, tau, ens, omega)
    raise ConfigError(f"[run] protocol: unknown protocol {proto!r}")
