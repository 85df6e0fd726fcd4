"""Synthetic reference datasets, regenerated from fixed seeds.

Each fixture is a TOML run configuration; ``generate`` writes the config
and the simulated CSV side by side so either can be fed to the CLI.
"""
from __future__ import annotations

from pathlib import Path

from . import __version__, runner
from .config import parse_config
from .data import write_csv

FIXTURES = {
    "odmr_b0": """
[run]
protocol = "odmr"
seed = 101
[ensemble]
noise_sigma = 3e-5
""",
    "rabi_b0": """
[run]
protocol = "rabi"
seed = 102
[pulse]
omega = 10.0
tau_max = 1.0
points = 251
[fit]
model = "damped_cosine"
n_components = 1
""",
    "rabi_24mt": """
[run]
protocol = "rabi"
seed = 103
[spin]
B = 24.0
[pulse]
omega = 10.0
tau_max = 1.0
points = 251
[fit]
model = "damped_cosine"
n_components = 1
""",
    "t1": """
[run]
protocol = "t1"
seed = 104
[pulse]
omega = 50.0
tau_max = 80.0
points = 601
[fit]
model = "exp"
n_components = 1
""",
    "echo_b0": """
[run]
protocol = "echo"
seed = 105
[ensemble]
noise_sigma = 3e-5
[pulse]
omega = 20.0
tau_min = 0.1
tau_max = 0.6
points = 251
[fit]
model = "exp"
n_components = 1
""",
    "ramsey_b0": """
[run]
protocol = "ramsey"
seed = 106
[ensemble]
inhomogeneous_width = 1.4
noise_sigma = 6e-5
background = [-0.002, 0.4, 0.0]
[pulse]
omega = 5.0
tau_max = 1.0
points = 251
[fit]
model = "exp"
n_components = 2
param = "Ta"
""",
    "ramsey_44mt": """
[run]
protocol = "ramsey"
seed = 107
[spin]
B = 44.0
A_par = 45.0
[ensemble]
noise_sigma = 6e-5
background = [-0.003, 0.5, 0.0]
[pulse]
f_mw = 2200.0
omega = 20.0
tau_max = 0.5
points = 251
[fit]
model = "damped_cosine"
n_components = 3
param = "f1"
""",
}


def config(name: str):
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return parse_config(FIXTURES[name])


def generate(outdir, names=None) -> dict:
    """Write ``<name>.toml`` and ``<name>.csv`` for each fixture; returns CSV paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in names or FIXTURES:
        cfg = config(name)
        (out / f"{name}.toml").write_text(FIXTURES[name].lstrip(), encoding="utf-8")
        path = out / f"{name}.csv"
        write_csv(runner.simulate(cfg), path,
                  comments=[f"vbspin {__version__} fixture {name} seed={cfg.seed}"])
        paths[name] = path
    return paths
