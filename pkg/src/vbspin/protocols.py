"""Experiment drivers: ODMR, Zeeman scan, Rabi, T1, Hahn echo and Ramsey.

Every driver simulates one defect per (nuclear configuration, detuning
node) and averages with ``ensemble_average``. Times are in us, frequencies
in MHz, fields in mT, powers in mW.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from . import fitting
from .data import DataSeries
from .evolution import OpticalRateModel, odmr_contrast
from .sequence import (Laser, Microwave, PulseSequence, Readout, Sweep, Wait, run_sequence,
                       sequence_span)
from .spin_model import (NuclearConfiguration, SpinSystemConfig, _branch_energies,
                         branch_center, build_hamiltonian, nuclear_configurations,
                         nuclear_sectors)


@dataclass(frozen=True)
class EnsembleSpec:
    """How single-defect traces are averaged and decorated.

    ``inhomogeneous_width`` (Gaussian sigma of the line detuning, MHz)
    defaults to the config's field-dependent table. ``noise_sigma`` defaults
    to 1% of ``c_max``; pass 0 for noiseless output. ``background`` is the
    additive (b, T_b, c) term b*exp(-t/T_b) + c for time-domain protocols.
    ``linewidth`` is the homogeneous CW ODMR FWHM, default 1/(pi*T2).
    ``method`` selects the pulsed solver ("exact" or "rk4"); ``dt`` fixes
    the rk4 step (us), which is refused when too coarse.
    """

    nuclear_average: bool = True
    inhomogeneous_width: float | None = None
    n_quadrature: int = 16
    noise_sigma: float | None = None
    background: tuple = (0.0, 1.0, 0.0)
    seed: int = 0
    c_max: float = 0.03
    polarization: float = 1.0
    linewidth: float | None = None
    full_quantum: bool = False
    sampling: str = "quadrature"
    use_sectors: bool = True
    method: str = "exact"
    dt: float | None = None

    def __post_init__(self):
        if self.n_quadrature < 1:
            raise ValueError("n_quadrature must be >= 1")
        if self.inhomogeneous_width is not None and self.inhomogeneous_width < 0:
            raise ValueError("inhomogeneous_width must be >= 0")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.linewidth is not None and self.linewidth <= 0:
            raise ValueError("linewidth must be positive")
        if self.sampling not in ("quadrature", "monte_carlo"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.method not in ("exact", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        b = tuple(float(v) for v in self.background)
        if len(b) != 3 or b[1] <= 0:
            raise ValueError("background must be (b, T_b > 0, c)")
        object.__setattr__(self, "background", b)

    @property
    def noise_level(self) -> float:
        return 0.01 * self.c_max if self.noise_sigma is None else self.noise_sigma

    def width(self, cfg: SpinSystemConfig) -> float:
        if self.inhomogeneous_width is not None:
            return self.inhomogeneous_width
        return cfg.inhomogeneous_width()

    def with_(self, **changes) -> "EnsembleSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class PowerMap:
    """Rabi frequency = kappa * sqrt(P); kappa in MHz/sqrt(mW)."""

    kappa: float = 5.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    def omega(self, power: float) -> float:
        if power < 0:
            raise ValueError(f"microwave power must be >= 0, got {power}")
        return self.kappa * math.sqrt(power)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _meta(name, cfg, ens, **params):
    return _jsonable({"protocol": name, "config": asdict(cfg),
                      "ensemble": asdict(ens) if ens is not None else None,
                      "params": params})


def detuning_nodes(width: float, ens: EnsembleSpec, t_span: float | None = None):
    """(detunings, weights) for a Gaussian of standard deviation ``width``.

    Gauss-Hermite nodes are used while they can resolve the phases a time
    trace of length ``t_span`` accumulates (up to 2*2*pi*width*t_span, the
    factor 2 covering the opposite shift of the other branch). Beyond that a
    uniform trapezoidal rule over +-5 sigma is cheaper and avoids the false
    revivals of a sparse node set; its spacing 1/(2*t_span + 1/width) keeps
    the first alias below exp(-2 pi^2).
    """
    if width == 0:
        return np.zeros(1), np.ones(1)
    if ens.sampling == "monte_carlo":
        z = np.random.default_rng([ens.seed, 7]).standard_normal(ens.n_quadrature)
        return width * z, np.full(ens.n_quadrature, 1.0 / ens.n_quadrature)
    n = ens.n_quadrature
    if t_span:
        kappa = 4.0 * math.pi * width * t_span
        # empirical node count for ~1e-8 accuracy on E[cos(kappa z)]
        n_gh = math.ceil(0.26 * kappa**2 + 3.0 * kappa + 6.0)
        if n_gh > n:
            n_uniform = math.ceil(20.0 * width * t_span + 10.0) + 1
            if n_uniform < n_gh:
                z = np.linspace(-5.0, 5.0, max(n_uniform, n))
                w = np.exp(-0.5 * z**2)
                return width * z, w / w.sum()
            n = n_gh
    z, w = np.polynomial.hermite_e.hermegauss(n)
    return width * z, w / math.sqrt(2 * math.pi)


def nuclear_nodes(cfg: SpinSystemConfig, ens: EnsembleSpec, full_quantum: bool):
    if full_quantum:
        return [None]
    if not ens.nuclear_average:
        return [NuclearConfiguration((0,) * cfg.n_nuclei, 1.0)]
    return nuclear_sectors(cfg.n_nuclei) if ens.use_sectors else nuclear_configurations(cfg.n_nuclei)


def ensemble_average(kernel: Callable, x, cfg: SpinSystemConfig, ens: EnsembleSpec,
                     time_axis: bool = True, meta: dict | None = None,
                     full_quantum: bool = False, t_span: float | None = None) -> DataSeries:
    """Weighted sum of ``kernel(nuclear, detunings)`` over the ensemble.

    ``kernel`` receives an array of detunings and returns one row per
    detuning. The sum runs over nuclear configurations (outer) and detuning
    nodes (inner) in a fixed order. For time-domain data the background term
    is added, then seeded Gaussian noise.
    """
    x = np.asarray(x, float)
    shifts, ws = detuning_nodes(ens.width(cfg), ens, t_span)
    y = np.zeros_like(x)
    for nuc in nuclear_nodes(cfg, ens, full_quantum):
        wn = 1.0 if nuc is None else nuc.weight
        rows = np.asarray(kernel(nuc, shifts), float).reshape(len(shifts), -1)
        y = y + wn * (ws @ rows)
    return _decorate(x, y, ens, time_axis, meta)


def _decorate(x, y, ens, time_axis, meta):
    if time_axis:
        b, tb, c = ens.background
        y = y + b * np.exp(-x / tb) + c
    sigma = None
    if ens.noise_level > 0:
        rng = np.random.default_rng([ens.seed, 1])
        y = y + rng.normal(0.0, ens.noise_level, size=y.shape)
        sigma = np.full_like(y, ens.noise_level)
    return DataSeries(x, y, sigma, meta or {})


def _check_grid(grid, name="tau_grid"):
    g = np.asarray(grid, float).reshape(-1)
    if g.size == 0:
        raise ValueError(f"{name} is empty")
    if g.size > 1 and not np.all(np.diff(g) > 0):
        raise ValueError(f"{name} must be strictly increasing")
    return g


def _pulsed(name, cfg, ens, seq, x, combine=None, t_span=None, **params):
    """Ensemble-averaged contrast of ``seq``.

    ``combine`` optionally lists (coefficient, sequence) pairs whose
    contrasts are summed instead, as in phase-cycled readout. ``t_span``
    overrides the time over which detuning phases accumulate.
    """
    ens = ens or EnsembleSpec()
    fq = ens.full_quantum or cfg.A_perp > 0
    terms = combine or [(1.0, seq)]

    def kernel(nuc, shifts):
        out = 0.0
        for coef, sq in terms:
            out = out + coef * run_sequence(sq, cfg, nuc, full_quantum=fq,
                                            polarization=ens.polarization,
                                            c_max=ens.c_max, local_shift=shifts,
                                            method=ens.method, dt=ens.dt)
        return out

    return ensemble_average(kernel, x, cfg, ens, meta=_meta(name, cfg, ens, **params),
                            full_quantum=fq,
                            t_span=coherent_span(seq, cfg) if t_span is None else t_span)


def coherent_span(seq: PulseSequence, cfg: SpinSystemConfig) -> float:
    """Time over which detuning phases matter: the sequence length, capped
    at 12*T2 since older coherences have decayed below 1e-5."""
    return min(sequence_span(seq), 12.0 * cfg.T2)


def resonance(cfg: SpinSystemConfig) -> float:
    """Centre of the m_s=0 <-> lower-branch hyperfine comb."""
    return branch_center(cfg, -1)


# --------------------------------------------------------------------------
# CW ODMR

def odmr_spectrum(cfg: SpinSystemConfig, f_grid, ens: EnsembleSpec | None = None,
                  optics: OpticalRateModel | None = None) -> DataSeries:
    """CW ODMR contrast versus microwave frequency.

    Each defect mixes m_s=0 with its two branch levels at a Lorentzian rate
    (FWHM = ens.linewidth, peak = optics.mw_rate); the rate model converts
    that into fluorescence. Contrast is scaled so that fully saturating
    both transitions gives -c_max.
    """
    ens = ens or EnsembleSpec()
    optics = optics or OpticalRateModel()
    f = _check_grid(f_grid, "f_grid")
    gamma = ens.linewidth if ens.linewidth is not None else 1.0 / (math.pi * cfg.T2)
    hw2 = (0.5 * gamma) ** 2
    full = float(odmr_contrast(optics, 1e12, 1e12))
    scale = 0.0 if full == 0 else ens.c_max / abs(full)
    secular = cfg.with_(A_perp=0.0)

    width = ens.width(cfg)
    if width > 0:
        # dense uniform grid: Gauss-Hermite nodes are far too sparse when the
        # Gaussian is much wider than the Lorentzian line
        n = max(ens.n_quadrature, int(math.ceil(10.0 * width / (0.25 * gamma))) + 1)
        shifts = np.linspace(-5.0 * width, 5.0 * width, n)
        weights = np.exp(-0.5 * (shifts / width) ** 2)
        weights /= weights.sum()
    else:
        shifts, weights = np.zeros(1), np.ones(1)
    y = np.zeros_like(f)
    for nuc in nuclear_nodes(cfg, ens, False):
        lines = np.array([_branch_energies(build_hamiltonian(secular, nuc, local_shift=d))
                          for d in shifts])
        f_lo = (lines[:, 1] - lines[:, 0])[:, None]
        f_hi = (lines[:, 2] - lines[:, 0])[:, None]
        w_minus = optics.mw_rate * hw2 / ((f - f_lo) ** 2 + hw2)
        w_plus = optics.mw_rate * hw2 / ((f - f_hi) ** 2 + hw2)
        y = y + nuc.weight * (weights @ (scale * odmr_contrast(optics, w_minus, w_plus)))
    meta = _meta("odmr", cfg, ens, optics=optics.as_dict(), linewidth=gamma)
    return _decorate(f, y, ens, False, meta)


def zeeman_scan(cfg: SpinSystemConfig, B_list, ens: EnsembleSpec | None = None,
                optics: OpticalRateModel | None = None, span: float = 180.0,
                points: int = 361) -> DataSeries:
    """Fitted lower-branch dip centre versus field."""
    ens = ens or EnsembleSpec()
    bs = _check_grid(B_list, "B_list")
    if np.any(bs < 0):
        raise ValueError("fields must be >= 0")
    centres, errs = [], []
    for i, b in enumerate(bs):
        c_b = cfg.with_(B=float(b))
        lo = branch_center(c_b, -1)
        hi = branch_center(c_b, +1)
        e_b = ens.with_(seed=ens.seed + i)
        if hi - lo < span:
            grid = np.linspace(lo - span, hi + span, 2 * points)
            spec = odmr_spectrum(c_b, grid, e_b, optics)
            model = fitting.model_lorentzian_sum(2)
            res = fitting.nlls_fit(model, spec, _two_dip_guess(spec, lo, hi))
            k = 2 if res["x0_1"] < res["x0_2"] else 5
        else:
            grid = np.linspace(lo - span, lo + span, points)
            spec = odmr_spectrum(c_b, grid, e_b, optics)
            res = fitting.nlls_fit(fitting.model_lorentzian_sum(1), spec,
                                   _one_dip_guess(spec, lo))
            k = 2
        centres.append(res.values[k])
        errs.append(res.errors[k])
    return DataSeries(bs, centres, errs, _meta("zeeman_scan", cfg, ens, span=span,
                                              points=points))


def _one_dip_guess(spec, centre):
    base = float(np.median(spec.y))
    depth = float(np.min(spec.y) - base)
    return [base, depth, centre, 0.3 * float(np.ptp(spec.x))]


def _two_dip_guess(spec, lo, hi):
    base = float(np.max(spec.y))
    depth = float(np.min(spec.y) - base)
    w = max(hi - lo, 20.0)
    return [base, depth, lo, w, depth, hi, w]


def fit_g_factor(scan: DataSeries) -> tuple[float, float, fitting.FitResult]:
    """Linear fit of line position versus B; returns (g, sigma_g, fit)."""
    res = fitting.nlls_fit(fitting.model_linear(), scan)
    g = fitting.g_from_slope(res["slope"])
    return g, res.stderr["slope"] / fitting.MU_B_MHZ_PER_MT, res


# --------------------------------------------------------------------------
# pulsed protocols

def rabi(cfg: SpinSystemConfig, f_mw: float | None = None, omega: float = 10.0,
         tau_grid=None, ens: EnsembleSpec | None = None) -> DataSeries:
    """Laser, microwave pulse of length tau, readout."""
    tau = _check_grid(np.linspace(0, 1, 501) if tau_grid is None else tau_grid)
    if tau[0] < 0:
        raise ValueError("pulse lengths must be >= 0")
    f_mw = resonance(cfg) if f_mw is None else f_mw
    seq = PulseSequence([Laser(), Microwave(0.0, f_mw, omega), Readout()],
                        [Sweep(1, "duration", tau)])
    return _pulsed("rabi", cfg, ens, seq, tau, f_mw=f_mw, omega=omega)


def fit_rabi(series: DataSeries, n: int = 1, background: bool = True) -> fitting.FitResult:
    """Sum of n damped cosines from several automatic starting points."""
    return fitting.fit_named("damped_cosine" if background else "damped_cosine_nobg",
                             series, n)


def rabi_vs_power(cfg: SpinSystemConfig, P_list, pmap: PowerMap | None = None,
                  f_mw: float | None = None, tau_grid=None,
                  ens: EnsembleSpec | None = None) -> DataSeries:
    """Fitted Rabi frequency versus sqrt(P)."""
    pmap = pmap or PowerMap()
    ens = ens or EnsembleSpec()
    ps = _check_grid(P_list, "P_list")
    if np.any(ps < 0):
        raise ValueError("microwave power must be >= 0")
    freqs, errs = [], []
    for i, p in enumerate(ps):
        om = pmap.omega(p)
        if om == 0:
            freqs.append(0.0)
            errs.append(0.0)
            continue
        grid = tau_grid if tau_grid is not None else np.linspace(0, 6.0 / om, 301)
        trace = rabi(cfg, f_mw, om, grid, ens.with_(seed=ens.seed + i))
        res = fit_rabi(trace)
        freqs.append(res["f1"])
        errs.append(res.stderr["f1"])
    return DataSeries(np.sqrt(ps), freqs, errs,
                      _meta("rabi_vs_power", cfg, ens, kappa=pmap.kappa,
                            powers=ps.tolist()))


def pi_pulse(omega: float) -> float:
    return 0.5 / omega


def t1_experiment(cfg: SpinSystemConfig, tau_grid, ens: EnsembleSpec | None = None,
                  f_mw: float | None = None, omega: float = 50.0) -> DataSeries:
    """Laser, pi pulse, wait tau, readout.

    The default drive is strong so the pi pulse inverts most of the
    broadened zero-field line; a weak pulse leaves little contrast to fit.
    """
    tau = _check_grid(tau_grid)
    f_mw = resonance(cfg) if f_mw is None else f_mw
    seq = PulseSequence([Laser(), Microwave(pi_pulse(omega), f_mw, omega), Wait(0.0),
                         Readout()], [Sweep(2, "duration", tau)])
    return _pulsed("t1", cfg, ens, seq, tau, f_mw=f_mw, omega=omega)


def echo_experiment(cfg: SpinSystemConfig, tau_grid, ens: EnsembleSpec | None = None,
                    f_mw: float | None = None, omega: float = 20.0,
                    cycle: bool = True) -> DataSeries:
    """pi/2 - tau/2 - pi - tau/2 - pi/2, with tau the total sequence length.

    tau runs from the start of the first pulse to the end of the last, so
    finite pulse durations are part of the evolution; it must be at least
    the summed pulse length. With ``cycle`` the sequence is repeated with
    the last pulse phase-shifted by pi and half the difference is reported:
    population terms (T1 recovery, pulse errors) cancel and the trace decays
    from about -c_max/2 towards 0.
    """
    tau = _check_grid(tau_grid)
    f_mw = resonance(cfg) if f_mw is None else f_mw
    t_half, t_pi = 0.5 * pi_pulse(omega), pi_pulse(omega)
    pulses = 2 * t_half + t_pi
    if tau[0] < pulses - 1e-12:
        raise ValueError(f"echo tau {tau[0]:g} us is shorter than the pulses ({pulses:g} us)")
    waits = np.maximum((tau - pulses) / 2, 0.0)

    def build(phase):
        return PulseSequence([Laser(), Microwave(t_half, f_mw, omega), Wait(0.0),
                              Microwave(t_pi, f_mw, omega), Wait(0.0),
                              Microwave(t_half, f_mw, omega, phase), Readout()],
                             [Sweep(2, "duration", waits), Sweep(4, "duration", waits)])

    seq = build(0.0)
    combine = [(0.5, build(math.pi)), (-0.5, seq)] if cycle else None
    return _pulsed("echo", cfg, ens, seq, tau, combine, f_mw=f_mw, omega=omega, cycle=cycle)


def ramsey_experiment(cfg: SpinSystemConfig, f_mw: float | None, tau_grid,
                      ens: EnsembleSpec | None = None, omega: float = 20.0) -> DataSeries:
    """pi/2 - wait tau - pi/2."""
    tau = _check_grid(tau_grid)
    if tau[0] < 0:
        raise ValueError("free evolution time must be >= 0")
    f_mw = resonance(cfg) if f_mw is None else f_mw
    t_half = 0.5 * pi_pulse(omega)
    seq = PulseSequence([Laser(), Microwave(t_half, f_mw, omega), Wait(0.0),
                         Microwave(t_half, f_mw, omega), Readout()],
                        [Sweep(2, "duration", tau)])
    return _pulsed("ramsey", cfg, ens, seq, tau, f_mw=f_mw, omega=omega)


def fit_ramsey(series: DataSeries, n: int = 3, background: bool = True) -> fitting.FitResult:
    """Sum of n damped cosines from several automatic starting points."""
    name = "damped_cosine" if background else "damped_cosine_nobg"
    return fitting.fit_named(name, series, n)


def count_extrema(y, threshold: float) -> int:
    """Turning points whose swing on both sides exceeds ``threshold``."""
    count, direction = 0, 0
    ref = extreme = float(y[0])
    for v in map(float, y[1:]):
        if direction == 0:
            if abs(v - ref) > threshold:
                direction, extreme = (1 if v > ref else -1), v
        elif direction * (v - extreme) > 0:
            extreme = v
        elif abs(v - extreme) > threshold:
            count += 1
            direction, extreme = -direction, v
    return count
