"""Nonlinear least squares and the fit-model library.

The engine is a bounded Levenberg-Marquardt loop with Marquardt diagonal
scaling. Uncertainties come from the linearized covariance (J^T J)^-1 s^2
evaluated at the optimum, with s^2 the reduced chi-square.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .constants import MU_B_MHZ_PER_MT
from .data import DataSeries


class FitError(RuntimeError):
    pass


class RankDeficientError(FitError):
    """The normal equations are singular at the optimum."""


class ConvergenceError(FitError):
    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


@dataclass
class FitModel:
    name: str
    param_names: tuple
    func: Callable  # func(x, theta) -> y
    lower: tuple
    upper: tuple
    guesser: Callable | None = None  # guesser(x, y) -> theta0
    jacobian: Callable | None = None  # jacobian(x, theta) -> (N, p)
    n_components: int | None = None

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def __call__(self, x, theta):
        return self.func(np.asarray(x, float), np.asarray(theta, float))

    def guess(self, x, y) -> np.ndarray:
        if self.guesser is None:
            raise FitError(f"model {self.name} has no automatic initial guess")
        return np.clip(np.asarray(self.guesser(np.asarray(x, float),
                                               np.asarray(y, float)), float),
                       self.lower, self.upper)


@dataclass
class FitResult:
    model: str
    param_names: tuple
    values: np.ndarray
    errors: np.ndarray
    chi2: float
    dof: int
    residuals: np.ndarray
    iterations: int
    damping: float
    converged: bool
    message: str = ""
    uncertainty_method: str = "linearized covariance (J^T J)^-1 * reduced chi2"

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    @property
    def params(self) -> dict:
        return dict(zip(self.param_names, (float(v) for v in self.values)))

    @property
    def stderr(self) -> dict:
        return dict(zip(self.param_names, (float(v) for v in self.errors)))

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params,
            "stderr": self.stderr,
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "reduced_chi2": float(self.reduced_chi2),
            "residuals": [float(r) for r in self.residuals],
            "iterations": int(self.iterations),
            "damping": float(self.damping),
            "converged": bool(self.converged),
            "message": self.message,
            "uncertainty_method": self.uncertainty_method,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        names = tuple(d["params"])
        return cls(model=d["model"], param_names=names,
                   values=np.array([d["params"][k] for k in names], float),
                   errors=np.array([d["stderr"][k] for k in names], float),
                   chi2=d["chi2"], dof=d["dof"],
                   residuals=np.array(d["residuals"], float),
                   iterations=d["iterations"], damping=d["damping"],
                   converged=d["converged"], message=d.get("message", ""),
                   uncertainty_method=d.get("uncertainty_method", cls.uncertainty_method))

    def __eq__(self, other):
        if not isinstance(other, FitResult):
            return NotImplemented
        return self.to_dict() == other.to_dict()


# --------------------------------------------------------------------------
# engine

def _fd_jacobian(fun, theta, f0, lower, upper):
    jac = np.empty((f0.size, theta.size))
    for j in range(theta.size):
        h = 1e-6 * max(abs(theta[j]), 1e-3)
        if theta[j] + h > upper[j]:
            h = -h
        t = theta.copy()
        t[j] += h
        jac[:, j] = (fun(t) - f0) / h
    return jac


def _identifiability(jac, names):
    norms = np.linalg.norm(jac, axis=0)
    dead = [names[j] for j in range(len(names)) if norms[j] == 0 or not np.isfinite(norms[j])]
    if dead:
        return f"parameter(s) {', '.join(dead)} have no effect on the model"
    _, s, vt = np.linalg.svd(jac / norms, full_matrices=False)
    if s[-1] < 1e-9 * s[0]:
        v = vt[-1]
        terms = [f"{v[j]:+.3f}*{names[j]}" for j in np.argsort(-np.abs(v))
                 if abs(v[j]) > 0.1]
        return "unidentifiable parameter combination: " + " ".join(terms)
    return None


def _bounded_step(theta, step, lower, upper):
    """theta + step kept inside the box without changing its direction.

    Components pushing into an active bound are dropped; the rest is
    shortened to stop short of the nearest bound. Clipping each coordinate
    instead can swing a parameter onto a degenerate edge in one move.
    """
    step = np.where(((theta <= lower) & (step < 0)) | ((theta >= upper) & (step > 0)), 0.0, step)
    room = np.where(step < 0, theta - lower, upper - theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(step != 0, room / np.abs(step), np.inf)
    alpha = min(1.0, 0.9 * float(np.min(ratio))) if np.min(ratio) < 1 else 1.0
    return np.clip(theta + alpha * step, lower, upper)


def nlls_fit(model: FitModel, data: DataSeries, theta0=None, bounds=None,
             max_iter: int = 500, ftol: float = 1e-10, gtol: float = 1e-8) -> FitResult:
    """Minimise sum(((y - model(x)) / sigma)^2) from ``theta0``.

    ``theta0`` defaults to the model's automatic guess. ``bounds`` is
    ``(lower, upper)``; defaults come from the model. Raises
    ``RankDeficientError`` for singular normal equations and
    ``ConvergenceError`` (carrying the best-so-far result) after ``max_iter``.
    """
    x = np.asarray(data.x, float)
    y = np.asarray(data.y, float)
    sigma = np.ones_like(y) if data.y_sigma is None else np.asarray(data.y_sigma, float)
    if np.any(sigma <= 0):
        raise ValueError("y_sigma must be positive")
    p = model.n_params
    if len(y) <= p:
        raise ValueError(f"need more than {p} points to fit {model.name}, got {len(y)}")
    lower, upper = (np.asarray(model.lower, float), np.asarray(model.upper, float)) \
        if bounds is None else (np.asarray(bounds[0], float), np.asarray(bounds[1], float))
    theta = model.guess(x, y) if theta0 is None else np.asarray(theta0, float).copy()
    if theta.shape != (p,):
        raise ValueError(f"theta0 must have {p} entries")
    if np.any(theta < lower) or np.any(theta > upper):
        raise ValueError("theta0 lies outside the bounds")

    def resid(t):
        return (y - model(x, t)) / sigma

    def jac_of(t, r):
        if model.jacobian is not None:
            return -model.jacobian(x, t) / sigma[:, None]
        return _fd_jacobian(resid, t, r, lower, upper)

    r = resid(theta)
    if not np.all(np.isfinite(r)):
        raise FitError("model is not finite at theta0")
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    jac = jac_of(theta, r)
    for it in range(1, max_iter + 1):
        g = jac.T @ r
        rnorm = math.sqrt(2 * cost)
        colnorm = np.linalg.norm(jac, axis=0)
        if rnorm == 0 or np.max(np.abs(g) / np.where(colnorm > 0, colnorm, 1.0)) <= gtol * rnorm:
            converged, message = True, "gradient tolerance reached"
            break
        a = jac.T @ jac
        dscale = np.maximum(np.diag(a), 1e-30 * max(np.max(np.diag(a)), 1e-300))
        accepted = False
        while lam < 1e20:
            try:
                step = np.linalg.solve(a + lam * np.diag(dscale), -g)
            except np.linalg.LinAlgError:
                lam *= 4
                continue
            trial = _bounded_step(theta, step, lower, upper)
            r_new = resid(trial)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if cost_new < cost:
                accepted = True
                break
            lam *= 4
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        rel = (cost - cost_new) / cost
        theta, r, cost = trial, r_new, cost_new
        lam = max(lam / 3, 1e-12)
        jac = jac_of(theta, r)
        if rel < ftol:
            converged, message = True, "relative cost change below tolerance"
            break

    dof = len(y) - p
    chi2 = 2 * cost
    problem = _identifiability(jac, model.param_names)
    if problem:
        raise RankDeficientError(f"{model.name}: {problem}")
    cov = np.linalg.pinv(jac.T @ jac) * (chi2 / dof)
    errors = np.sqrt(np.clip(np.diag(cov), 0, None))
    result = FitResult(model.name, tuple(model.param_names), theta.copy(), errors,
                       chi2, dof, r * sigma, it, lam, converged, message)
    if not converged:
        raise ConvergenceError(f"{model.name}: no convergence in {max_iter} iterations",
                               result)
    return result


def fit(model: FitModel, data: DataSeries, theta0=None, bounds=None,
        starts: Sequence | None = None, **kw) -> FitResult:
    """``nlls_fit`` over several starting points, keeping the lowest chi2."""
    if starts is None:
        return nlls_fit(model, data, theta0, bounds, **kw)
    best = None
    errors = []
    for t0 in starts:
        try:
            res = nlls_fit(model, data, t0, bounds, **kw)
        except (FitError, ValueError) as exc:
            errors.append(exc)
            continue
        if best is None or res.chi2 < best.chi2:
            best = res
    if best is None:
        stalled = [e for e in errors if isinstance(e, ConvergenceError)]
        if stalled:
            raise min(stalled, key=lambda e: e.best.chi2)
        raise errors[-1]
    return best


# --------------------------------------------------------------------------
# models

def model_constant() -> FitModel:
    return FitModel("constant", ("c",), lambda x, t: np.full_like(x, t[0]),
                    (-np.inf,), (np.inf,), lambda x, y: [float(np.mean(y))],
                    jacobian=lambda x, t: np.ones((x.size, 1)))


def model_linear() -> FitModel:
    def guess(x, y):
        s, c = np.polyfit(x, y, 1)
        return [c, s]
    return FitModel("linear", ("intercept", "slope"),
                    lambda x, t: t[0] + t[1] * x, (-np.inf, -np.inf), (np.inf, np.inf),
                    guess, jacobian=lambda x, t: np.column_stack([np.ones_like(x), x]))


def g_from_slope(slope: float) -> float:
    """g-factor from a line-position slope in MHz/mT."""
    return abs(slope) / MU_B_MHZ_PER_MT


def model_lorentzian_sum(n: int) -> FitModel:
    """c0 + sum A_i (w_i/2)^2 / ((x - x0_i)^2 + (w_i/2)^2); dips have A_i < 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    names = ("c0",) + tuple(f"{k}{i}" for i in range(1, n + 1) for k in ("A", "x0_", "w"))

    def func(x, t):
        y = np.full_like(x, t[0])
        for i in range(n):
            a, x0, w = t[1 + 3 * i:4 + 3 * i]
            hw2 = (0.5 * w) ** 2
            y = y + a * hw2 / ((x - x0) ** 2 + hw2)
        return y

    def jac(x, t):
        out = np.empty((x.size, 1 + 3 * n))
        out[:, 0] = 1.0
        for i in range(n):
            a, x0, w = t[1 + 3 * i:4 + 3 * i]
            hw2 = (0.5 * w) ** 2
            den = (x - x0) ** 2 + hw2
            out[:, 1 + 3 * i] = hw2 / den
            out[:, 2 + 3 * i] = a * hw2 * 2 * (x - x0) / den**2
            out[:, 3 + 3 * i] = a * 0.5 * w * (x - x0) ** 2 / den**2
        return out

    lower = (-np.inf,) + (-np.inf, -np.inf, 1e-9) * n
    upper = (np.inf,) * (1 + 3 * n)
    return FitModel(f"lorentzian_sum{n}", names, func, lower, upper,
                    lambda x, y: guess_lorentzians(x, y, n), jac, n)


def _dip_profile(x, y):
    """(smoothed y, baseline) with the baseline at the smoothed maximum."""
    span = float(x[-1] - x[0]) or 1.0
    step = span / max(len(x) - 1, 1)
    smooth = gaussian_filter1d(y, max(1.0, 0.02 * span / step), mode="nearest")
    return smooth, float(np.max(smooth))


def _lorentzian_theta(x, smooth, base, centres):
    span = float(x[-1] - x[0]) or 1.0
    step = span / max(len(x) - 1, 1)
    theta = [base]
    for c in sorted(centres):
        i = int(np.argmin(np.abs(x - c)))
        a = float(smooth[i] - base) or -1e-3
        # full width at half depth: walk out from the centre to the crossings
        inside = smooth - base < 0.5 * a
        lo = hi = i
        while lo > 0 and inside[lo - 1]:
            lo -= 1
        while hi < len(x) - 1 and inside[hi + 1]:
            hi += 1
        width = max(float(x[hi] - x[lo]), 2 * step)
        theta += [a, float(c), width]
    return theta


def lorentzian_starts(x, y, n) -> list:
    """Two starts: the n most prominent smoothed dips, and the quantiles
    of the dip profile (for lines merged into one broad dip)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    span = float(x[-1] - x[0]) or 1.0
    smooth, base = _dip_profile(x, y)
    peaks, props = find_peaks(-smooth, prominence=0.0)
    order = np.argsort(-props["prominences"], kind="stable")
    centres = [float(x[peaks[k]]) for k in order[:n]]
    while len(centres) < n:
        centres.append(x[0] + span * (len(centres) + 0.5) / n)
    weight = np.cumsum(base - smooth)
    starts = [_lorentzian_theta(x, smooth, base, centres)]
    if weight[-1] > 0:
        q = [float(np.interp((k + 0.5) / n * weight[-1], weight, x)) for k in range(n)]
        starts.append(_lorentzian_theta(x, smooth, base, q))
    return starts


def guess_lorentzians(x, y, n):
    return lorentzian_starts(x, y, n)[0]


def model_exp_decay(double: bool = False) -> FitModel:
    """a exp(-t/T) + c, or a1 exp(-t/Ta) + a2 exp(-t/Tb) + c."""
    if double:
        def func(x, t):
            return t[0] * np.exp(-x / t[1]) + t[2] * np.exp(-x / t[3]) + t[4]
        return FitModel("exp_decay_double", ("a1", "Ta", "a2", "Tb", "c"), func,
                        (-np.inf, 1e-12, -np.inf, 1e-12, -np.inf), (np.inf,) * 5,
                        lambda x, y: guess_double_exp(x, y))

    def func(x, t):
        return t[0] * np.exp(-x / t[1]) + t[2]

    def jac(x, t):
        e = np.exp(-x / t[1])
        return np.column_stack([e, t[0] * e * x / t[1] ** 2, np.ones_like(x)])

    return FitModel("exp_decay", ("a", "T", "c"), func, (-np.inf, 1e-12, -np.inf),
                    (np.inf,) * 3, lambda x, y: guess_exp(x, y), jac)


def guess_exp(x, y):
    """Decay constant from log-linear regression on the smoothed envelope.

    Only the initial stretch where |y - tail| stays above a fifth of its
    starting value is used, so the noise floor does not flatten the slope.
    The amplitude is referred back to x = 0.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n_tail = max(len(y) // 10, 1)
    c = float(np.mean(y[-n_tail:]))
    k = max(len(y) // 25, 1)
    if k > 1:
        kern = np.ones(k) / k
        xs, ys = np.convolve(x, kern, "valid"), np.convolve(y, kern, "valid")
    else:
        xs, ys = x, y
    env = np.abs(ys - c)
    T = (x[-1] - x[0]) / 3 or 1.0
    if env.size and env[0] > 0:
        below = np.flatnonzero(env < 0.2 * env[0])
        stop = below[0] if below.size else env.size
        if stop >= 3:
            slope = np.polyfit(xs[:stop], np.log(env[:stop]), 1)[0]
            if slope < 0:
                T = -1.0 / slope
        elif stop >= 1 and below.size:
            T = max(xs[stop] - xs[0], np.median(np.diff(x))) / math.log(5.0)
    a = float(ys[0] - c) * math.exp(min(xs[0] / T, 50.0)) if ys.size else 0.0
    return [a if a != 0 else 1e-12, T, c]


def guess_double_exp(x, y):
    """Best (Ta, Tb) pair on a log grid, amplitudes by linear least squares.

    Ta < Tb/2 on the grid keeps the two components apart.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    x0 = float(x[0])
    xs = x - x0
    span = float(xs[-1]) or 1.0
    step = float(np.median(np.diff(x))) if x.size > 1 else span
    grid = np.geomspace(max(step, span / 1000), 3 * span, 40)
    decays = np.exp(-xs[:, None] / grid[None, :])
    ones = np.ones_like(xs)
    best = None
    for i in range(len(grid)):
        for k in range(i + 1, len(grid)):
            if grid[k] < 2 * grid[i]:
                continue
            a = np.column_stack([decays[:, i], decays[:, k], ones])
            coef, *_ = np.linalg.lstsq(a, y, rcond=None)
            cost = float(np.sum((a @ coef - y) ** 2))
            if best is None or cost < best[0]:
                best = (cost, coef, grid[i], grid[k])
    _, (a1, a2, c), ta, tb = best
    a1 *= math.exp(min(x0 / ta, 50.0))
    a2 *= math.exp(min(x0 / tb, 50.0))
    return [a1 or 1e-12, ta, a2 or 1e-12, tb, c]


def model_damped_cosines(n: int, background: bool = True) -> FitModel:
    """sum A_i exp(-t/T_i) cos(2 pi f_i t + phi_i) [+ b exp(-t/T_b)] + c."""
    if n < 1:
        raise ValueError("n must be >= 1")
    names = tuple(f"{k}{i}" for i in range(1, n + 1) for k in ("A", "T", "f", "phi"))
    names += ("b", "Tb", "c") if background else ("c",)

    def func(x, t):
        y = np.zeros_like(x)
        for i in range(n):
            a, tt, f, ph = t[4 * i:4 * i + 4]
            y = y + a * np.exp(-x / tt) * np.cos(2 * np.pi * f * x + ph)
        if background:
            y = y + t[4 * n] * np.exp(-x / t[4 * n + 1]) + t[4 * n + 2]
        else:
            y = y + t[4 * n]
        return y

    def jac(x, t):
        cols = []
        for i in range(n):
            a, tt, f, ph = t[4 * i:4 * i + 4]
            e = np.exp(-x / tt)
            arg = 2 * np.pi * f * x + ph
            cs, sn = np.cos(arg), np.sin(arg)
            cols += [e * cs, a * e * cs * x / tt**2, -a * e * sn * 2 * np.pi * x, -a * e * sn]
        if background:
            b, tb = t[4 * n], t[4 * n + 1]
            e = np.exp(-x / tb)
            cols += [e, b * e * x / tb**2]
        cols.append(np.ones_like(x))
        return np.column_stack(cols)

    lower = (-np.inf, 1e-12, 0.0, -np.inf) * n
    upper = (np.inf,) * (4 * n)
    if background:
        lower += (-np.inf, 1e-12, -np.inf)
        upper += (np.inf,) * 3
    else:
        lower += (-np.inf,)
        upper += (np.inf,)
    return FitModel(f"damped_cosines{n}" + ("" if background else "_nobg"), names, func,
                    lower, upper, lambda x, y: guess_damped_cosines(x, y, n, background),
                    jac, n)


# --------------------------------------------------------------------------
# initial guesses

def _detrend(x, y):
    """Subtract a fitted double-exponential background (falls back gracefully)."""
    data = DataSeries(x, y)
    for model in (model_exp_decay(True), model_exp_decay(False)):
        try:
            res = nlls_fit(model, data, max_iter=200)
            return y - model(x, res.values), model, res.values
        except (FitError, ValueError, np.linalg.LinAlgError):
            continue
    c = float(np.mean(y))
    return y - c, model_constant(), np.array([c])


def _spectrum(x, y, pad=8):
    dx = float(np.median(np.diff(x)))
    n = int(round((x[-1] - x[0]) / dx)) + 1
    xu = x[0] + dx * np.arange(n)
    yu = np.interp(xu, x, y)
    nfft = 1 << int(math.ceil(math.log2(pad * n)))
    spec = np.fft.rfft(yu, nfft)
    freqs = np.fft.rfftfreq(nfft, dx)
    return freqs, spec, n


def guess_frequencies(data: DataSeries, n: int, detrend: bool = True) -> list[float]:
    """The ``n`` strongest oscillation frequencies (1/x units).

    The data are detrended, resampled on a uniform grid and Fourier
    transformed; peaks are refined by parabolic interpolation. Fewer than
    ``n`` frequencies are returned (with a ``RuntimeWarning``) when the
    spectrum does not hold that many significant peaks.
    """
    x = np.asarray(data.x, float)
    y = np.asarray(data.y, float)
    if len(x) < 4:
        return []
    resid = _detrend(x, y)[0] if detrend else y - np.mean(y)
    scale = max(float(np.max(np.abs(y))), 1e-300)
    if float(np.max(np.abs(resid))) <= 1e-9 * scale:
        if n > 0:
            warnings.warn("no oscillation found in data", RuntimeWarning, stacklevel=2)
        return []
    freqs, spec, npts = _spectrum(x, resid)
    mag = np.abs(spec)
    floor = 4.0 * float(np.median(mag)) + 1e-12 * float(mag.max())
    peaks = [i for i in range(1, len(mag) - 1)
             if mag[i] > mag[i - 1] and mag[i] >= mag[i + 1] and mag[i] > floor]
    out = []
    for i in peaks:
        a, b, c = mag[i - 1], mag[i], mag[i + 1]
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
        df = freqs[1] - freqs[0]
        out.append((float(b), float(freqs[i] + shift * df)))
    # keep only one peak per natural bin (zero padding creates side lobes)
    natural = 1.0 / (npts * float(np.median(np.diff(x))))
    out.sort(key=lambda t: (-t[0], t[1]))
    chosen: list[tuple[float, float]] = []
    for amp, f in out:
        if all(abs(f - g) > 0.75 * natural for _, g in chosen):
            chosen.append((amp, f))
    chosen = [c for c in chosen if c[0] > 0.05 * chosen[0][0]] if chosen else []
    result = [f for _, f in chosen[:n]]
    if len(result) < n:
        warnings.warn(f"only {len(result)} of {n} frequencies resolvable",
                      RuntimeWarning, stacklevel=2)
    return result


def _envelope_fit(x, y, freqs, extra):
    """Shared decay time from a log grid with amplitudes, phases and the
    ``extra`` columns solved linearly: (cost, T, coef, residual)."""
    span = float(x[-1] - x[0]) or 1.0
    dx = float(np.median(np.diff(x)))
    best = None
    for T in np.geomspace(max(3 * dx, span / 100), 3 * span, 30):
        e = np.exp(-(x - x[0]) / T)
        cols = []
        for f in freqs:
            cols += [e * np.cos(2 * np.pi * f * x), -e * np.sin(2 * np.pi * f * x)]
        a = np.column_stack(cols + extra)
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        r = y - a @ coef
        cost = float(r @ r)
        if best is None or cost < best[0]:
            best = (cost, T, coef, r)
        if not freqs:
            break
    return best


def _pursuit_frequencies(x, y, n, extra):
    """Add the strongest residual spectral peak one at a time, refitting
    after each addition."""
    natural = 1.0 / (float(x[-1] - x[0]) + float(np.median(np.diff(x))))
    freqs: list[float] = []
    resid = _envelope_fit(x, y, freqs, extra)[3]
    for _ in range(n):
        f_axis, spec, _ = _spectrum(x, resid)
        mag = np.abs(spec)
        for g in freqs:
            mag[np.abs(f_axis - g) < 1.5 * natural] = 0.0
        k = int(np.argmax(mag[1:-1])) + 1
        a, b, c = mag[k - 1], mag[k], mag[k + 1]
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
        freqs.append(max(float(f_axis[k] + shift * (f_axis[1] - f_axis[0])), 0.0))
        resid = _envelope_fit(x, y, freqs, extra)[3]
    return sorted(freqs)


def guess_damped_cosines(x, y, n, background=True):
    """The best of ``damped_cosine_starts``."""
    return damped_cosine_starts(x, y, n, background)[0]


def damped_cosine_starts(x, y, n, background=True) -> list:
    """Starting points from up to three frequency sets (matching pursuit on
    the residual spectrum, and the peaks of the detrended and raw spectra),
    best fitting first. Each has a shared envelope with amplitudes and
    phases solved linearly."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    span = float(x[-1] - x[0]) or 1.0
    dx = float(np.median(np.diff(x)))
    extra = [np.ones_like(x)]
    if background:
        _, bg_model, bg_theta = _detrend(x, y)
        if bg_model.name == "exp_decay_double":
            a1, ta, a2, tb, _c = bg_theta
            Tb = ta if abs(a1) > abs(a2) else tb
        elif bg_model.name == "exp_decay":
            Tb = bg_theta[1]
        else:
            Tb = span
        Tb = float(np.clip(Tb, dx, 100 * span))
        extra.append(np.exp(-x / Tb))
    sets = [_pursuit_frequencies(x, y, n, extra)]
    # the raw spectrum guards against a background fit that swallowed a fast decay
    for detrend in (True, False):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            peaks = guess_frequencies(DataSeries(x, y), n, detrend=detrend)
        while len(peaks) < n:
            peaks.append((len(peaks) + 1) / span)
        if sorted(peaks) not in sets:
            sets.append(sorted(peaks))
    starts = []
    for freqs in sets:
        cost, T, coef, _ = _envelope_fit(x, y, freqs, extra)
        coef = coef.copy()
        coef[:2 * len(freqs)] *= math.exp(min(float(x[0]) / T, 50.0))
        theta = []
        for i, f in enumerate(freqs):
            cc, ss = coef[2 * i], coef[2 * i + 1]
            theta += [math.hypot(cc, ss) or 1e-12, T, f, math.atan2(ss, cc)]
        theta += [coef[-1], Tb, coef[-2]] if background else [coef[-1]]
        starts.append((cost, theta))
    starts.sort(key=lambda t: t[0])
    return [t for _, t in starts]


def resolve_comb_signs(freqs: Sequence[float]) -> list[float]:
    """Assign signs to non-negative fringe frequencies so that the signed
    values form the most evenly spaced comb.

    A Ramsey fringe only measures |detuning|; lines on either side of the
    carrier are told apart by assuming they belong to one equally spaced
    hyperfine comb. Ties favour the assignment with the larger number of
    positive entries.
    """
    f = np.asarray(sorted(abs(v) for v in freqs), float)
    best = None
    for mask in range(1 << len(f)):
        signs = np.array([1 if mask >> i & 1 else -1 for i in range(len(f))])
        signed = np.sort(f * signs)
        gaps = np.diff(signed)
        score = float(np.ptp(gaps)) if gaps.size else 0.0
        key = (round(score, 12), -int(signs.sum()))
        if best is None or key < best[0]:
            best = (key, signed)
    return [float(v) for v in best[1]]


MODELS = {
    "constant": lambda n=1: model_constant(),
    "linear": lambda n=1: model_linear(),
    "lorentzian": model_lorentzian_sum,
    "damped_cosine": model_damped_cosines,
    "damped_cosine_nobg": lambda n=1: model_damped_cosines(n, background=False),
    "exp": lambda n=1: model_exp_decay(n >= 2),
}


def get_model(name: str, n: int = 1) -> FitModel:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(n)


def fit_named(name: str, data: DataSeries, n: int = 1, theta0=None) -> FitResult:
    """Fit a registered model by name with automatic starting points.

    Damped cosines start from every ``damped_cosine_starts`` candidate with
    the envelope guess scaled by 1, 1/2 and 2, Lorentzians from every
    ``lorentzian_starts`` candidate; other models start from their own
    guess. An explicit ``theta0`` is used as the only start.
    """
    model = get_model(name, n)
    if theta0 is not None:
        return nlls_fit(model, data, theta0)
    if name.startswith("damped_cosine"):
        starts = []
        for t0 in damped_cosine_starts(data.x, data.y, n, name == "damped_cosine"):
            for scale in (1.0, 0.5, 2.0):
                t = np.array(t0, float)
                t[1:4 * n:4] *= scale
                starts.append(t)
        return fit(model, data, starts=starts)
    if name == "lorentzian":
        return fit(model, data, starts=lorentzian_starts(data.x, data.y, n))
    return nlls_fit(model, data)
