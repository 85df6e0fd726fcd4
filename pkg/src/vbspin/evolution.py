"""Time evolution of the ground-state spin.

States are density matrices (complex ndarrays). Hamiltonians are H/h in MHz,
times in microseconds; the 2*pi lives only inside propagators and generators.

Relaxation model: population exchange between every ordered pair of the three
m_s levels at rate 1/(3*T1), so that any population imbalance decays as a
single exponential exp(-t/T1). Pure dephasing on Sz tops the 0 <-> -1
coherence decay up to exactly 1/T2.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .spin_model import MS_INDEX, SZ, electron_operator

TWO_PI = 2.0 * np.pi
MAX_STEP_NORM = 0.1


class StepSizeError(ValueError):
    """Raised when an integration step would under-resolve the generator."""


def is_hermitian(h: np.ndarray, tol: float = 1e-12) -> bool:
    scale = max(float(np.max(np.abs(h))), 1.0)
    return bool(np.max(np.abs(h - h.conj().T)) <= tol * scale)


def propagator(h: np.ndarray, dt: float) -> np.ndarray:
    """U = exp(-i 2 pi H dt) via Hermitian eigendecomposition."""
    if not is_hermitian(h, 1e-10):
        raise ValueError("propagator requires a Hermitian Hamiltonian")
    vals, vecs = np.linalg.eigh(0.5 * (h + h.conj().T))
    return (vecs * np.exp(-1j * TWO_PI * vals * dt)) @ vecs.conj().T


def density_matrix(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def basis_state(ms: int, dim: int = 3) -> np.ndarray:
    """Electron in |m_s> with any nuclear spins maximally mixed."""
    e = np.zeros((3, 3), dtype=complex)
    e[MS_INDEX[ms], MS_INDEX[ms]] = 1.0
    if dim == 3:
        return e
    n = dim // 3
    return np.kron(e, np.eye(n) / n)


def population(rho: np.ndarray, ms: int) -> float:
    """Population of electron level ``ms`` (traced over nuclei)."""
    d = rho.shape[0]
    n = d // 3
    i = MS_INDEX[ms]
    return float(np.real(np.trace(rho[i * n:(i + 1) * n, i * n:(i + 1) * n])))


def state_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity between two density matrices."""
    sq = scipy.linalg.sqrtm(rho)
    return float(np.real(np.trace(scipy.linalg.sqrtm(sq @ sigma @ sq))) ** 2)


# --------------------------------------------------------------------------
# dissipators

def relaxation_channels(dim: int, T1: float, T2: float) -> list[tuple[float, np.ndarray]]:
    """Jump operators (rate, L) for the T1/T2 model on a ``dim`` space."""
    if not (T1 > 0 and T2 > 0):
        raise ValueError("T1 and T2 must be positive")
    gamma1 = 1.0 / (3.0 * T1)
    gamma_phi = 2.0 * (1.0 / T2 - 2.0 * gamma1)
    if gamma_phi < -1e-12 * (1.0 / T2):
        raise ValueError(f"T2={T2} > 1.5*T1={1.5 * T1} is not representable")
    channels = []
    if gamma1 > 0:
        for i in range(3):
            for j in range(3):
                if i != j:
                    jump = np.zeros((3, 3), dtype=complex)
                    jump[j, i] = 1.0
                    channels.append((gamma1, electron_operator(jump, dim)))
    if gamma_phi > 0:
        channels.append((gamma_phi, electron_operator(SZ, dim)))
    return channels


def lindblad_rhs(rho: np.ndarray, h: np.ndarray, channels) -> np.ndarray:
    out = -1j * TWO_PI * (h @ rho - rho @ h)
    for rate, c in channels:
        cd = c.conj().T
        cdc = cd @ c
        out += rate * (c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc))
    return out


def generator_norm(h: np.ndarray, channels) -> float:
    """Spectral-radius bound of the Lindblad generator (1/us)."""
    vals = np.linalg.eigvalsh(0.5 * (h + h.conj().T))
    norm = TWO_PI * float(vals[-1] - vals[0])
    for rate, c in channels:
        norm += rate * float(np.linalg.norm(c, 2)) ** 2
    return norm


def evolve_lindblad(rho: np.ndarray, h: np.ndarray, T1: float, T2: float,
                    dt: float, steps: int) -> np.ndarray:
    """Fixed-step RK4 integration of the master equation.

    Refuses (``StepSizeError``) when dt times the generator norm exceeds 0.1.
    """
    if steps < 0 or dt < 0:
        raise ValueError("dt and steps must be non-negative")
    channels = relaxation_channels(h.shape[0], T1, T2)
    norm = generator_norm(h, channels)
    if dt * norm > MAX_STEP_NORM:
        need = math.ceil(dt * steps * norm / MAX_STEP_NORM)
        raise StepSizeError(
            f"dt={dt:g} us is too coarse for generator norm {norm:.4g}/us; "
            f"use dt <= {MAX_STEP_NORM / norm:.3g} us (>= {need} steps for "
            "the same total time)")
    rho = np.array(rho, dtype=complex)
    for _ in range(steps):
        k1 = lindblad_rhs(rho, h, channels)
        k2 = lindblad_rhs(rho + 0.5 * dt * k1, h, channels)
        k3 = lindblad_rhs(rho + 0.5 * dt * k2, h, channels)
        k4 = lindblad_rhs(rho + dt * k3, h, channels)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
    return rho


def evolve_rk4(rho, h, T1, T2, duration, safety=0.05):
    """RK4 over ``duration`` with the step chosen from the generator norm."""
    if duration <= 0:
        return np.array(rho, dtype=complex)
    channels = relaxation_channels(h.shape[0], T1, T2)
    norm = max(generator_norm(h, channels), 1e-12)
    steps = max(1, math.ceil(duration * norm / safety))
    return evolve_lindblad(rho, h, T1, T2, duration / steps, steps)


# --------------------------------------------------------------------------
# superoperators (row-major vectorisation: vec(A rho B) = (A kron B^T) vec(rho))

def liouvillian(h: np.ndarray, channels) -> np.ndarray:
    d = h.shape[0]
    eye = np.eye(d)
    out = -1j * TWO_PI * (np.kron(h, eye) - np.kron(eye, h.T))
    for rate, c in channels:
        cdc = c.conj().T @ c
        out += rate * (np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye)
                       - 0.5 * np.kron(eye, cdc.T))
    return out


def sparse_liouvillian(h: np.ndarray, channels) -> sp.csr_matrix:
    d = h.shape[0]
    eye = sp.identity(d, format="csr", dtype=complex)
    hs = sp.csr_matrix(h)
    out = -1j * TWO_PI * (sp.kron(hs, eye) - sp.kron(eye, hs.T))
    for rate, c in channels:
        cs = sp.csr_matrix(c)
        cdc = (cs.conj().T @ cs).tocsr()
        out = out + rate * (sp.kron(cs, cs.conj()) - 0.5 * sp.kron(cdc, eye)
                            - 0.5 * sp.kron(eye, cdc.T))
    return out.tocsr()


def superpropagators(lv: np.ndarray, durations) -> np.ndarray:
    """exp(L t) for each t in ``durations`` (dense, batched)."""
    t = np.asarray(durations, dtype=float)
    return scipy.linalg.expm(lv[None, :, :] * t[:, None, None])


def evolve_exact(rho: np.ndarray, h: np.ndarray, T1: float, T2: float,
                 duration: float) -> np.ndarray:
    """Master-equation evolution by exponentiating the Liouvillian."""
    d = h.shape[0]
    channels = relaxation_channels(d, T1, T2)
    if d <= 9:
        prop = scipy.linalg.expm(liouvillian(h, channels) * duration)
        v = prop @ rho.reshape(-1)
    else:
        v = expm_multiply(sparse_liouvillian(h, channels) * duration,
                          rho.reshape(-1))
    return v.reshape(d, d)


# --------------------------------------------------------------------------
# optical pumping and readout

def polarize(rho: np.ndarray, p: float = 1.0) -> np.ndarray:
    """Reset the electron to p|0><0| + (1-p)/2 (|+1><+1| + |-1><-1|).

    Nuclear spins (full-quantum mode) are left maximally mixed.
    """
    if not 1.0 / 3.0 - 1e-12 <= p <= 1.0 + 1e-12:
        raise ValueError(f"polarization must lie in [1/3, 1], got {p}")
    e = np.diag([(1 - p) / 2, p, (1 - p) / 2]).astype(complex)
    d = rho.shape[0]
    if d == 3:
        return e
    n = d // 3
    return np.kron(e, np.eye(n) / n)


def readout_contrast(rho: np.ndarray, ref: np.ndarray, c_max: float = 0.03) -> float:
    """c_max * (P0(rho) - P0(ref)); negative when population left m_s=0."""
    if rho.shape != ref.shape:
        raise ValueError(f"dimension mismatch {rho.shape} vs {ref.shape}")
    return c_max * (population(rho, 0) - population(ref, 0))


# --------------------------------------------------------------------------
# CW optical rate model

LEVELS = ("GS0", "GS-1", "GS+1", "ES0", "ES-1", "ES+1", "MS")


class DegenerateRateError(ValueError):
    pass


class OpticalRateModel:
    """Seven-level rate model (GS0, GS-1, GS+1, ES0, ES-1, ES+1, MS).

    All rates in 1/us. Optical transitions conserve m_s; intersystem crossing
    from the excited state is faster for m_s=+-1 and the metastable state
    decays preferentially into m_s=0, which polarizes the spin and makes
    m_s=+-1 darker.
    """

    def __init__(self, pump_rate=20.0, radiative_rate=1000.0,
                 isc_0=500.0, isc_pm=2000.0, ms_to_gs_0=20.0, ms_to_gs_pm=5.0,
                 mw_rate=50.0):
        self.pump_rate = float(pump_rate)
        self.radiative_rate = float(radiative_rate)
        self.isc_0 = float(isc_0)
        self.isc_pm = float(isc_pm)
        self.ms_to_gs_0 = float(ms_to_gs_0)
        self.ms_to_gs_pm = float(ms_to_gs_pm)
        self.mw_rate = float(mw_rate)
        rates = self.as_dict().values()
        if any(r < 0 for r in rates):
            raise ValueError("rates must be non-negative")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "pump_rate", "radiative_rate", "isc_0", "isc_pm", "ms_to_gs_0",
            "ms_to_gs_pm", "mw_rate")}

    def __eq__(self, other):
        return isinstance(other, OpticalRateModel) and self.as_dict() == other.as_dict()

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.as_dict().items())
        return f"OpticalRateModel({args})"

    @property
    def isc_asymmetry(self) -> float:
        return self.isc_pm / self.isc_0 if self.isc_0 else math.inf

    def with_(self, **changes) -> "OpticalRateModel":
        d = self.as_dict()
        d.update(changes)
        return OpticalRateModel(**d)

    def rate_matrix(self, w_minus=0.0, w_plus=0.0) -> np.ndarray:
        """Generator M (dP/dt = M P), batched over the MW mixing rates."""
        w_minus, w_plus = np.broadcast_arrays(np.asarray(w_minus, float),
                                              np.asarray(w_plus, float))
        m = np.zeros(w_minus.shape + (7, 7))

        def add(src, dst, k):
            m[..., dst, src] += k
            m[..., src, src] -= k

        for gs, es, isc, back in ((0, 3, self.isc_0, self.ms_to_gs_0),
                                  (1, 4, self.isc_pm, self.ms_to_gs_pm),
                                  (2, 5, self.isc_pm, self.ms_to_gs_pm)):
            add(gs, es, self.pump_rate)
            add(es, gs, self.radiative_rate)
            add(es, 6, isc)
            add(6, gs, back)
        add(0, 1, w_minus)
        add(1, 0, w_minus)
        add(0, 2, w_plus)
        add(2, 0, w_plus)
        return m

    def steady_state(self, w_minus=0.0, w_plus=0.0) -> np.ndarray:
        if self.pump_rate <= 0:
            raise DegenerateRateError(
                "pump_rate is zero: ground-state populations are undetermined")
        m = self.rate_matrix(w_minus, w_plus)
        a = m.copy()
        a[..., 0, :] = 1.0
        b = np.zeros(m.shape[:-1])
        b[..., 0] = 1.0
        return np.linalg.solve(a, b[..., None])[..., 0]

    def polarization(self) -> float:
        """Steady-state m_s=0 fraction of the ground state under the laser."""
        p = self.steady_state()
        return float(p[0] / p[:3].sum())


def odmr_steady_state(model: OpticalRateModel, w_minus=0.0, w_plus=0.0):
    """Fluorescence rate (radiative_rate * ES population) in steady state."""
    p = model.steady_state(w_minus, w_plus)
    return model.radiative_rate * p[..., 3:6].sum(axis=-1)


def odmr_contrast(model: OpticalRateModel, w_minus=0.0, w_plus=0.0):
    """Raw relative fluorescence change (F_on - F_off) / F_off."""
    off = odmr_steady_state(model)
    return (odmr_steady_state(model, w_minus, w_plus) - off) / off
