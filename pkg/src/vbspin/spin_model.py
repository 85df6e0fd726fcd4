"""Ground-state spin Hamiltonian of the boron-vacancy (S=1) defect.

Basis ordering is m = +1, 0, -1 for the electron and for every 14N nucleus.
All Hamiltonians are H/h in MHz.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .constants import MU_B_MHZ_PER_MT

DEFAULT_WIDTH_TABLE = ((0.0, 25.0), (10.0, 10.0), (20.0, 2.0), (30.0, 0.2))

ELECTRON_DIM = 3
MS_INDEX = {+1: 0, 0: 1, -1: 2}


@dataclass(frozen=True)
class SpinSystemConfig:
    """Physical parameters of the defect ensemble.

    ``strain_model`` selects how E enters the Hamiltonian. ``"secular"``
    (default) uses E*Sz so that the strain offset and hyperfine shifts add
    linearly on each branch; ``"transverse"`` uses E*(Sx^2 - Sy^2).
    ``width_table`` maps field (mT) to the Gaussian inhomogeneous width (MHz)
    by linear interpolation, clamped at both ends.
    """

    D: float = 3479.0
    E: float = 54.5
    g: float = 1.992
    n_nuclei: int = 3
    A_par: float = 47.0
    A_perp: float = 0.0
    T1: float = 16.377
    T2: float = 0.082121
    B: float = 0.0
    width_table: tuple = DEFAULT_WIDTH_TABLE
    strain_model: str = "secular"

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not 0 <= self.E < self.D:
            raise ValueError(f"E must satisfy 0 <= E < D, got {self.E}")
        if self.A_perp < 0:
            raise ValueError(f"A_perp must be >= 0, got {self.A_perp}")
        if self.n_nuclei not in (0, 1, 2, 3):
            raise ValueError(f"n_nuclei must be in 0..3, got {self.n_nuclei}")
        if not (self.T1 > 0 and self.T2 > 0):
            raise ValueError("T1 and T2 must be positive")
        if self.T2 > 1.5 * self.T1:
            raise ValueError(
                f"T2={self.T2} exceeds 1.5*T1={1.5 * self.T1}; the symmetric "
                "three-level T1 channel already dephases faster than that")
        if self.B < 0:
            raise ValueError(f"B must be >= 0 (field along c), got {self.B}")
        if self.strain_model not in ("secular", "transverse"):
            raise ValueError(f"unknown strain_model {self.strain_model!r}")
        table = tuple((float(b), float(w)) for b, w in self.width_table)
        if not table or any(w < 0 for _, w in table):
            raise ValueError("width_table must be non-empty with widths >= 0")
        object.__setattr__(self, "width_table", table)

    @property
    def zeeman_slope(self) -> float:
        """g * mu_B / h in MHz/mT."""
        return self.g * MU_B_MHZ_PER_MT

    def inhomogeneous_width(self, B: float | None = None) -> float:
        B = self.B if B is None else B
        bs, ws = zip(*sorted(self.width_table))
        return float(np.interp(B, bs, ws))

    def with_(self, **changes) -> "SpinSystemConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class NuclearConfiguration:
    projections: tuple
    weight: float = 1.0

    @property
    def total_mI(self) -> int:
        return int(sum(self.projections))


class Transition(NamedTuple):
    frequency: float
    weight: float
    branch: int  # -1 or +1
    total_mI: int


def spin_operators(s: float):
    """Return (Sx, Sy, Sz) for spin ``s`` in the basis m = s, s-1, ..., -s."""
    two_s = 2 * s
    if two_s < 0 or abs(two_s - round(two_s)) > 1e-12:
        raise ValueError(f"spin must be a non-negative half-integer, got {s}")
    m = s - np.arange(int(round(two_s)) + 1)
    # <m+1|S+|m> = sqrt(s(s+1) - m(m+1))
    splus = np.diag(np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    sminus = splus.conj().T
    sx = 0.5 * (splus + sminus)
    sy = -0.5j * (splus - sminus)
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


SX, SY, SZ = spin_operators(1)
IDENTITY3 = np.eye(3, dtype=complex)


def nuclear_configurations(n_nuclei: int) -> list[NuclearConfiguration]:
    """All 3**n product configurations, equally weighted."""
    w = 1.0 / 3**n_nuclei
    return [NuclearConfiguration(tuple(p), w)
            for p in itertools.product((1, 0, -1), repeat=n_nuclei)]


def nuclear_sectors(n_nuclei: int) -> list[NuclearConfiguration]:
    """Configurations grouped by total m_I, weighted by multiplicity."""
    counts: dict[int, int] = {}
    for p in itertools.product((1, 0, -1), repeat=n_nuclei):
        counts[sum(p)] = counts.get(sum(p), 0) + 1
    total = 3**n_nuclei
    out = []
    for m in sorted(counts, reverse=True):
        # representative projection pattern; only the sum matters in secular mode
        rep = _representative(m, n_nuclei)
        out.append(NuclearConfiguration(rep, counts[m] / total))
    return out


def _representative(total: int, n: int) -> tuple:
    for p in itertools.product((1, 0, -1), repeat=n):
        if sum(p) == total:
            return p
    raise ValueError(total)


def _electron_terms(cfg: SpinSystemConfig, local_shift: float) -> np.ndarray:
    h = cfg.D * SZ @ SZ
    if cfg.strain_model == "secular":
        h = h + cfg.E * SZ
    else:
        h = h + cfg.E * (SX @ SX - SY @ SY)
    h = h + (cfg.zeeman_slope * cfg.B + local_shift) * SZ
    return h


def build_hamiltonian(cfg: SpinSystemConfig,
                      nuclear: NuclearConfiguration | None = None,
                      full_quantum: bool = False,
                      local_shift: float = 0.0) -> np.ndarray:
    """Lab-frame H/h in MHz.

    Secular mode (default) needs ``nuclear`` and returns a 3x3 matrix with
    the nuclear spins replaced by their projections. ``full_quantum=True``
    returns the 3*3**n dimensional operator with quantum nuclear spins.
    ``local_shift`` adds ``local_shift * Sz``, an extra axial offset used for
    inhomogeneous-broadening quadrature.
    """
    h_e = _electron_terms(cfg, local_shift)
    if not full_quantum:
        if nuclear is None:
            raise TypeError("secular mode requires a NuclearConfiguration")
        if len(nuclear.projections) != cfg.n_nuclei:
            raise ValueError("nuclear configuration does not match n_nuclei")
        if cfg.A_perp != 0:
            raise ValueError("A_perp > 0 requires full_quantum=True")
        return h_e + cfg.A_par * nuclear.total_mI * SZ

    n = cfg.n_nuclei
    dim_n = 3**n
    h = np.kron(h_e, np.eye(dim_n))
    for k in range(n):
        ix, iy, iz = (_embed_nuclear(op, k, n) for op in (SX, SY, SZ))
        h = h + cfg.A_par * np.kron(SZ, iz)
        if cfg.A_perp:
            h = h + cfg.A_perp * (np.kron(SX, ix) + np.kron(SY, iy))
    return h


def _embed_nuclear(op: np.ndarray, k: int, n: int) -> np.ndarray:
    mats = [IDENTITY3] * n
    mats[k] = op
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def electron_operator(op: np.ndarray, dim: int) -> np.ndarray:
    """Lift a 3x3 electron operator to a ``dim``-dimensional space."""
    if dim == 3:
        return op
    return np.kron(op, np.eye(dim // 3))


def rotating_frame(h_lab: np.ndarray, f_mw: float, omega_rabi: float,
                   phase: float = 0.0) -> np.ndarray:
    """Transform to the frame rotating at ``f_mw`` and add the RWA drive.

    The frame is generated by Sz^2, so both m_s=0 <-> +-1 transitions appear
    near zero frequency. Matrix elements that change Sz^2 rotate at f_mw in
    this frame and are dropped (rotating-wave approximation); static ones
    (the A_perp flip-flops) are kept to second order in perturbation
    theory, which is where their nuclear-state mixing lives. The drive is
    (omega/sqrt(2)) (cos(phase) Sx + sin(phase) Sy), giving a two-level Rabi
    frequency of ``omega_rabi``.
    """
    if not f_mw > 0:
        raise ValueError(f"f_mw must be positive, got {f_mw}")
    if omega_rabi < 0:
        raise ValueError(f"omega_rabi must be >= 0, got {omega_rabi}")
    dim = h_lab.shape[0]
    sz2 = np.real(np.diag(electron_operator(SZ @ SZ, dim)))
    keep = np.equal.outer(sz2, sz2)
    h = np.where(keep, h_lab, 0.0) + _second_order(h_lab, keep) - f_mw * np.diag(sz2)
    if omega_rabi:
        drive = (omega_rabi / np.sqrt(2)) * (np.cos(phase) * SX + np.sin(phase) * SY)
        h = h + electron_operator(drive, dim)
    h = 0.5 * (h + h.conj().T)
    # couplings detuned by more than FAR_RATIO times their size (e.g. the drive
    # on the far branch at high field) only shift levels; folding them in at
    # second order splits the state space into small independent blocks
    e = np.real(np.diag(h))
    far = np.abs(e[:, None] - e[None, :]) > FAR_RATIO * np.abs(h)
    far &= np.abs(h) > 0
    if np.any(far):
        # corrections only inside groups joined by the retained couplings
        near = np.where(far, 0.0, h)
        _, label = connected_components(np.abs(near) > 0, directed=False)
        h = near + _second_order(h, np.equal.outer(label, label))
        h = 0.5 * (h + h.conj().T)
    return h


FAR_RATIO = 100.0


def _second_order(h_lab: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Second-order (Schrieffer-Wolff) correction for the dropped static
    couplings between Sz^2 blocks, e.g. the A_perp flip-flop terms.

    H_ab += 1/2 sum_k V_ak V_kb (1/(E_a - E_k) + 1/(E_b - E_k)) for a, b in
    the same block and k outside it, with E the lab-frame diagonal.
    """
    v = np.where(keep, 0.0, h_lab)
    if not np.any(v):
        return np.zeros_like(h_lab)
    e = np.real(np.diag(h_lab))
    gap = e[:, None] - e[None, :]
    if np.any(np.abs(gap) < 20 * np.abs(v)):
        raise ValueError("coupling between Sz^2 blocks is not perturbative "
                         "(level anticrossing); the rotating frame is invalid here")
    with np.errstate(divide="ignore"):
        inv = np.where(keep | (gap == 0), 0.0, 1.0 / np.where(keep, 1.0, gap))
    # inv[a, k] = 1 / (E_a - E_k)
    corr = 0.5 * ((v * inv) @ v + v @ (v * inv.T))
    return np.where(keep, corr, 0.0)


def _branch_energies(h: np.ndarray) -> tuple[float, float, float]:
    """(E0, E_minus, E_plus): energies of the m_s=0, -1 and +1 like states."""
    vals, vecs = np.linalg.eigh(h)
    i0 = int(np.argmax(np.abs(vecs[MS_INDEX[0], :]) ** 2))
    a, b = (i for i in range(3) if i != i0)
    wa = abs(vecs[MS_INDEX[-1], a]) ** 2
    wb = abs(vecs[MS_INDEX[-1], b]) ** 2
    if abs(wa - wb) < 1e-9:
        # fully mixed +-1 states (transverse strain at B=0): order by energy
        lo, hi = sorted((vals[a], vals[b]))
    else:
        lo, hi = (vals[a], vals[b]) if wa > wb else (vals[b], vals[a])
    return float(vals[i0]), float(lo), float(hi)


def transition_table(cfg: SpinSystemConfig) -> list[Transition]:
    """m_s=0 <-> lower (branch -1) and upper (branch +1) transition lines.

    Lines are enumerated over total-m_I sectors with multiplicity weights
    and merged when degenerate; weights sum to 1 per branch.
    """
    lines: dict[tuple, list] = {}
    for sec in nuclear_sectors(cfg.n_nuclei):
        h = build_hamiltonian(cfg.with_(A_perp=0.0), sec)
        e0, lo, hi = _branch_energies(h)
        for branch, e in ((-1, lo), (+1, hi)):
            f = e - e0
            key = (branch, round(f, 9))
            if key in lines:
                lines[key][1] += sec.weight
            else:
                lines[key] = [f, sec.weight, sec.total_mI]
    out = [Transition(f, w, b, m) for (b, _), (f, w, m) in lines.items()]
    return sorted(out, key=lambda t: (t.frequency, t.branch))


def branch_center(cfg: SpinSystemConfig, branch: int = -1) -> float:
    """Weighted centroid of one branch of the transition table."""
    lines = [t for t in transition_table(cfg) if t.branch == branch]
    return float(sum(t.frequency * t.weight for t in lines))


def max_hermitian_error(h: np.ndarray) -> float:
    scale = max(np.max(np.abs(h)), 1e-300)
    return float(np.max(np.abs(h - h.conj().T)) / scale)


def projector(ms: int, dim: int = 3) -> np.ndarray:
    p = np.zeros((3, 3), dtype=complex)
    p[MS_INDEX[ms], MS_INDEX[ms]] = 1.0
    return electron_operator(p, dim)


__all__: Sequence[str] = (
    "SpinSystemConfig", "NuclearConfiguration", "Transition", "spin_operators",
    "build_hamiltonian", "rotating_frame", "transition_table",
    "nuclear_configurations", "nuclear_sectors", "branch_center",
    "electron_operator", "projector", "SX", "SY", "SZ",
)
