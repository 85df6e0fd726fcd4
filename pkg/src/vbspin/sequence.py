"""Pulse sequences and their execution on the spin model."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Union

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import expm_multiply

from . import evolution as ev
from .spin_model import (MS_INDEX, SZ, NuclearConfiguration, SpinSystemConfig,
                         build_hamiltonian, electron_operator, rotating_frame)


class UnsupportedFrameError(ValueError):
    """Microwave segments at different carrier frequencies in one sequence."""


@dataclass(frozen=True)
class Laser:
    duration: float = 3.0


@dataclass(frozen=True)
class Microwave:
    duration: float
    f_mw: float
    omega_rabi: float
    phase: float = 0.0


@dataclass(frozen=True)
class Wait:
    duration: float


@dataclass(frozen=True)
class Readout:
    window: float = 0.3


PulseSegment = Union[Laser, Microwave, Wait, Readout]


@dataclass(frozen=True)
class Sweep:
    segment: int
    field: str
    values: tuple


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple
    sweeps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "sweeps", tuple(
            Sweep(s.segment, s.field, tuple(float(v) for v in s.values))
            for s in self.sweeps))
        self.validate()

    def validate(self):
        if sum(isinstance(s, Readout) for s in self.segments) != 1:
            raise ValueError("a sequence needs exactly one Readout segment")
        lengths = set()
        for sw in self.sweeps:
            if not 0 <= sw.segment < len(self.segments):
                raise ValueError(f"sweep references missing segment {sw.segment}")
            seg = self.segments[sw.segment]
            if sw.field not in {f.name for f in fields(seg)}:
                raise ValueError(
                    f"segment {sw.segment} ({type(seg).__name__}) has no field {sw.field!r}")
            lengths.add(len(sw.values))
        if len(lengths) > 1:
            raise ValueError("all sweep bindings must have the same length")
        for i in range(self.n_points):
            for seg in self.resolve(i):
                for f in fields(seg):
                    if f.name in ("duration", "window") and getattr(seg, f.name) < 0:
                        raise ValueError(f"negative {f.name} in {seg}")
        self.frame_frequency()

    @property
    def n_points(self) -> int:
        return len(self.sweeps[0].values) if self.sweeps else 1

    def resolve(self, i: int) -> list:
        segs = list(self.segments)
        for sw in self.sweeps:
            segs[sw.segment] = replace(segs[sw.segment], **{sw.field: sw.values[i]})
        return segs

    def frame_frequency(self) -> float | None:
        freqs = {seg.f_mw for i in range(self.n_points) for seg in self.resolve(i)
                 if isinstance(seg, Microwave)}
        if len(freqs) > 1:
            raise UnsupportedFrameError(
                f"microwave segments use several carriers {sorted(freqs)}; "
                "only a single rotating frame is supported")
        return freqs.pop() if freqs else None


def run_sequence(seq: PulseSequence, cfg: SpinSystemConfig,
                 nuclear: NuclearConfiguration | None = None, *,
                 full_quantum: bool = False, polarization: float = 1.0,
                 c_max: float = 0.03, local_shift=0.0,
                 method: str = "exact", dt: float | None = None) -> np.ndarray:
    """Readout contrast for every sweep point of ``seq``.

    Each point is compared with a reference run in which every microwave
    segment is replaced by free evolution of the same length. Laser segments
    reset the electron with ``polarize``. ``method`` is ``"exact"``
    (Liouvillian exponential) or ``"rk4"`` (fixed-step integration, with the
    step ``dt`` if given, else chosen from the generator norm).

    ``local_shift`` adds ``shift * Sz``; given an array of shifts the result
    has shape (n_shifts, n_points), otherwise (n_points,).

    The exact method splits the state space into blocks that no Hamiltonian,
    jump operator or initial state connects (in full-quantum mode these are
    the sectors of total nuclear m_I) and evolves each block on its own.
    """
    if method not in ("exact", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    shifts = np.atleast_1d(np.asarray(local_shift, dtype=float))
    if shifts.ndim != 1 or shifts.size == 0:
        raise ValueError("local_shift must be a scalar or a 1-D array")
    f_frame = seq.frame_frequency() or cfg.D
    h_lab = build_hamiltonian(cfg, nuclear, full_quantum=full_quantum)
    dim = h_lab.shape[0]
    n_pts = seq.n_points
    points = [seq.resolve(i) for i in range(n_pts)]

    # per segment: {hamiltonian key: [(row, duration), ...]}
    plan = []
    for k, proto in enumerate(seq.segments):
        if isinstance(proto, (Laser, Readout)):
            plan.append(type(proto))
            continue
        groups: dict = {}
        for i, segs in enumerate(points):
            seg = segs[k]
            if seg.duration <= 0:
                continue
            for ref in (False, True):
                key = ((seg.omega_rabi, seg.phase) if isinstance(seg, Microwave) and not ref
                       else (0.0, 0.0))
                groups.setdefault(key, []).append((i + ref * n_pts, seg.duration))
        plan.append(groups)
    keys = sorted({key for g in plan if isinstance(g, dict) for key in g})
    hams = {key: rotating_frame(h_lab, f_frame, *key) for key in keys}
    sz = electron_operator(SZ, dim)
    channels = ev.relaxation_channels(dim, cfg.T1, cfg.T2)
    rho_pol = ev.polarize(np.eye(dim) / dim, polarization)
    n_nuc = dim // 3
    is_p0 = np.zeros(dim, bool)
    is_p0[MS_INDEX[0] * n_nuc:(MS_INDEX[0] + 1) * n_nuc] = True

    blocks = [np.arange(dim)] if method == "rk4" else _blocks(
        list(hams.values()) + [c for _, c in channels] + [rho_pol], dim)
    p0 = np.zeros((shifts.size, 2 * n_pts))
    for b in blocks:
        sub = np.ix_(b, b)
        p0 += _run_block(plan, {k: h[sub] for k, h in hams.items()}, sz[sub],
                         [(r, c[sub]) for r, c in channels], rho_pol[sub], is_p0[b],
                         dim, shifts, n_pts, method, cfg, dt)
    out = c_max * (p0[:, :n_pts] - p0[:, n_pts:])
    return out if np.ndim(local_shift) else out[0]


def _blocks(ops, dim: int) -> list[np.ndarray]:
    """Connected components of the basis states under the given operators."""
    adj = np.zeros((dim, dim), bool)
    for op in ops:
        adj |= np.abs(op) > 0
    n, labels = connected_components(adj | adj.T, directed=False)
    return [np.flatnonzero(labels == i) for i in range(n)]


def _run_block(plan, hams, sz, channels, rho_pol, is_p0, full_dim, shifts,
               n_pts, method, cfg, dt=None):
    d = rho_pol.shape[0]
    states = np.tile((np.eye(d, dtype=complex) / full_dim).reshape(-1),
                     (shifts.size, 2 * n_pts, 1))
    lz = ev.liouvillian(sz, []) if method == "exact" else None
    diag = np.flatnonzero(is_p0) * (d + 1)
    for step in plan:
        if step is Laser:
            states[:] = rho_pol.reshape(-1)
            continue
        if step is Readout:
            return np.real(states[:, :, diag].sum(axis=-1))
        for key, members in step.items():
            h = hams[key]
            idx = np.array([m[0] for m in members])
            durs = np.array([m[1] for m in members])
            if method == "rk4":
                for s, shift in enumerate(shifts):
                    for r, t in zip(idx, durs):
                        rho0 = states[s, r].reshape(d, d)
                        if dt is None:
                            rho = ev.evolve_rk4(rho0, h + shift * sz, cfg.T1, cfg.T2, t)
                        else:
                            steps = max(1, math.ceil(t / dt - 1e-9))
                            rho = ev.evolve_lindblad(rho0, h + shift * sz, cfg.T1, cfg.T2,
                                                     t / steps, steps)
                        states[s, r] = rho.reshape(-1)
            elif d <= _DENSE_MAX_DIM:
                _apply_dense(states, idx, durs, ev.liouvillian(h, channels), lz, shifts)
            else:
                for s, shift in enumerate(shifts):
                    lv = ev.sparse_liouvillian(h + shift * sz, channels)
                    _apply_sparse(states[s], idx, durs, lv)
    raise ValueError("sequence ended without readout")


_DENSE_MAX_DIM = 24
_MAX_EIG_COND = 1e6


def _apply_dense(states, idx, durs, l0, lz, shifts):
    """exp(L_s t) for every shift s and row duration t.

    The Liouvillian is split into its connected components (jumps only move
    populations, so coherence sectors decouple). One eigendecomposition per
    component and shift covers all durations; nearly defective generators
    fall back to scipy's expm. ``lz`` must be diagonal.
    """
    n_comp, label = connected_components(np.abs(l0) > 0, directed=False)
    uniq, inv = np.unique(durs, return_inverse=True)
    rows = idx[:, None]
    for c in range(n_comp):
        m = np.flatnonzero(label == c)
        sub = states[:, rows, m]
        if m.size == 1:
            rate = l0[m[0], m[0]] + shifts * lz[m[0], m[0]]
            states[:, rows, m] = sub * np.exp(rate[:, None, None] * uniq[inv][None, :, None])
            continue
        ls = l0[np.ix_(m, m)][None] + shifts[:, None, None] * np.diag(lz)[m][None, None, :] \
            * np.eye(m.size)[None]
        w, v = np.linalg.eig(ls)
        try:
            vinv = np.linalg.inv(v)
            cond = (np.abs(v).sum(axis=1).max(axis=-1)
                    * np.abs(vinv).sum(axis=1).max(axis=-1))
        except np.linalg.LinAlgError:
            vinv = np.zeros_like(v)
            cond = np.full(shifts.size, np.inf)
        bad = ~(cond < _MAX_EIG_COND)
        coef = sub @ np.swapaxes(vinv, 1, 2)
        coef *= np.exp(w[:, None, :] * uniq[None, :, None])[:, inv]
        out = coef @ np.swapaxes(v, 1, 2)
        for s in np.flatnonzero(bad):
            props = scipy.linalg.expm(ls[s][None] * uniq[:, None, None])
            out[s] = np.einsum("kij,kj->ki", props[inv], sub[s])
        states[:, rows, m] = out


def _apply_sparse(states, idx, durs, lv):
    """Advance rows by their durations, sharing work across sorted durations."""
    order = np.argsort(durs, kind="stable")
    idx, durs = idx[order], durs[order]
    block = states[idx].T.copy()
    done = 0.0
    start = 0
    for t in np.unique(durs):
        dt = t - done
        if dt > 0:
            block[:, start:] = expm_multiply(lv * dt, block[:, start:])
        done = t
        while start < len(durs) and durs[start] == t:
            start += 1
    states[idx] = block.T


def sequence_span(seq: PulseSequence) -> float:
    """Longest microwave-plus-wait time over all sweep points (us)."""
    best = 0.0
    for i in range(seq.n_points):
        t = sum(s.duration for s in seq.resolve(i) if isinstance(s, (Microwave, Wait)))
        best = max(best, t)
    return best
