"""Rotating-frame Hamiltonians, dressed Lindblad right-hand side and RK4 propagation.

Density matrices are plain complex ``numpy`` arrays over the joint space
(cavity index slowest). Evolution never renormalizes the trace: drift in
Tr(rho) is reported, not hidden.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .hilbert import (
    DetuningSet,
    SystemConfig,
    annihilation_op,
    build_effective_hamiltonian,
    effective_basis_index,
)

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-6
POSITIVITY_TOL = -1e-7
MAX_PHASE_PER_SUBSTEP = 0.05


class PhysicsInvariantError(RuntimeError):
    """A density matrix left the physical domain beyond tolerance."""


@dataclass(frozen=True)
class PulseSchedule:
    """Piecewise-constant real amplitudes (S steps x L pulses) on [0, T]."""

    detunings: DetuningSet
    amplitudes: np.ndarray
    T: float
    omega_max: float | None = None

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=float)
        if amps.ndim == 1:
            amps = amps.reshape(-1, len(self.detunings))
        if amps.ndim != 2 or amps.shape[1] != len(self.detunings) or amps.shape[0] < 1:
            raise ValueError(f"amplitudes must be (S, {len(self.detunings)}), got {amps.shape}")
        if not (self.T > 0):
            raise ValueError("T must be positive")
        if self.omega_max is not None and np.any(np.abs(amps) > self.omega_max * (1 + 1e-12)):
            raise ValueError(f"amplitude exceeds omega_max={self.omega_max}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def S(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def dt(self) -> float:
        return self.T / self.S

    @classmethod
    def zeros(cls, detunings: DetuningSet, S: int, T: float, omega_max=None):
        return cls(detunings, np.zeros((S, len(detunings))), T, omega_max)

    def step_index(self, t: float) -> int:
        if t < -1e-12 * self.T or t > self.T * (1 + 1e-12):
            raise ValueError(f"t={t} outside episode [0, {self.T}]")
        return min(max(int(math.floor(t / self.dt + 1e-9)), 0), self.S - 1)

    def times(self) -> np.ndarray:
        return np.arange(self.S + 1) * self.dt


@dataclass(frozen=True)
class Operators:
    """Operators on the joint truncated space for one :class:`SystemConfig`."""

    a: np.ndarray
    adag: np.ndarray
    n_a: np.ndarray
    b: tuple[np.ndarray, ...]
    h0: np.ndarray
    jumps: tuple[tuple[float, np.ndarray], ...]
    k0: np.ndarray


def _embed(op, position, dims):
    mats = [np.eye(d) for d in dims]
    mats[position] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out.astype(complex)


def thermal_dephasing_rate(gamma_m: float, beta: float, n_th: float) -> float:
    """4 gamma (k_B T / omega) beta^2, with k_B T / omega = 1 / ln(1 + 1/n_th)."""
    if n_th <= 0.0:
        return 0.0
    return 4.0 * gamma_m * beta * beta / math.log1p(1.0 / n_th)


@functools.lru_cache(maxsize=16)
def operators(cfg: SystemConfig) -> Operators:
    dims = cfg.dims
    a = _embed(annihilation_op(cfg.nc), 0, dims)
    adag = a.conj().T
    n_a = adag @ a
    bs = tuple(_embed(annihilation_op(d), k + 1, dims) for k, d in enumerate(cfg.nm))
    h0 = np.zeros_like(a)
    jumps = []
    for b, w, g, gam, nth, beta in zip(bs, cfg.omega_m, cfg.g0, cfg.gamma_m, cfg.n_th, cfg.beta):
        bdag = b.conj().T
        h0 += w * bdag @ b - g * n_a @ (bdag + b)
        jumps.append((gam * (nth + 1.0), b - beta * n_a))
        jumps.append((gam * nth, bdag - beta * n_a))
        jumps.append((thermal_dephasing_rate(gam, beta, nth), n_a))
    jumps.append((cfg.kappa, a))
    jumps = tuple((float(r), op) for r, op in jumps if r > 0.0)
    decay = sum((r * op.conj().T @ op for r, op in jumps), np.zeros_like(a))
    k0 = -1j * h0 - 0.5 * decay
    for arr in (a, adag, n_a, h0, k0, *bs):
        arr.setflags(write=False)
    return Operators(a, adag, n_a, bs, h0, jumps, k0)


def drive_envelope(t: float, amps_row: np.ndarray, deltas) -> complex:
    """z(t) = sum_l Omega_l exp(-i Delta_l t); the drive is z a^dag + h.c."""
    return complex(np.sum(amps_row * np.exp(-1j * np.asarray(deltas) * t)))


def hamiltonian_at(t: float, sched: PulseSchedule, cfg: SystemConfig) -> np.ndarray:
    ops = operators(cfg)
    z = drive_envelope(t, sched.amplitudes[sched.step_index(t)], sched.detunings.deltas)
    return ops.h0 + z * ops.adag + np.conj(z) * ops.a


def lindblad_dissipator(o: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D[o] rho = (2 o rho o^dag - rho o^dag o - o^dag o rho) / 2."""
    o = np.asarray(o)
    rho = np.asarray(rho)
    if o.shape != rho.shape or o.ndim != 2 or o.shape[0] != o.shape[1]:
        raise ValueError(f"shape mismatch: operator {o.shape} vs state {rho.shape}")
    od = o.conj().T
    odo = od @ o
    return (2.0 * o @ rho @ od - rho @ odo - odo @ rho) / 2.0


def master_rhs(rho: np.ndarray, t: float, sched: PulseSchedule, cfg: SystemConfig) -> np.ndarray:
    """Dressed master equation d rho/dt, written term by term."""
    rho = np.asarray(rho)
    if rho.shape != (cfg.dim, cfg.dim):
        raise ValueError(f"state shape {rho.shape} does not match system dimension {cfg.dim}")
    if not np.all(np.isfinite(rho)):
        raise PhysicsInvariantError("state contains non-finite entries")
    h = hamiltonian_at(t, sched, cfg)
    out = 1j * (rho @ h - h @ rho)
    for rate, op in operators(cfg).jumps:
        out += rate * lindblad_dissipator(op, rho)
    return out


def default_substeps(sched: PulseSchedule, cfg: SystemConfig) -> int:
    fastest = max(max(abs(d) for d in sched.detunings.deltas), *cfg.omega_m, *(abs(g) for g in cfg.g0))
    return max(1, math.ceil(fastest * sched.dt / MAX_PHASE_PER_SUBSTEP - 1e-9))


def _rk4(rho, t0, h, n_sub, amps_row, deltas, ops):
    """Fixed-step RK4 of K rho + rho K^dag + sum_j r_j c_j rho c_j^dag.

    K = K0 - i (z a^dag + z* a) with K0 = -i H0 - (1/2) sum_j r_j c_j^dag c_j.
    """
    k0, adag, a = ops.k0, ops.adag, ops.a
    jumps = [(r, c, c.conj().T) for r, c in ops.jumps]
    deltas = np.asarray(deltas, dtype=float)
    drive = bool(np.any(amps_row != 0.0))

    def rhs(t, x):
        if drive:
            z = complex(np.dot(amps_row, np.exp(-1j * deltas * t)))
            k = k0 - 1j * (z * adag + z.conjugate() * a)
        else:
            k = k0
        kx = k @ x
        out = kx + kx.conj().T
        for r, c, cd in jumps:
            out += r * (c @ x @ cd)
        return out

    for j in range(n_sub):
        t = t0 + j * h
        k1 = rhs(t, rho)
        k2 = rhs(t + 0.5 * h, rho + (0.5 * h) * k1)
        k3 = rhs(t + 0.5 * h, rho + (0.5 * h) * k2)
        k4 = rhs(t + h, rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return rho


def check_state(rho: np.ndarray, *, trace_tol=TRACE_TOL, herm_tol=HERMITICITY_TOL,
                min_eig=POSITIVITY_TOL) -> dict:
    """Measure the density-matrix invariants; raise when one is violated."""
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    tr_err = abs(complex(np.trace(rho)) - 1.0)
    lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    stats = {"hermiticity": herm, "trace_error": tr_err, "min_eigenvalue": lam}
    if not (herm <= herm_tol and tr_err <= trace_tol and lam >= min_eig):
        raise PhysicsInvariantError(f"density-matrix invariant violated: {stats}")
    return stats


def evolve_step(rho: np.ndarray, t: float, sched: PulseSchedule, cfg: SystemConfig,
                n_sub: int | None = None, check: bool = True) -> np.ndarray:
    """Advance ``rho`` from grid time ``t`` by one control step."""
    s = int(round(t / sched.dt))
    if abs(s * sched.dt - t) > 1e-9 * max(1.0, sched.T) or not 0 <= s < sched.S:
        raise ValueError(f"t={t} is not a step start on the control grid")
    n_sub = default_substeps(sched, cfg) if n_sub is None else int(n_sub)
    if n_sub < 1 or n_sub > 1e12:
        raise ValueError(f"integration step underflow (n_sub={n_sub})")
    h = sched.dt / n_sub
    out = _rk4(np.asarray(rho, dtype=complex), s * sched.dt, h, n_sub,
               sched.amplitudes[s], sched.detunings.deltas, operators(cfg))
    out = 0.5 * (out + out.conj().T)
    if check:
        check_state(out)
    return out


def evolve_episode(rho0: np.ndarray, sched: PulseSchedule, cfg: SystemConfig, record: bool = True,
                   n_sub: int | None = None, check: bool = True):
    """Propagate over all S steps; returns S+1 states, or the final state if not recording."""
    rho = np.asarray(rho0, dtype=complex)
    if check:
        check_state(rho)
    traj = [rho] if record else None
    for s in range(sched.S):
        rho = evolve_step(rho, s * sched.dt, sched, cfg, n_sub=n_sub, check=check)
        if record:
            traj.append(rho)
    return traj if record else rho


def vacuum_state(cfg: SystemConfig) -> np.ndarray:
    rho = np.zeros((cfg.dim, cfg.dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def product_state(*factors) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for f in factors:
        f = np.asarray(f, dtype=complex)
        if f.ndim == 1:
            f = np.outer(f, f.conj())
        out = np.kron(out, f)
    return out


# ---------------------------------------------------------------------------
# effective-model cross-check


def displaced_projector(cfg: SystemConfig, m: int, ns, guard: int = 30) -> np.ndarray:
    """|m, ~n(m)><m, ~n(m)| on the joint truncated space."""
    from .hilbert import displacement_matrix

    vecs = []
    for beta, d, n in zip(cfg.beta, cfg.nm, ns):
        big = displacement_matrix(m * beta, d + guard)[:, n]
        vecs.append(big[:d])
    cav = np.zeros(cfg.nc)
    cav[m] = 1.0
    psi = cav.astype(complex)
    for v in vecs:
        psi = np.kron(psi, v)
    return np.outer(psi, psi.conj())


def effective_populations(cfg: SystemConfig, detunings: DetuningSet, amplitudes, times, initial=None):
    """Populations of the effective basis states under constant amplitudes.

    Returns an array of shape (len(times), 2 * prod(nm)), ordered like
    :func:`build_effective_hamiltonian`.
    """
    h = build_effective_hamiltonian(cfg, detunings, amplitudes)
    psi0 = np.zeros(h.shape[0], dtype=complex)
    if initial is None:
        psi0[0] = 1.0
    else:
        psi0[effective_basis_index(cfg, *initial)] = 1.0
    out = []
    for t in times:
        psi = expm(-1j * h * t) @ psi0
        out.append(np.abs(psi) ** 2)
    return np.array(out)


# ---------------------------------------------------------------------------
# trajectory export


def trajectory_rows(traj, sched: PulseSchedule, fidelities=None):
    """Rows (step, t, trace_error, fidelity, purity) for a recorded episode."""
    rows = []
    for s, rho in enumerate(traj):
        fid = float("nan") if fidelities is None else float(fidelities[s])
        rows.append((s, s * sched.dt, abs(complex(np.trace(rho)) - 1.0), fid,
                     float(np.real(np.vdot(rho, rho)))))
    return rows


def write_trajectory_csv(path, rows, extra_columns=None):
    header = ["step", "t", "trace_error", "fidelity", "purity"]
    if extra_columns:
        header += list(extra_columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
