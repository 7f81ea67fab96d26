"""Episodic state-preparation environment around the dressed master equation."""

from __future__ import annotations

import math

import numpy as np

from .diagnostics import mechanical_state
from .dynamics import PulseSchedule, default_substeps, evolve_step, vacuum_state
from .hilbert import SystemConfig, carrier_detunings
from .targets import TargetSpec

FIDELITY_CAP = 1.0 - 1e-12
FIDELITY_MODES = ("reduced", "joint")


def vectorize_state(rho: np.ndarray) -> np.ndarray:
    """Real parts row-major, then imaginary parts row-major (length 2 D^2)."""
    rho = np.asarray(rho)
    return np.concatenate([rho.real.ravel(), rho.imag.ravel()])


def devectorize_state(obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs)
    half = obs.size // 2
    d = math.isqrt(half)
    if 2 * d * d != obs.size:
        raise ValueError(f"observation length {obs.size} is not 2 D^2")
    return (obs[:half] + 1j * obs[half:]).reshape(d, d)


def reward_from_fidelity(f: float) -> float:
    """-10 log10(1 - F), with F capped just below 1."""
    return -10.0 * math.log1p(-min(float(f), FIDELITY_CAP)) / math.log(10.0)


def target_fidelity(rho: np.ndarray, target: TargetSpec, cfg: SystemConfig, mode: str = "reduced") -> float:
    psi = target.state_vector(cfg.nm)
    if mode == "reduced":
        rb = mechanical_state(rho, cfg)
        val = np.vdot(psi, rb @ psi)
    elif mode == "joint":
        # <0_a, psi| rho |0_a, psi>: the mechanical block of the zero-photon sector
        n = psi.size
        val = np.vdot(psi, rho[:n, :n] @ psi)
    else:
        raise ValueError(f"fidelity mode must be one of {FIDELITY_MODES}")
    return float(val.real)


def reward(rho_next: np.ndarray, target: TargetSpec, cfg: SystemConfig, mode: str = "reduced") -> float:
    return reward_from_fidelity(target_fidelity(rho_next, target, cfg, mode))


class EpisodeFinished(RuntimeError):
    pass


class StatePrepEnv:
    """One pulsed episode: S control steps of length T/S starting from vacuum.

    The agent sees the full joint density matrix through
    :func:`vectorize_state`; its action sets the L pulse amplitudes of the
    current step.
    """

    def __init__(self, cfg: SystemConfig, target: TargetSpec, T: float, S: int, omega_max: float = 0.2,
                 fidelity_mode: str = "reduced", n_sub: int | None = None, check: bool = True,
                 detunings=None):
        if fidelity_mode not in FIDELITY_MODES:
            raise ValueError(f"fidelity mode must be one of {FIDELITY_MODES}")
        if S < 1 or not T > 0 or not omega_max > 0:
            raise ValueError("need S >= 1, T > 0, omega_max > 0")
        self.cfg = cfg
        self.target = target
        self.T = float(T)
        self.S = int(S)
        self.omega_max = float(omega_max)
        self.fidelity_mode = fidelity_mode
        self.detunings = detunings or carrier_detunings(target, cfg)
        self.check = check
        self._psi = target.state_vector(cfg.nm)
        self._amps = np.zeros((self.S, self.n_actions))
        probe = PulseSchedule(self.detunings, self._amps, self.T)
        self.n_sub = default_substeps(probe, cfg) if n_sub is None else int(n_sub)
        self.rho = None
        self.step_count = 0
        self.fidelity = float("nan")

    @property
    def n_actions(self) -> int:
        return len(self.detunings)

    @property
    def obs_size(self) -> int:
        return 2 * self.cfg.dim ** 2

    @property
    def dt(self) -> float:
        return self.T / self.S

    def reset(self) -> np.ndarray:
        self.rho = vacuum_state(self.cfg)
        self.step_count = 0
        self._amps = np.zeros((self.S, self.n_actions))
        self.fidelity = target_fidelity(self.rho, self.target, self.cfg, self.fidelity_mode)
        return vectorize_state(self.rho)

    @property
    def done(self) -> bool:
        return self.rho is not None and self.step_count >= self.S

    def step(self, action):
        if self.rho is None:
            raise EpisodeFinished("call reset() before step()")
        if self.done:
            raise EpisodeFinished(f"episode already finished after {self.S} steps")
        action = np.asarray(action, dtype=float).ravel()
        if action.size != self.n_actions:
            raise ValueError(f"expected {self.n_actions} amplitudes, got {action.size}")
        s = self.step_count
        self._amps[s] = np.clip(action, -self.omega_max, self.omega_max)
        sched = PulseSchedule(self.detunings, self._amps, self.T)
        self.rho = evolve_step(self.rho, s * self.dt, sched, self.cfg, n_sub=self.n_sub, check=self.check)
        self.step_count += 1
        self.fidelity = target_fidelity(self.rho, self.target, self.cfg, self.fidelity_mode)
        return vectorize_state(self.rho), reward_from_fidelity(self.fidelity), self.done

    def schedule(self) -> PulseSchedule:
        """Amplitudes applied so far (unapplied steps are zero)."""
        return PulseSchedule(self.detunings, self._amps.copy(), self.T, self.omega_max)

    def rollout(self, amplitudes):
        """Replay a full amplitude table; returns per-step fidelities (S+1 values) and states."""
        self.reset()
        fids, states = [self.fidelity], [self.rho]
        for row in np.asarray(amplitudes, dtype=float):
            self.step(row)
            fids.append(self.fidelity)
            states.append(self.rho)
        return np.array(fids), states
