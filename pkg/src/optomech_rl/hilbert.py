"""Truncated mode operators, displaced-Fock overlaps and resonance bookkeeping.

Frequencies are measured in units of a reference frequency (the mechanical
frequency of the single resonator, or of mechanical mode 1 in the
two-resonator system). Joint basis ordering is cavity slowest, then
mechanical mode 1, then mechanical mode 2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .targets import TargetSpec

DEFAULT_MARGIN = 10.0


@dataclass(frozen=True)
class ModeSpace:
    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"mode dimension must be an integer >= 2, got {self.dim!r}")


@dataclass(frozen=True)
class SystemConfig:
    """Physical and truncation parameters of a one- or two-resonator system.

    Per-mechanical-mode quantities are tuples of length 1 (``kind='single'``)
    or 2 (``kind='double'``). Use :meth:`single` / :meth:`double` to build.
    """

    kind: str
    omega_m: tuple[float, ...]
    g0: tuple[float, ...]
    kappa: float
    gamma_m: tuple[float, ...]
    n_th: tuple[float, ...]
    nc: int
    nm: tuple[int, ...]

    def __post_init__(self):
        nmodes = {"single": 1, "double": 2}.get(self.kind)
        if nmodes is None:
            raise ValueError(f"kind must be 'single' or 'double', got {self.kind!r}")
        for name in ("omega_m", "g0", "gamma_m", "n_th", "nm"):
            if len(getattr(self, name)) != nmodes:
                raise ValueError(f"{name} needs {nmodes} entr{'y' if nmodes == 1 else 'ies'}")
        if any(not (w > 0 and math.isfinite(w)) for w in self.omega_m):
            raise ValueError("mechanical frequencies must be positive and finite")
        if any(not math.isfinite(g) for g in self.g0):
            raise ValueError("couplings must be finite")
        if not (self.kappa >= 0 and math.isfinite(self.kappa)):
            raise ValueError("kappa must be >= 0")
        if any(not (g >= 0 and math.isfinite(g)) for g in self.gamma_m):
            raise ValueError("gamma_m must be >= 0")
        if any(not (n >= 0 and math.isfinite(n)) for n in self.n_th):
            raise ValueError("n_th must be >= 0")
        ModeSpace(self.nc)
        for d in self.nm:
            ModeSpace(d)

    @classmethod
    def single(cls, g0, *, omega_m=1.0, kappa=0.0, gamma_m=0.0, n_th=0.0, nc=3, nm=10):
        return cls("single", (float(omega_m),), (float(g0),), float(kappa), (float(gamma_m),),
                   (float(n_th),), int(nc), (int(nm),))

    @classmethod
    def double(cls, g01, g02, *, omega_m1=1.0, omega_m2=1.0, kappa=0.0, gamma_m1=0.0,
               gamma_m2=0.0, n_th1=0.0, n_th2=0.0, nc=3, nm1=5, nm2=5):
        return cls("double", (float(omega_m1), float(omega_m2)), (float(g01), float(g02)),
                   float(kappa), (float(gamma_m1), float(gamma_m2)), (float(n_th1), float(n_th2)),
                   int(nc), (int(nm1), int(nm2)))

    @property
    def n_modes(self) -> int:
        return len(self.omega_m)

    @property
    def beta(self) -> tuple[float, ...]:
        return tuple(g / w for g, w in zip(self.g0, self.omega_m))

    @property
    def chi(self) -> tuple[float, ...]:
        return tuple(g * g / w for g, w in zip(self.g0, self.omega_m))

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.nc, *self.nm)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class DetuningSet:
    """Carrier detunings, one per pulse, plus the phonon shift each one addresses.

    ``shifts[l]`` is the per-mode phonon-number offset N_l of the transition
    |1, ~n(1)> <-> |0, n + N_l> that pulse ``l`` is resonant with; the first
    pulse has zero shift (the |0,n> <-> |1,~n(1)> "up" transition).
    """

    deltas: tuple[float, ...]
    shifts: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        if len(self.deltas) < 1:
            raise ValueError("need at least one detuning")
        if self.shifts and len(self.shifts) != len(self.deltas):
            raise ValueError("shifts must match deltas in length")

    def __len__(self):
        return len(self.deltas)


# ---------------------------------------------------------------------------
# operators


def annihilation_op(space: ModeSpace | int) -> np.ndarray:
    dim = space.dim if isinstance(space, ModeSpace) else ModeSpace(space).dim
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def displacement_matrix(beta: float, space: ModeSpace | int) -> np.ndarray:
    """exp[beta (b^dag - b)] on the truncated space."""
    b = annihilation_op(space)
    return expm(beta * (b.conj().T - b))


def laguerre_assoc(n: int, k: int, x: float) -> float:
    """Associated Laguerre polynomial L_n^k(x) by upward recurrence in n."""
    if n < 0:
        raise ValueError("degree must be non-negative")
    prev, cur = 1.0, 1.0 + k - x
    if n == 0:
        return prev
    for j in range(1, n):
        prev, cur = cur, ((2 * j + 1 + k - x) * cur - (j + k) * prev) / (j + 1)
    return cur


def displaced_fock_coeff(m: int, n: int, s: int, beta: float) -> float:
    """sqrt(m) <n| exp[-beta (b^dag - b)] |s>, closed form via Laguerre polynomials."""
    pref = math.sqrt(m) * math.exp(-beta * beta / 2.0)
    x = beta * beta
    if n < s:
        return pref * math.sqrt(math.factorial(n) / math.factorial(s)) * beta ** (s - n) \
            * laguerre_assoc(n, s - n, x)
    return pref * math.sqrt(math.factorial(s) / math.factorial(n)) * (-beta) ** (n - s) \
        * laguerre_assoc(s, n - s, x)


def overlap_matrix(beta: float, dim: int) -> np.ndarray:
    """Matrix of <n|D(-beta)|s> for n, s < dim from the closed form."""
    return np.array([[displaced_fock_coeff(1, n, s, beta) for s in range(dim)] for n in range(dim)])


def root_diagnostic(cfg: SystemConfig, shift: int, mode: int = 0) -> float:
    """|A^{(1)}_{N,N}| for phonon index N; small values suppress the N -> ~N(1) leak."""
    return abs(displaced_fock_coeff(1, shift, shift, cfg.beta[mode]))


# ---------------------------------------------------------------------------
# spectrum and resonances


def eigenenergy_single(m: int, n: int, cfg: SystemConfig) -> float:
    if cfg.kind != "single":
        raise ValueError("eigenenergy_single needs a single-resonator config")
    return n * cfg.omega_m[0] - m * m * cfg.chi[0]


def eigenenergy_double(m: int, n1: int, n2: int, cfg: SystemConfig) -> float:
    if cfg.kind != "double":
        raise ValueError("eigenenergy_double needs a two-resonator config")
    return n1 * cfg.omega_m[0] + n2 * cfg.omega_m[1] - (cfg.chi[0] + cfg.chi[1]) * m * m


def carrier_detunings(target: TargetSpec, cfg: SystemConfig) -> DetuningSet:
    """Carrier detunings addressing the transitions needed for ``target``.

    The first pulse pumps |0,0> -> |1,~0(1)>; each nonzero target component
    |N> gets a pulse resonant with |1,~0(1)> -> |0,N>. A vacuum component
    needs no extra pulse.
    """
    if target.n_modes != cfg.n_modes:
        raise ValueError(f"target addresses {target.n_modes} mode(s), system has {cfg.n_modes}")
    if target.family not in ("fock", "superposition", "bell"):
        raise ValueError(f"unsupported target family {target.family!r}")
    base = -sum(cfg.chi)
    zero = (0,) * cfg.n_modes
    deltas, shifts = [base], [zero]
    indices = [idx for idx, _ in target.components if idx != zero]
    if target.family == "superposition":
        indices = sorted(indices)
    for idx in indices:
        deltas.append(base - sum(k * w for k, w in zip(idx, cfg.omega_m)))
        shifts.append(tuple(idx))
    return DetuningSet(tuple(deltas), tuple(shifts))


@dataclass
class OffResonanceReport:
    passed: bool
    worst_ratio: float
    worst_pulse: int | None
    worst_index: tuple[int, ...] | None
    margin: float
    limits: tuple[float, ...]

    def __str__(self):
        state = "PASS" if self.passed else "FAIL"
        where = "" if self.worst_index is None else f" at pulse {self.worst_pulse}, (n..., s...)={self.worst_index}"
        return f"{state}: worst |delta|/(|A| Omega_max) = {self.worst_ratio:.4g} (margin {self.margin:g}){where}"


def _two_photon_tables(cfg: SystemConfig, detunings: DetuningSet):
    """Per pulse: |detuning| and |A^{(2)}| over all |1,s~(1)> -> |2,n~(2)> pairs.

    Index tuples are (n_1..n_k, s_1..s_k) over the mechanical truncation.
    """
    nm = cfg.nm
    overlaps = [np.abs(overlap_matrix(b, d)) for b, d in zip(cfg.beta, nm)]
    chi_tot = sum(cfg.chi)
    idx = list(itertools.product(*(range(d) for d in nm), *(range(d) for d in nm)))
    idx_arr = np.array(idx, dtype=int)
    k = cfg.n_modes
    n, s = idx_arr[:, :k], idx_arr[:, k:]
    coeff = math.sqrt(2.0) * np.ones(len(idx))
    for mode in range(k):
        coeff *= overlaps[mode][n[:, mode], s[:, mode]]
    # delta_{2,n,s} = E_{2,n} - E_{1,s}
    delta2 = (n - s) @ np.asarray(cfg.omega_m) - 3.0 * chi_tot
    tables = []
    for d in detunings.deltas:
        tables.append((np.abs(delta2 - d), coeff))
    return idx, tables


def offresonance_limits(cfg: SystemConfig, detunings: DetuningSet) -> tuple[float, ...]:
    """Per pulse, the drive amplitude at which |detuning| = |A^{(2)}| Omega first holds."""
    _, tables = _two_photon_tables(cfg, detunings)
    out = []
    for det, coeff in tables:
        with np.errstate(divide="ignore"):
            ratio = np.where(coeff > 0, det / np.where(coeff > 0, coeff, 1.0), np.inf)
        out.append(float(ratio.min()))
    return tuple(out)


def validate_offresonance(omega_max, cfg: SystemConfig, detunings: DetuningSet,
                          margin: float = DEFAULT_MARGIN) -> OffResonanceReport:
    """Check that no pulse drives the one- to two-photon manifold resonantly.

    Passes when |delta - Delta_l| > margin |A^{(2)}_{n,s}| Omega_max^{(l)} for
    every pulse and every pair within the truncation. ``omega_max`` is a
    scalar or one value per pulse.
    """
    if margin <= 1:
        raise ValueError("margin must exceed 1")
    om = np.broadcast_to(np.asarray(omega_max, dtype=float), (len(detunings),))
    if np.any(om < 0):
        raise ValueError("omega_max must be non-negative")
    idx, tables = _two_photon_tables(cfg, detunings)
    worst, worst_l, worst_i = math.inf, None, None
    limits = []
    for l, (det, coeff) in enumerate(tables):
        with np.errstate(divide="ignore"):
            ratio = np.where(coeff > 0, det / np.where(coeff > 0, coeff, 1.0), np.inf)
        j = int(np.argmin(ratio))
        limits.append(float(ratio[j]))
        r = math.inf if om[l] == 0 else float(ratio[j]) / float(om[l])
        if r < worst:
            worst, worst_l, worst_i = r, l, idx[j]
    return OffResonanceReport(worst > margin, worst, worst_l, worst_i, float(margin), tuple(limits))


# ---------------------------------------------------------------------------
# effective model


def effective_basis_index(cfg: SystemConfig, m: int, ns) -> int:
    """Index of |m, ~n(m)> in the two-manifold (m = 0, 1) effective basis."""
    ns = tuple(ns)
    return m * int(np.prod(cfg.nm)) + int(np.ravel_multi_index(ns, cfg.nm))


def build_effective_hamiltonian(cfg: SystemConfig, detunings: DetuningSet, amplitudes) -> np.ndarray:
    """Resonant-transition Hamiltonian on span{|0,n>, |1,~n(1)>} (interaction picture).

    Basis ordering: all zero-photon states first (mechanical indices row-major),
    then the one-photon displaced states.
    """
    amplitudes = np.asarray(amplitudes, dtype=float).ravel()
    if len(amplitudes) != len(detunings):
        raise ValueError("need one amplitude per detuning")
    shifts = detunings.shifts or _infer_shifts(cfg, detunings)
    nm = cfg.nm
    nmech = int(np.prod(nm))
    overlaps = [overlap_matrix(b, d) for b, d in zip(cfg.beta, nm)]
    h = np.zeros((2 * nmech, 2 * nmech), dtype=complex)
    for amp, shift in zip(amplitudes, shifts):
        if amp == 0.0:
            continue
        for ns in itertools.product(*(range(d) for d in nm)):
            target = tuple(n + k for n, k in zip(ns, shift))
            if any(t >= d for t, d in zip(target, nm)):
                continue
            coeff = 1.0
            for mode in range(cfg.n_modes):
                coeff *= overlaps[mode][ns[mode], target[mode]]
            h[effective_basis_index(cfg, 1, ns), effective_basis_index(cfg, 0, target)] += amp * coeff
    return h + h.conj().T


def _infer_shifts(cfg: SystemConfig, detunings: DetuningSet):
    if cfg.n_modes != 1:
        raise ValueError("two-mode detuning sets must carry explicit phonon shifts")
    chi, w = cfg.chi[0], cfg.omega_m[0]
    return tuple((int(round((-d - chi) / w)),) for d in detunings.deltas)
