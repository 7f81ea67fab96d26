"""State characterization: fidelity, reduced states, Wigner grids, entanglement."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .hilbert import laguerre_assoc
from .targets import TargetSpec

WIGNER_EXTENT = 4.0
WIGNER_POINTS = 81


def fidelity(rho_b: np.ndarray, target) -> float:
    """<psi| rho_b |psi> for a pure target (TargetSpec or state vector)."""
    rho_b = np.asarray(rho_b)
    if isinstance(target, TargetSpec):
        n_modes = target.n_modes
        if n_modes == 1:
            dims = (rho_b.shape[0],)
        else:
            raise ValueError("pass an explicit state vector for multi-mode targets, "
                             "or use target.state_vector(dims)")
        psi = target.state_vector(dims)
    else:
        psi = np.asarray(target, dtype=complex).ravel()
    if rho_b.shape != (psi.size, psi.size):
        raise ValueError(f"state {rho_b.shape} incompatible with target of length {psi.size}")
    val = np.vdot(psi, rho_b @ psi)
    if abs(val.imag) > 1e-12 * max(1.0, abs(val.real)):
        raise ValueError(f"fidelity has imaginary residue {val.imag:g}; state not Hermitian?")
    return float(val.real)


def partial_trace(rho: np.ndarray, dims, keep) -> np.ndarray:
    """Reduced state on the subsystems listed in ``keep`` (indices into ``dims``)."""
    dims = tuple(int(d) for d in dims)
    keep = sorted({int(k) for k in np.atleast_1d(keep)})
    if not keep or keep[0] < 0 or keep[-1] >= len(dims):
        raise ValueError(f"bad subsystem selector {keep} for dims {dims}")
    rho = np.asarray(rho)
    n = len(dims)
    if rho.shape != (int(np.prod(dims)),) * 2:
        raise ValueError(f"state shape {rho.shape} does not match dims {dims}")
    t = rho.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    ket = list(letters[:n])
    bra = list(letters[n:2 * n])
    for k in range(n):
        if k not in keep:
            bra[k] = ket[k]
    out = "".join(ket[k] for k in keep) + "".join(bra[k] for k in keep)
    red = np.einsum("".join(ket) + "".join(bra) + "->" + out, t)
    d = int(np.prod([dims[k] for k in keep]))
    return red.reshape(d, d)


def mechanical_state(rho: np.ndarray, cfg) -> np.ndarray:
    """Tr_cavity(rho) for a SystemConfig's joint state."""
    return partial_trace(rho, cfg.dims, list(range(1, len(cfg.dims))))


@dataclass
class WignerGrid:
    re_eta: np.ndarray
    im_eta: np.ndarray
    values: np.ndarray  # values[i, j] at eta = re_eta[j] + 1j * im_eta[i]

    def integral(self) -> float:
        return float(trapezoid(trapezoid(self.values, self.re_eta, axis=1), self.im_eta))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["re_eta", "im_eta", "W"])
            for i, y in enumerate(self.im_eta):
                for j, x in enumerate(self.re_eta):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(self.values[i, j]))])


def wigner_axes(extent=WIGNER_EXTENT, points=WIGNER_POINTS):
    ax = np.linspace(-extent, extent, points)
    return ax, ax.copy()


def displacement_elements(alpha: np.ndarray, dim: int) -> np.ndarray:
    """<n|D(alpha)|m> for n, m < dim at every point of ``alpha`` (closed form).

    Exact in the infinite space; no truncation of the displaced states.
    Returns shape alpha.shape + (dim, dim).
    """
    alpha = np.asarray(alpha, dtype=complex)
    x = np.abs(alpha) ** 2
    gauss = np.exp(-x / 2.0)
    out = np.empty(alpha.shape + (dim, dim), dtype=complex)
    logfact = np.array([math.lgamma(k + 1) for k in range(dim)])
    for n in range(dim):
        for m in range(dim):
            if n >= m:
                pref = np.exp(0.5 * (logfact[m] - logfact[n]))
                out[..., n, m] = pref * alpha ** (n - m) * gauss * laguerre_assoc(m, n - m, x)
            else:
                pref = np.exp(0.5 * (logfact[n] - logfact[m]))
                out[..., n, m] = pref * (-alpha.conj()) ** (m - n) * gauss * laguerre_assoc(n, m - n, x)
    return out


def wigner(rho_b: np.ndarray, re_eta=None, im_eta=None) -> WignerGrid:
    """W(eta) = (2/pi) Tr[D^dag(eta) rho D(eta) (-1)^{b^dag b}] on a grid.

    Uses D(eta) P D(eta)^dag = D(2 eta) P, so each point is the parity-weighted
    contraction of rho with closed-form matrix elements of D(2 eta).
    """
    rho_b = np.asarray(rho_b, dtype=complex)
    if re_eta is None or im_eta is None:
        re_eta, im_eta = wigner_axes()
    re_eta = np.asarray(re_eta, dtype=float)
    im_eta = np.asarray(im_eta, dtype=float)
    n = rho_b.shape[0]
    eta = re_eta[None, :] + 1j * im_eta[:, None]
    parity = (-1.0) ** np.arange(n)
    d2 = displacement_elements(2.0 * eta, n)                     # [..., k, m] = <k|D(2 eta)|m>
    # Tr[rho D(2 eta) P] = sum_{m,k} rho[m, k] <k|D(2 eta)|m> (-1)^m
    vals = np.einsum("mk,...km,m->...", rho_b, d2, parity)
    if np.max(np.abs(vals.imag), initial=0.0) > 1e-10:
        raise ValueError("Wigner values acquired an imaginary part; input not Hermitian?")
    return WignerGrid(re_eta, im_eta, (2.0 / np.pi) * vals.real)


def fock_matrix_map(rho_b: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(rho_b))


def write_matrix_map_csv(path, mat, labels=None):
    """CSV with Fock-index labels on rows and columns."""
    mat = np.asarray(mat)
    labels = labels or [str(i) for i in range(mat.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row\\col"] + list(labels))
        for lab, row in zip(labels, mat):
            w.writerow([lab] + [repr(float(x)) for x in row])


def partial_transpose(rho: np.ndarray, dims=(None, None), mode: int = 2) -> np.ndarray:
    """Transpose the bra/ket indices of mode 1 or 2 of a bipartite state."""
    rho = np.asarray(rho)
    d1, d2 = dims
    if d1 is None and d2 is None:
        d = int(round(np.sqrt(rho.shape[0])))
        d1 = d2 = d
    elif d1 is None:
        d1 = rho.shape[0] // d2
    elif d2 is None:
        d2 = rho.shape[0] // d1
    if rho.shape != (d1 * d2, d1 * d2):
        raise ValueError(f"state shape {rho.shape} does not factor as {d1}x{d2}")
    if mode not in (1, 2):
        raise ValueError("mode must be 1 or 2")
    t = rho.reshape(d1, d2, d1, d2)
    t = t.transpose(0, 3, 2, 1) if mode == 2 else t.transpose(2, 1, 0, 3)
    return t.reshape(d1 * d2, d1 * d2)


def log_negativity(rho: np.ndarray, dims=(None, None)) -> float:
    """log2 of the trace norm of the partial transpose over mode 2."""
    pt = partial_transpose(rho, dims, mode=2)
    pt = 0.5 * (pt + pt.conj().T)
    norm = float(np.sum(np.abs(np.linalg.eigvalsh(pt))))
    return max(0.0, float(np.log2(norm))) if norm > 0 else 0.0


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.vdot(rho, rho)))
