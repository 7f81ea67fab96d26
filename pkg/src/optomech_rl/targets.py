"""Target mechanical states for state preparation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("fock", "superposition", "bell")


@dataclass(frozen=True)
class TargetSpec:
    """Pure target state on the mechanical subspace.

    ``components`` maps Fock index tuples (one entry per mechanical mode) to
    complex amplitudes. Order matters: it fixes the order of the extra drive
    pulses picked by :func:`optomech_rl.hilbert.carrier_detunings`.
    """

    family: str
    components: tuple[tuple[tuple[int, ...], complex], ...]
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unsupported target family {self.family!r}")
        if not self.components:
            raise ValueError("target needs at least one component")
        nmodes = {len(idx) for idx, _ in self.components}
        if len(nmodes) != 1:
            raise ValueError("all target components must index the same number of modes")
        norm = sum(abs(c) ** 2 for _, c in self.components)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"target amplitudes not normalized (|psi|^2 = {norm!r})")

    @property
    def n_modes(self) -> int:
        return len(self.components[0][0])

    def max_index(self) -> tuple[int, ...]:
        return tuple(max(idx[k] for idx, _ in self.components) for k in range(self.n_modes))

    def state_vector(self, mech_dims) -> np.ndarray:
        """|psi> on the mechanical space with per-mode truncations ``mech_dims``."""
        mech_dims = tuple(int(d) for d in mech_dims)
        if len(mech_dims) != self.n_modes:
            raise ValueError(f"target has {self.n_modes} mode(s), got dims {mech_dims}")
        psi = np.zeros(mech_dims, dtype=complex)
        for idx, amp in self.components:
            if any(i >= d for i, d in zip(idx, mech_dims)):
                raise ValueError(f"target component {idx} outside truncation {mech_dims}")
            psi[idx] += amp
        return psi.ravel()

    def with_phase(self, phi: float) -> "TargetSpec":
        ph = np.exp(1j * phi)
        return TargetSpec(self.family, tuple((i, c * ph) for i, c in self.components), self.name)


def _normalized(items):
    items = [(tuple(int(x) for x in i), complex(c)) for i, c in items]
    norm = np.sqrt(sum(abs(c) ** 2 for _, c in items))
    return tuple((i, c / norm) for i, c in items)


def fock(n: int) -> TargetSpec:
    return TargetSpec("fock", (((int(n),), 1.0 + 0j),), name=f"fock{n}")


def superposition(indices, amplitudes=None) -> TargetSpec:
    """Single-mode superposition, equal weights unless ``amplitudes`` is given."""
    indices = [int(i) for i in indices]
    if len(set(indices)) != len(indices):
        raise ValueError("duplicate Fock index in superposition")
    if amplitudes is None:
        amplitudes = [1.0] * len(indices)
    comps = _normalized(((i,), a) for i, a in zip(indices, amplitudes))
    name = "sup" + "".join(str(i) for i in indices)
    return TargetSpec("superposition", comps, name=name)


def bell(kind: str) -> TargetSpec:
    """Two-mode Bell-like states ``phi+``, ``phi-``, ``psi+``, ``psi-``."""
    kind = kind.lower().replace("_", "").replace("plus", "+").replace("minus", "-")
    sign = {"+": 1.0, "-": -1.0}.get(kind[-1:])
    if sign is None or kind[:-1] not in ("phi", "psi"):
        raise ValueError(f"unknown Bell state {kind!r}")
    if kind.startswith("phi"):
        items = [((0, 0), 1.0), ((1, 1), sign)]
    else:
        # (1,0) first: its drive pulse is listed before the (0,1) one
        items = [((1, 0), 1.0), ((0, 1), sign)]
    return TargetSpec("bell", _normalized(items), name=f"bell_{kind[:-1]}_{'plus' if sign > 0 else 'minus'}")


def parse_target(text: str) -> TargetSpec:
    """Parse ``fock:2``, ``sup:0,2``, ``bell:phi+`` and friends."""
    family, _, arg = text.strip().partition(":")
    family = family.strip().lower()
    if family == "fock":
        return fock(int(arg))
    if family in ("sup", "superposition"):
        return superposition([int(x) for x in arg.split(",")])
    if family == "bell":
        return bell(arg.strip())
    raise ValueError(f"unsupported target family {family!r}")


def format_target(target: TargetSpec) -> str:
    if target.family == "fock":
        return f"fock:{target.components[0][0][0]}"
    if target.family == "superposition":
        amps = [c for _, c in target.components]
        if not np.allclose(amps, amps[0]):
            raise ValueError("only equal-weight superpositions have a text form")
        return "sup:" + ",".join(str(i[0]) for i, _ in target.components)
    a0, a1 = (c for _, c in target.components)
    sign = "+" if (a1 / a0).real > 0 else "-"
    kind = "phi" if target.components[0][0] == (0, 0) else "psi"
    return f"bell:{kind}{sign}"
