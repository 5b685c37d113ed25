"""Parallel entanglement source: one circuit emitting M disjoint GHZ_N sets.

An M-qubit QFT acting on ``|0...0>`` produces the uniform superposition over
its M outputs, i.e. each output is an independent ``|+>``. Fanning every
output out with CNOTs onto N-1 fresh qubits turns each ``|+>`` into a
``|GHZ_N>``, and the sets stay mutually independent.
"""
from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .circuit import Circuit
from .engine import MAX_PURE_QUBITS
from .fidelity import uhlmann
from .gates import MAX_QFT_QUBITS
from .qcore import DimensionError, num_qubits

ENTROPY_CUTOFF = 1e-12


class QubitBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class SetLayout:
    """Qubit indices of each entangled set; ``sets[m][0]`` is set m's QFT output."""

    sets: tuple

    def __post_init__(self):
        sets = tuple(tuple(int(q) for q in s) for s in self.sets)
        object.__setattr__(self, "sets", sets)
        if not sets:
            raise ValueError("layout needs at least one set")
        size = len(sets[0])
        if size < 2 or any(len(s) != size for s in sets):
            raise ValueError("every set must hold the same number (>= 2) of qubits")
        flat = sorted(q for s in sets for q in s)
        if flat != list(range(len(flat))):
            raise ValueError("sets must be pairwise disjoint and cover qubits 0..M*N-1")

    @classmethod
    def contiguous(cls, m_sets: int, set_size: int) -> SetLayout:
        return cls(tuple(tuple(range(m * set_size, (m + 1) * set_size)) for m in range(m_sets)))

    @classmethod
    def strided(cls, m_sets: int, set_size: int) -> SetLayout:
        """Controls on qubits 0..M-1, set m = (m, M+m, 2M+m, ...)."""
        return cls(tuple(tuple(m + k * m_sets for k in range(set_size)) for m in range(m_sets)))

    @property
    def m_sets(self) -> int:
        return len(self.sets)

    @property
    def set_size(self) -> int:
        return len(self.sets[0])

    @property
    def n_qubits(self) -> int:
        return self.m_sets * self.set_size

    @property
    def controls(self) -> tuple[int, ...]:
        return tuple(s[0] for s in self.sets)

    def to_json(self) -> str:
        doc = {"m_sets": self.m_sets, "set_size": self.set_size,
               "sets": [list(s) for s in self.sets]}
        return json.dumps(doc, indent=2) + "\n"


def build_source(m_sets: int, set_size: int, layout: SetLayout | Sequence | str = "contiguous",
                 max_qubits: int = MAX_PURE_QUBITS) -> tuple[Circuit, SetLayout]:
    """Circuit for M independent ``|GHZ_N>`` sets plus the qubit layout it uses.

    ``layout`` is ``"contiguous"``, ``"strided"``, an explicit sequence of sets
    or a :class:`SetLayout`.
    """
    if m_sets < 1 or set_size < 2:
        raise ValueError(f"need m_sets >= 1 and set_size >= 2, got ({m_sets}, {set_size})")
    if m_sets * set_size > max_qubits:
        raise QubitBudgetError(f"source needs {m_sets * set_size} qubits, limit is {max_qubits}")
    if m_sets > MAX_QFT_QUBITS:
        raise QubitBudgetError(f"QFT block limited to {MAX_QFT_QUBITS} qubits, got {m_sets}")
    if layout == "contiguous":
        layout = SetLayout.contiguous(m_sets, set_size)
    elif layout == "strided":
        layout = SetLayout.strided(m_sets, set_size)
    elif not isinstance(layout, SetLayout):
        layout = SetLayout(tuple(layout))
    if (layout.m_sets, layout.set_size) != (m_sets, set_size):
        raise ValueError("layout shape does not match (m_sets, set_size)")

    circ = Circuit(layout.n_qubits)
    circ.gate("H" if m_sets == 1 else f"QFT{m_sets}", *layout.controls)
    for s in layout.sets:
        for q in s[1:]:
            circ.cnot(s[0], q)
    return circ, layout


def ghz_state(n: int) -> np.ndarray:
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = psi[-1] = 1 / np.sqrt(2)
    return psi


# -- reduced states and entropies -----------------------------------------------

def _check_keep(keep: Sequence[int], n: int) -> list[int]:
    keep = [int(q) for q in keep]
    if not keep:
        raise ValueError("keep must name at least one qubit")
    if len(set(keep)) != len(keep):
        raise ValueError(f"duplicate qubit in keep={keep}")
    for q in keep:
        if not 0 <= q < n:
            raise DimensionError(f"qubit {q} out of range for {n} qubits")
    return keep


def reduced_density_matrix(state, keep: Sequence[int]) -> np.ndarray:
    """Reduced state of ``keep`` (in that order) straight from a state vector."""
    psi = np.asarray(state, dtype=complex).reshape(-1)
    n = num_qubits(psi.size)
    keep = _check_keep(keep, n)
    t = np.moveaxis(psi.reshape((2,) * n), keep, range(len(keep)))
    m = t.reshape(1 << len(keep), -1)
    return m @ m.conj().T


def partial_trace(rho, keep: Sequence[int]) -> np.ndarray:
    """Trace out every qubit not in ``keep``; kept qubits stay in the given order."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"density matrix must be square, got {rho.shape}")
    n = num_qubits(rho.shape[0])
    keep = _check_keep(keep, n)
    rest = [q for q in range(n) if q not in keep]
    t = rho.reshape((2,) * (2 * n))
    order = keep + rest + [n + q for q in keep] + [n + q for q in rest]
    dk, dr = 1 << len(keep), 1 << len(rest)
    t = t.transpose(order).reshape(dk, dr, dk, dr)
    return np.einsum("ijkj->ik", t)


def _reduce(x, keep: Sequence[int]) -> np.ndarray:
    x = np.asarray(x)
    return reduced_density_matrix(x, keep) if x.ndim == 1 else partial_trace(x, keep)


def von_neumann_entropy(rho) -> float:
    """Entropy in bits; eigenvalues at or below 1e-12 contribute nothing."""
    lam = np.linalg.eigvalsh(np.asarray(rho, dtype=complex))
    lam = lam[lam > ENTROPY_CUTOFF]
    return float(max(0.0, -np.sum(lam * np.log2(lam))))


def mutual_information(rho, a: Sequence[int], b: Sequence[int]) -> float:
    """``S(A) + S(B) - S(AB)`` in bits. ``rho`` may also be a pure state vector."""
    a, b = list(a), list(b)
    if not a or not b:
        raise ValueError("both qubit sets must be non-empty")
    if set(a) & set(b):
        raise ValueError(f"qubit sets overlap: {sorted(set(a) & set(b))}")
    s_a = von_neumann_entropy(_reduce(rho, a))
    s_b = von_neumann_entropy(_reduce(rho, b))
    s_ab = von_neumann_entropy(_reduce(rho, a + b))
    return s_a + s_b - s_ab


@dataclass(frozen=True)
class DisjointnessReport:
    set_fidelities: tuple[float, ...]
    max_cross_mi: float
    min_within_mi: float

    def ok(self, tol: float = 1e-9) -> bool:
        return min(self.set_fidelities) >= 1 - tol and self.max_cross_mi <= tol

    def summary(self) -> str:
        fids = ", ".join(f"{f:.4f}" for f in self.set_fidelities)
        return (f"sets={len(self.set_fidelities)} per-set GHZ fidelity=[{fids}] "
                f"max cross-set MI={self.max_cross_mi:.4f} "
                f"min within-set MI={self.min_within_mi:.4f}")


def verify_disjoint(state, layout: SetLayout) -> DisjointnessReport:
    """Per-set fidelity with ``|GHZ_N>`` and pairwise mutual information checks."""
    psi = np.asarray(state, dtype=complex).reshape(-1)
    if num_qubits(psi.size) != layout.n_qubits:
        raise DimensionError(f"layout covers {layout.n_qubits} qubits, state has "
                             f"{num_qubits(psi.size)}")
    ghz = ghz_state(layout.set_size)
    target = np.outer(ghz, ghz.conj())
    fids = tuple(uhlmann(target, reduced_density_matrix(psi, s)) for s in layout.sets)
    owner = {q: m for m, s in enumerate(layout.sets) for q in s}
    cross, within = 0.0, np.inf
    for p, q in combinations(range(layout.n_qubits), 2):
        mi = mutual_information(psi, [p], [q])
        if owner[p] == owner[q]:
            within = min(within, mi)
        else:
            cross = max(cross, mi)
    return DisjointnessReport(fids, max(cross, 0.0), float(within))
