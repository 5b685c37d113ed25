"""Catalog of named gates and prepared single-qubit states.

Gate names are plain strings so they can appear verbatim in the circuit text
format:

    I H X Y Z CNOT CNOT_FLIPPED CZ SWAP X_POW_1_2 X_POW_1_4 Z_POW_1_4
    QFT<n>          n-qubit Fourier transform, e.g. QFT2, QFT4
    C-<name>        the named gate controlled on one extra (leading) qubit
"""
from __future__ import annotations

import re
from functools import lru_cache

import numpy as np

from .qcore import apply_unitary, as_state, zero_state

MAX_QFT_QUBITS = 12

_I = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_CNOT_FLIPPED = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex)
_CZ = np.diag([1, 1, 1, -1]).astype(complex)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)

PAULI = {"I": _I, "X": _X, "Y": _Y, "Z": _Z}

BASE_GATES = (
    "I", "H", "X", "Y", "Z", "CNOT", "CNOT_FLIPPED", "CZ", "SWAP",
    "X_POW_1_2", "X_POW_1_4", "Z_POW_1_4",
)

_QFT_RE = re.compile(r"^QFT(\d+)$")


class UnknownGateError(KeyError):
    pass


def hermitian_power(m: np.ndarray, p: float) -> np.ndarray:
    """Principal ``p``-th power of a Hermitian matrix via its eigendecomposition."""
    w, v = np.linalg.eigh(m)
    # eigh returns real eigenvalues, so -1 maps to exp(i*pi*p): the principal branch
    lam = np.power(w.astype(complex), p)
    return (v * lam) @ v.conj().T


def qft_matrix(n: int) -> np.ndarray:
    """Entry ``(j, k)`` is ``omega**(j*k) / sqrt(2**n)`` with ``omega = exp(2*pi*i / 2**n)``."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QFT_QUBITS:
        raise ValueError(f"QFT size must be an integer in [1, {MAX_QFT_QUBITS}], got {n!r}")
    return _qft_cached(int(n)).copy()


@lru_cache(maxsize=None)
def _qft_cached(n: int) -> np.ndarray:
    d = 1 << n
    jk = np.outer(np.arange(d), np.arange(d)) % d
    # exact phases on the axes: i**m for quarter turns avoids 1e-16 residue
    m = np.exp(2j * np.pi * jk / d)
    quarter = (4 * jk) % d == 0
    m[quarter] = np.array([1, 1j, -1, -1j])[(4 * jk[quarter]) // d]
    m /= np.sqrt(d)
    m.setflags(write=False)
    return m


def controlled(u: np.ndarray) -> np.ndarray:
    """Block-diagonal ``diag(I, u)``; the control is the most significant qubit."""
    d = u.shape[0]
    out = np.eye(2 * d, dtype=complex)
    out[d:, d:] = u
    return out


@lru_cache(maxsize=None)
def _gate_cached(name: str) -> np.ndarray:
    if name.startswith("C-"):
        m = controlled(_gate_cached(name[2:]))
    elif (match := _QFT_RE.match(name)) is not None:
        m = qft_matrix(int(match.group(1)))
    elif name in PAULI:
        m = PAULI[name]
    elif name == "H":
        m = _H
    elif name == "CNOT":
        m = _CNOT
    elif name == "CNOT_FLIPPED":
        m = _CNOT_FLIPPED
    elif name == "CZ":
        m = _CZ
    elif name == "SWAP":
        m = _SWAP
    elif name == "X_POW_1_2":
        m = hermitian_power(_X, 0.5)
    elif name == "X_POW_1_4":
        m = hermitian_power(_X, 0.25)
    elif name == "Z_POW_1_4":
        m = hermitian_power(_Z, 0.25)
    else:
        raise UnknownGateError(name)
    m = np.array(m, dtype=complex)
    m.setflags(write=False)
    return m


def gate_matrix(name: str) -> np.ndarray:
    """Return a fresh copy of the unitary for a catalog gate name."""
    try:
        return _gate_cached(str(name)).copy()
    except (UnknownGateError, ValueError):
        raise UnknownGateError(f"unknown gate {name!r}") from None


def gate_arity(name: str) -> int:
    return gate_matrix(name).shape[0].bit_length() - 1


def is_gate_name(name: str) -> bool:
    try:
        gate_matrix(name)
    except UnknownGateError:
        return False
    return True


# --- named states ---------------------------------------------------------

# gate sequences applied to |0>, in application order
_STATE_RECIPES = {
    "KET0": (),
    "KET1": ("X",),
    "PSI1": ("X_POW_1_4",),
    "PSI2": ("X", "X_POW_1_4"),
    "PSI3": ("H",),
    # fourth-root-X . fourth-root-Z . square-root-X acting on |1>
    "PSI4": ("X", "X_POW_1_2", "Z_POW_1_4", "X_POW_1_4"),
}

NAMED_STATES = tuple(_STATE_RECIPES)

_ALIASES = {
    "0": "KET0", "1": "KET1", "|0>": "KET0", "|1>": "KET1",
    "ψ1": "PSI1", "ψ2": "PSI2", "ψ3": "PSI3", "ψ4": "PSI4",
}


def canonical_state_name(name: str) -> str:
    key = str(name).strip()
    key = _ALIASES.get(key, key).upper()
    if key not in _STATE_RECIPES:
        raise KeyError(f"unknown named state {name!r}; expected one of {', '.join(NAMED_STATES)}")
    return key


def state_recipe(name: str) -> tuple[str, ...]:
    return _STATE_RECIPES[canonical_state_name(name)]


def prepare_named_state(name: str) -> np.ndarray:
    psi = zero_state(1)
    for g in state_recipe(name):
        psi = apply_unitary(psi, gate_matrix(g), [0])
    return psi


def state_prep_unitary(state) -> np.ndarray:
    """A single-qubit unitary whose first column is ``state``."""
    a, b = as_state(state, 1)
    return np.array([[a, -np.conj(b)], [b, np.conj(a)]], dtype=complex)


def random_state(rng: np.random.Generator, n_qubits: int = 1) -> np.ndarray:
    """Haar-random pure state."""
    z = rng.normal(size=1 << n_qubits) + 1j * rng.normal(size=1 << n_qubits)
    return z / np.linalg.norm(z)
