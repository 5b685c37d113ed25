"""Dense complex linear algebra and state-vector primitives.

Bit ordering: qubit 0 is the most significant bit of an amplitude index, so
``|q0 q1 ... q_{n-1}>`` lives at index ``sum(q_i << (n - 1 - i))``.
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

UNITARY_TOL = 1e-10
NORM_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when matrix or register dimensions do not line up."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.size == 0:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf entries")
    return m


def kron(a, b) -> np.ndarray:
    return np.kron(as_matrix(a), as_matrix(b))


def kron_all(*mats) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, as_matrix(m))
    return out


def dagger(a) -> np.ndarray:
    return as_matrix(a).conj().T


def is_unitary(a, tol: float = UNITARY_TOL) -> bool:
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"unitarity is only defined for square matrices, got {m.shape}")
    err = m.conj().T @ m - np.eye(m.shape[0])
    return bool(np.max(np.abs(err)) <= tol)


def num_qubits(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or 1 << n != dim:
        raise DimensionError(f"dimension {dim} is not a power of two")
    return n


def zero_state(n_qubits: int) -> np.ndarray:
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[0] = 1.0
    return psi


def basis_state(n_qubits: int, index: int) -> np.ndarray:
    if not 0 <= index < 1 << n_qubits:
        raise DimensionError(f"basis index {index} out of range for {n_qubits} qubits")
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[index] = 1.0
    return psi


def as_state(state, n_qubits: int | None = None) -> np.ndarray:
    """Validate a pure state vector (finite, power-of-two length, unit norm)."""
    psi = np.asarray(state, dtype=complex).reshape(-1)
    n = num_qubits(psi.size)
    if n_qubits is not None and n != n_qubits:
        raise DimensionError(f"expected {n_qubits} qubits, state has {n}")
    if not np.all(np.isfinite(psi)):
        raise ValueError("state contains NaN or Inf amplitudes")
    norm = np.vdot(psi, psi).real
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"state is not normalized (squared norm {norm!r})")
    return psi


def _check_targets(targets: Sequence[int], n: int, k: int) -> tuple[int, ...]:
    t = tuple(int(q) for q in targets)
    if len(t) != k:
        raise DimensionError(f"gate acts on {k} qubits but {len(t)} targets were given")
    if len(set(t)) != len(t):
        raise DimensionError(f"duplicate target in {t}")
    for q in t:
        if not 0 <= q < n:
            raise DimensionError(f"target qubit {q} out of range for {n} qubits")
    return t


def apply_unitary_batch(states: np.ndarray, u: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Apply ``u`` to ``targets`` of every row of ``states`` (shape ``(B, 2**n)``).

    No validation; callers are expected to have checked shapes and unitarity.
    """
    batch, dim = states.shape
    n = num_qubits(dim)
    k = len(targets)
    psi = states.reshape((batch,) + (2,) * n)
    src = [1 + q for q in targets]
    dst = list(range(n + 1 - k, n + 1))
    psi = np.moveaxis(psi, src, dst)
    shape = psi.shape
    psi = psi.reshape(batch, -1, 1 << k) @ u.T
    psi = np.moveaxis(psi.reshape(shape), dst, src)
    return psi.reshape(batch, dim)


def apply_unitary(state, u, targets: Sequence[int]) -> np.ndarray:
    """Return the state obtained by applying ``u`` on ``targets`` (identity elsewhere).

    ``targets[0]`` is the most significant qubit of ``u``'s own index space.
    """
    psi = np.asarray(state, dtype=complex).reshape(-1)
    n = num_qubits(psi.size)
    m = as_matrix(u)
    k = num_qubits(m.shape[0]) if m.shape[0] == m.shape[1] else -1
    if k < 0:
        raise DimensionError(f"gate matrix must be square, got {m.shape}")
    t = _check_targets(targets, n, k)
    if not is_unitary(m):
        raise ValueError("gate matrix is not unitary within tolerance")
    return apply_unitary_batch(psi[None, :], m, t)[0]


def embed_operator(u, targets: Sequence[int], n_qubits: int) -> np.ndarray:
    """Materialize the full ``2**n x 2**n`` operator for ``u`` acting on ``targets``.

    Built from ``kron(u, I)`` and an explicit basis permutation; used as a
    brute-force reference for :func:`apply_unitary` on small registers.
    """
    m = as_matrix(u)
    k = num_qubits(m.shape[0])
    t = _check_targets(targets, n_qubits, k)
    rest = [q for q in range(n_qubits) if q not in t]
    order = list(t) + rest
    dim = 1 << n_qubits
    big = np.kron(m, np.eye(1 << len(rest)))
    # perm[i] = index in the reordered basis of original basis index i
    perm = np.zeros(dim, dtype=int)
    for i in range(dim):
        bits = [(i >> (n_qubits - 1 - q)) & 1 for q in range(n_qubits)]
        j = 0
        for q in order:
            j = (j << 1) | bits[q]
        perm[i] = j
    p = np.zeros((dim, dim))
    p[perm, np.arange(dim)] = 1.0
    return p.T @ big @ p


def density_matrix(state) -> np.ndarray:
    psi = np.asarray(state, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


def apply_unitary_rho(rhos: np.ndarray, u: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Conjugate a batch of density matrices ``(B, D, D)`` by ``u`` on ``targets``."""
    batch, dim, _ = rhos.shape
    # rows: u @ rho
    m = rhos.transpose(0, 2, 1).reshape(batch * dim, dim)
    m = apply_unitary_batch(m, u, targets).reshape(batch, dim, dim).transpose(0, 2, 1)
    # (u @ rho) @ u^dagger == (u @ (u @ rho)^dagger)^dagger
    m = m.conj().transpose(0, 2, 1)
    m = m.transpose(0, 2, 1).reshape(batch * dim, dim)
    m = apply_unitary_batch(m, u, targets).reshape(batch, dim, dim).transpose(0, 2, 1)
    return m.conj().transpose(0, 2, 1)
