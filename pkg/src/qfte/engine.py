"""Execution backends for :class:`~qfte.circuit.Circuit`.

* :func:`simulate_pure` evolves ``|0...0>`` through a measurement-free circuit.
* :func:`run_shots` samples Monte Carlo trajectories with a per-qubit Pauli
  channel after every gate. Shots are evolved in vectorized chunks and shots
  with identical histories share one state row, but every random number a
  shot consumes comes from that shot's own substream, so the histogram does
  not depend on chunking.
* :func:`run_exact` tracks every measurement branch exactly: pure state vectors
  when the circuit is noiseless, density matrices otherwise.
* :func:`defer_measurements` rewrites classical feedback into quantum control.
"""
from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .circuit import (
    Circuit,
    CircuitError,
    ClassicallyControlled,
    Measure,
    Unitary,
    resolve_gate,
)
from .gates import PAULI, controlled
from .qcore import apply_unitary_batch, apply_unitary_rho

MAX_PURE_QUBITS = 20
MAX_EXACT_DENSITY_QUBITS = 10
MAX_EXACT_PURE_QUBITS = 16
# shots per chunk are capped so that distinct states fit in this many amplitudes
CHUNK_AMPLITUDES = 1 << 23
BRANCH_PRUNE = 1e-15


class MeasurementInPureBackend(CircuitError):
    pass


class ExactBackendLimit(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Independent Pauli channel applied to each qubit a gate touches."""

    p_x: float = 0.0
    p_y: float = 0.0
    p_z: float = 0.0

    def __post_init__(self):
        for name in ("p_x", "p_y", "p_z"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
        if self.p_x + self.p_y + self.p_z > 1.0 + 1e-12:
            raise ValueError("p_x + p_y + p_z must not exceed 1")

    @property
    def trivial(self) -> bool:
        return self.p_x == 0.0 and self.p_y == 0.0 and self.p_z == 0.0

    def thresholds(self) -> tuple[float, float, float]:
        return self.p_x, self.p_x + self.p_y, self.p_x + self.p_y + self.p_z


def _active(noise: NoiseModel | None) -> NoiseModel | None:
    return None if noise is None or noise.trivial else noise


@dataclass(frozen=True)
class Histogram:
    """Outcome counts keyed by classical-bit string (bit 0 is the leftmost character)."""

    counts: dict
    shots: int

    def __post_init__(self):
        if self.shots <= 0:
            raise ValueError("a histogram needs a positive shot count")
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("counts must be non-negative")
        if sum(self.counts.values()) != self.shots:
            raise ValueError(f"counts sum to {sum(self.counts.values())}, expected {self.shots}")
        ordered = {k: int(self.counts[k]) for k in sorted(self.counts) if self.counts[k] > 0}
        object.__setattr__(self, "counts", ordered)

    def probabilities(self) -> dict[str, float]:
        return {k: v / self.shots for k, v in self.counts.items()}

    def marginal(self, positions: Sequence[int]) -> Histogram:
        out: dict[str, int] = {}
        for key, n in self.counts.items():
            sub = "".join(key[i] for i in positions)
            out[sub] = out.get(sub, 0) + n
        return Histogram(out, self.shots)

    def to_csv(self) -> str:
        rows = ["bitstring,count,probability"]
        rows += [f"{k},{v},{v / self.shots!r}" for k, v in self.counts.items()]
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        doc = {"shots": self.shots, "counts": self.counts,
               "probabilities": self.probabilities()}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- compilation ----------------------------------------------------------------

def _compile(circuit: Circuit):
    """Resolve gate matrices once; returns a list of plain tuples."""
    cache: dict[str, np.ndarray] = {}
    prog = []
    for op in circuit.ops:
        if isinstance(op, Measure):
            prog.append(("M", op.qubit, op.cbit))
            continue
        if op.gate not in cache:
            cache[op.gate] = resolve_gate(op.gate)[1]
        if isinstance(op, Unitary):
            prog.append(("U", cache[op.gate], op.targets))
        else:
            prog.append(("C", cache[op.gate], op.targets, op.cbit))
    return prog


def _bit_mask(n: int, q: int) -> np.ndarray:
    return ((np.arange(1 << n) >> (n - 1 - q)) & 1).astype(bool)


def _bitstrings(bits: np.ndarray) -> list[str]:
    return ["".join("1" if b else "0" for b in row) for row in bits]


# -- pure backend ---------------------------------------------------------------

def simulate_pure(circuit: Circuit) -> np.ndarray:
    if circuit.has_measurements():
        raise MeasurementInPureBackend("measurement in pure backend; use run_shots or run_exact")
    if circuit.n_qubits > MAX_PURE_QUBITS:
        raise ExactBackendLimit(f"pure backend supports at most {MAX_PURE_QUBITS} qubits")
    state = np.zeros((1, 1 << circuit.n_qubits), dtype=complex)
    state[0, 0] = 1.0
    for _, m, targets in _compile(circuit):
        state = apply_unitary_batch(state, m, targets)
    return state[0]


# -- trajectory backend ---------------------------------------------------------

def _draw_sites(prog, noisy: bool) -> int:
    sites = 0
    for op in prog:
        if op[0] == "M":
            sites += 1
        elif noisy:
            sites += len(op[2])
    return sites


UNIFORM_BLOCK = 64


@lru_cache(maxsize=8)
def _uniform_block(seed: int, shots: int, width: int) -> np.ndarray:
    out = np.empty((shots, width))
    for s in range(shots):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, s])))
        out[s] = rng.random(width)
    out.setflags(write=False)
    return out


def shot_uniforms(seed: int, shots: int, sites: int) -> np.ndarray:
    """Uniform draws of shape ``(shots, sites)``; row ``s`` is substream ``(seed, s)``.

    Draws are sequential per substream, so a wider cached block serves every
    narrower request with the same ``(seed, shots)``.
    """
    width = max(UNIFORM_BLOCK, -(-sites // UNIFORM_BLOCK) * UNIFORM_BLOCK)
    return _uniform_block(seed, shots, width)[:, :sites]


def _split(states, idx, code, n_codes):
    """Re-key shots by ``(idx, code)``; returns one representative row per key."""
    uniq, inv = np.unique(idx * n_codes + code, return_inverse=True)
    return states[uniq // n_codes], uniq % n_codes, inv.reshape(-1)


def _apply_pauli_noise(states, idx, noise, u, qubits, mask):
    t1, t2, t3 = noise.thresholds()
    for j, q in enumerate(qubits):
        code = np.searchsorted([t1, t2, t3], u[:, j], side="right")
        code = np.where(code == 3, 0, code + 1)  # 0 none, 1 X, 2 Y, 3 Z
        if mask is not None:
            code = np.where(mask, code, 0)
        if not code.any():
            continue
        states, kind, idx = _split(states, idx, code, 4)
        for c, pauli in ((1, "X"), (2, "Y"), (3, "Z")):
            sel = kind == c
            if sel.any():
                states[sel] = apply_unitary_batch(states[sel], PAULI[pauli], (q,))
    return states, idx


def _run_chunk(prog, n, n_cbits, noise, u):
    """Evolve one chunk of shots.

    Shots with identical histories share a state row: ``states`` holds the
    distinct states and ``idx[s]`` points shot ``s`` at its row. Rows split
    only at measurements, classical conditions and noise events.
    """
    batch = u.shape[0]
    states = np.zeros((1, 1 << n), dtype=complex)
    states[0, 0] = 1.0
    idx = np.zeros(batch, dtype=np.int64)
    bits = np.zeros((batch, n_cbits), dtype=bool)
    col = 0
    for op in prog:
        kind = op[0]
        if kind == "U":
            _, m, targets = op
            states = apply_unitary_batch(states, m, targets)
            if noise is not None:
                states, idx = _apply_pauli_noise(states, idx, noise,
                                                 u[:, col:col + len(targets)], targets, None)
                col += len(targets)
        elif kind == "C":
            _, m, targets, cbit = op
            mask = bits[:, cbit]
            states, fire, idx = _split(states, idx, mask.astype(np.int64), 2)
            fire = fire.astype(bool)
            if fire.any():
                states[fire] = apply_unitary_batch(states[fire], m, targets)
            if noise is not None:
                states, idx = _apply_pauli_noise(states, idx, noise,
                                                 u[:, col:col + len(targets)], targets, mask)
                col += len(targets)
        else:
            _, q, cbit = op
            ones = _bit_mask(n, q)
            p1 = np.sum(np.abs(states[:, ones]) ** 2, axis=1)
            outcome = u[:, col] < p1[idx]
            col += 1
            states, got, idx = _split(states, idx, outcome.astype(np.int64), 2)
            got = got.astype(bool)
            p1 = np.sum(np.abs(states[:, ones]) ** 2, axis=1)
            keep = np.where(got[:, None], ones[None, :], ~ones[None, :])
            states = np.where(keep, states, 0.0)
            norm = np.sqrt(np.where(got, p1, 1.0 - p1))
            safe = norm > 1e-15
            states[safe] /= norm[safe, None]
            bits[:, cbit] = outcome
    return bits


def run_shots(circuit: Circuit, shots: int, seed: int,
              noise: NoiseModel | None = None) -> Histogram:
    """Sample ``shots`` trajectories and histogram the classical register."""
    if not isinstance(shots, (int, np.integer)) or shots <= 0:
        raise ValueError(f"shots must be a positive integer, got {shots!r}")
    if not 0 <= int(seed) < 1 << 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    n = circuit.n_qubits
    if n > MAX_PURE_QUBITS:
        raise ExactBackendLimit(f"trajectory backend supports at most {MAX_PURE_QUBITS} qubits")
    noise = _active(noise)
    prog = _compile(circuit)
    u = shot_uniforms(int(seed), int(shots), _draw_sites(prog, noise is not None))
    chunk = max(1, CHUNK_AMPLITUDES >> n)
    counts: dict[str, int] = {}
    for start in range(0, shots, chunk):
        bits = _run_chunk(prog, n, circuit.n_cbits, noise, u[start:start + chunk])
        if circuit.n_cbits == 0:
            counts[""] = counts.get("", 0) + len(bits)
            continue
        rows, num = np.unique(bits, axis=0, return_counts=True)
        for key, k in zip(_bitstrings(rows), num):
            counts[key] = counts.get(key, 0) + int(k)
    return Histogram(counts, int(shots))


# -- exact backend --------------------------------------------------------------

@dataclass
class ExactResult:
    """All measurement branches of an exact run.

    ``states`` holds unnormalized branch vectors ``(B, 2**n)`` for the pure
    method; ``rhos`` holds unnormalized branch density matrices ``(B, D, D)``
    for the density method. Exactly one of the two is set.
    """

    n_qubits: int
    bits: np.ndarray
    states: np.ndarray | None = None
    rhos: np.ndarray | None = None

    @property
    def weights(self) -> np.ndarray:
        if self.states is not None:
            return np.sum(np.abs(self.states) ** 2, axis=1)
        return np.real(np.einsum("bii->b", self.rhos))

    @property
    def total_probability(self) -> float:
        return float(np.sum(self.weights))

    def distribution(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for key, w in zip(_bitstrings(self.bits), self.weights):
            out[key] = out.get(key, 0.0) + float(w)
        return dict(sorted(out.items()))

    def reduced_density_matrix(self, keep: Sequence[int]) -> np.ndarray:
        """Branch-averaged reduced state of ``keep`` (classical register traced out)."""
        from .source import partial_trace, reduced_density_matrix

        if self.states is not None:
            return sum(reduced_density_matrix(psi, keep) for psi in self.states)
        return partial_trace(np.sum(self.rhos, axis=0), keep)


def _pure_exact(prog, n, n_cbits) -> ExactResult:
    states = np.zeros((1, 1 << n), dtype=complex)
    states[0, 0] = 1.0
    bits = np.zeros((1, n_cbits), dtype=bool)
    for op in prog:
        kind = op[0]
        if kind == "U":
            states = apply_unitary_batch(states, op[1], op[2])
        elif kind == "C":
            mask = bits[:, op[3]]
            if mask.any():
                states[mask] = apply_unitary_batch(states[mask], op[1], op[2])
        else:
            _, q, cbit = op
            ones = _bit_mask(n, q)
            s1 = np.where(ones[None, :], states, 0.0)
            s0 = states - s1
            b0, b1 = bits.copy(), bits.copy()
            b0[:, cbit], b1[:, cbit] = False, True
            states = np.concatenate([s0, s1])
            bits = np.concatenate([b0, b1])
            keep = np.sum(np.abs(states) ** 2, axis=1) > BRANCH_PRUNE
            states, bits = states[keep], bits[keep]
    return ExactResult(n, bits, states=states)


def _pauli_channel_rho(rhos, noise, q):
    out = (1.0 - noise.p_x - noise.p_y - noise.p_z) * rhos
    for name, p in (("X", noise.p_x), ("Y", noise.p_y), ("Z", noise.p_z)):
        if p > 0.0:
            out = out + p * apply_unitary_rho(rhos, PAULI[name], (q,))
    return out


def _density_exact(prog, n, n_cbits, noise) -> ExactResult:
    dim = 1 << n
    rhos = np.zeros((1, dim, dim), dtype=complex)
    rhos[0, 0, 0] = 1.0
    bits = np.zeros((1, n_cbits), dtype=bool)
    for op in prog:
        kind = op[0]
        if kind in ("U", "C"):
            m, targets = op[1], op[2]
            mask = np.ones(len(rhos), dtype=bool) if kind == "U" else bits[:, op[3]]
            if mask.any():
                sub = apply_unitary_rho(rhos[mask], m, targets)
                if noise is not None:
                    for q in targets:
                        sub = _pauli_channel_rho(sub, noise, q)
                rhos[mask] = sub
        else:
            _, q, cbit = op
            ones = _bit_mask(n, q)
            proj1 = np.outer(ones, ones)
            proj0 = np.outer(~ones, ~ones)
            b0, b1 = bits.copy(), bits.copy()
            b0[:, cbit], b1[:, cbit] = False, True
            rhos = np.concatenate([rhos * proj0, rhos * proj1])
            bits = np.concatenate([b0, b1])
            keep = np.real(np.einsum("bii->b", rhos)) > BRANCH_PRUNE
            rhos, bits = rhos[keep], bits[keep]
    return ExactResult(n, bits, rhos=rhos)


def run_exact_result(circuit: Circuit, noise: NoiseModel | None = None,
                     method: str = "auto") -> ExactResult:
    """Exact branch enumeration.

    ``method`` is ``"pure"`` (noiseless only), ``"density"`` or ``"auto"``,
    which picks pure vectors for noiseless circuits.
    """
    n = circuit.n_qubits
    active = _active(noise)
    if method == "auto":
        method = "pure" if active is None else "density"
    prog = _compile(circuit)
    if method == "pure":
        if active is not None:
            raise ValueError("the pure exact method cannot represent noise")
        if n > MAX_EXACT_PURE_QUBITS:
            raise ExactBackendLimit(f"n={n} too large for exact backend "
                                    f"(pure limit {MAX_EXACT_PURE_QUBITS})")
        return _pure_exact(prog, n, circuit.n_cbits)
    if method == "density":
        if n > MAX_EXACT_DENSITY_QUBITS:
            raise ExactBackendLimit(f"n={n} too large for exact backend "
                                    f"(density limit {MAX_EXACT_DENSITY_QUBITS})")
        noise = None if noise is None or noise.trivial else noise
        return _density_exact(prog, n, circuit.n_cbits, noise)
    raise ValueError(f"unknown exact method {method!r}")


def run_exact(circuit: Circuit, noise: NoiseModel | None = None) -> dict[str, float]:
    """Exact probability of every classical-register outcome."""
    return run_exact_result(circuit, noise).distribution()


def marginal(dist: dict[str, float], positions: Sequence[int]) -> dict[str, float]:
    out: dict[str, float] = {}
    for key, p in dist.items():
        sub = "".join(key[i] for i in positions)
        out[sub] = out.get(sub, 0.0) + p
    return dict(sorted(out.items()))


# -- deferred measurement -------------------------------------------------------

def _controlled_label(gate: str) -> str:
    if gate == "X":
        return "CNOT"
    if gate == "Z":
        return "CZ"
    if gate.startswith("RAW:"):
        return resolve_gate(controlled(resolve_gate(gate)[1]))[0]
    return "C-" + gate


def defer_measurements(circuit: Circuit) -> Circuit:
    """Replace classical feedback by quantum control and push measurements last.

    Each ``CIF c_k G t`` becomes ``G`` controlled on the qubit that wrote
    ``c_k``. A measured qubit may afterwards only serve as such a control;
    anything else raises :class:`CircuitError`.
    """
    if not circuit.has_measurements():
        return circuit.copy()
    source: dict[int, int] = {}
    measured: set[int] = set()
    body: list = []
    terminal: list[Measure] = []
    for op in circuit.ops:
        if isinstance(op, Measure):
            if op.cbit in source:
                raise CircuitError(f"classical bit c{op.cbit} is written twice")
            if op.qubit in measured:
                raise CircuitError(f"qubit q{op.qubit} is measured twice")
            source[op.cbit] = op.qubit
            measured.add(op.qubit)
            terminal.append(op)
        elif isinstance(op, ClassicallyControlled):
            if op.cbit not in source:
                raise CircuitError(f"classical bit c{op.cbit} used in control but never measured")
            if measured.intersection(op.targets):
                raise CircuitError(f"gate on measured qubit in {op.targets}; cannot defer")
            body.append(Unitary(_controlled_label(op.gate), (source[op.cbit],) + op.targets))
        else:
            if measured.intersection(op.targets):
                raise CircuitError(f"gate on measured qubit in {op.targets}; cannot defer")
            body.append(op)
    return Circuit(circuit.n_qubits, circuit.n_cbits, body + terminal)
