"""Circuit representation and its line-oriented text format.

Text format, one item per line (blank lines and ``#`` comments ignored)::

    qubits 3
    cbits 2
    U H q1
    U CNOT q1 q2
    M q0 c0
    CIF c0 Z q2

``U <gate> q<i> [q<j> ...]`` applies a catalog gate (see :mod:`qfte.gates`),
``M q<i> c<k>`` measures a qubit into a classical bit and ``CIF c<k> <gate>
q<i> ...`` applies a gate when classical bit ``k`` reads 1. Raw matrices are
written as ``RAW:`` followed by comma-separated row-major entries in Python
complex notation, e.g. ``RAW:(1+0j),0j,0j,(1+0j)``, which round-trips exactly.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import gates
from .qcore import as_matrix, is_unitary, num_qubits

RAW_PREFIX = "RAW:"


class CircuitError(ValueError):
    pass


def _raw_token(m: np.ndarray) -> str:
    return RAW_PREFIX + ",".join(repr(complex(z)) for z in m.reshape(-1))


def _parse_raw(token: str) -> np.ndarray:
    entries = [complex(s) for s in token[len(RAW_PREFIX):].split(",")]
    d = int(round(np.sqrt(len(entries))))
    if d * d != len(entries):
        raise CircuitError(f"raw matrix with {len(entries)} entries is not square")
    return np.array(entries, dtype=complex).reshape(d, d)


def resolve_gate(gate) -> tuple[str, np.ndarray]:
    """Return ``(label, matrix)`` for a gate name or raw unitary."""
    if isinstance(gate, str):
        if gate.startswith(RAW_PREFIX):
            return resolve_gate(_parse_raw(gate))
        try:
            return gate, gates.gate_matrix(gate)
        except gates.UnknownGateError as exc:
            raise CircuitError(str(exc)) from None
    m = as_matrix(gate)
    if m.shape[0] != m.shape[1]:
        raise CircuitError(f"raw gate must be square, got {m.shape}")
    num_qubits(m.shape[0])
    if not is_unitary(m):
        raise CircuitError("raw gate matrix is not unitary within 1e-10")
    m = m.copy()
    m.setflags(write=False)
    return _raw_token(m), m


@dataclass(frozen=True)
class Unitary:
    gate: str
    targets: tuple[int, ...]

    @property
    def matrix(self) -> np.ndarray:
        return resolve_gate(self.gate)[1]


@dataclass(frozen=True)
class Measure:
    qubit: int
    cbit: int


@dataclass(frozen=True)
class ClassicallyControlled:
    cbit: int
    gate: str
    targets: tuple[int, ...]

    @property
    def matrix(self) -> np.ndarray:
        return resolve_gate(self.gate)[1]


CircuitOp = Unitary | Measure | ClassicallyControlled


@dataclass
class Circuit:
    """An ordered program over ``n_qubits`` qubits and ``n_cbits`` classical bits.

    Builder methods validate eagerly and return ``self`` so calls can chain.
    Treat a circuit as read-only once it is handed to a backend.
    """

    n_qubits: int
    n_cbits: int = 0
    ops: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_qubits < 1:
            raise CircuitError("a circuit needs at least one qubit")
        if self.n_cbits < 0:
            raise CircuitError("n_cbits must be non-negative")
        pending, self.ops = list(self.ops), []
        for op in pending:
            self.append(op)

    # -- validation -------------------------------------------------------

    def _check_qubits(self, qubits: Sequence[int]) -> tuple[int, ...]:
        qs = tuple(int(q) for q in qubits)
        for q in qs:
            if not 0 <= q < self.n_qubits:
                raise CircuitError(f"qubit {q} out of range (circuit has {self.n_qubits})")
        if len(set(qs)) != len(qs):
            raise CircuitError(f"duplicate qubit in {qs}")
        return qs

    def _check_cbit(self, c: int) -> int:
        if not 0 <= c < self.n_cbits:
            raise CircuitError(f"classical bit {c} out of range (circuit has {self.n_cbits})")
        return int(c)

    def _check_arity(self, label: str, m: np.ndarray, targets: tuple[int, ...]):
        k = num_qubits(m.shape[0])
        if k != len(targets):
            raise CircuitError(f"gate {label[:40]} acts on {k} qubits, got targets {targets}")

    def append(self, op) -> Circuit:
        if isinstance(op, Unitary):
            label, m = resolve_gate(op.gate)
            t = self._check_qubits(op.targets)
            self._check_arity(label, m, t)
            op = Unitary(label, t)
        elif isinstance(op, Measure):
            op = Measure(self._check_qubits([op.qubit])[0], self._check_cbit(op.cbit))
        elif isinstance(op, ClassicallyControlled):
            label, m = resolve_gate(op.gate)
            c = self._check_cbit(op.cbit)
            if c not in self.written_cbits():
                raise CircuitError(f"classical bit c{c} is read before any measurement writes it")
            t = self._check_qubits(op.targets)
            self._check_arity(label, m, t)
            op = ClassicallyControlled(c, label, t)
        else:
            raise TypeError(f"not a circuit op: {op!r}")
        self.ops.append(op)
        return self

    # -- builders ---------------------------------------------------------

    def gate(self, gate, *targets: int) -> Circuit:
        return self.append(Unitary(resolve_gate(gate)[0], tuple(targets)))

    def measure(self, qubit: int, cbit: int) -> Circuit:
        return self.append(Measure(qubit, cbit))

    def c_if(self, cbit: int, gate, *targets: int) -> Circuit:
        return self.append(ClassicallyControlled(cbit, resolve_gate(gate)[0], tuple(targets)))

    def h(self, q: int) -> Circuit:
        return self.gate("H", q)

    def x(self, q: int) -> Circuit:
        return self.gate("X", q)

    def z(self, q: int) -> Circuit:
        return self.gate("Z", q)

    def cnot(self, control: int, target: int) -> Circuit:
        return self.gate("CNOT", control, target)

    def compose(self, other: Circuit, qubits: Sequence[int] | None = None,
                cbits: Sequence[int] | None = None) -> Circuit:
        """Append ``other``'s ops with its qubit ``i`` mapped to ``qubits[i]``."""
        qmap = list(range(other.n_qubits)) if qubits is None else list(qubits)
        cmap = list(range(other.n_cbits)) if cbits is None else list(cbits)
        if len(qmap) != other.n_qubits or len(cmap) != other.n_cbits:
            raise CircuitError("compose mapping does not match the sub-circuit's registers")
        for op in other.ops:
            if isinstance(op, Unitary):
                self.append(Unitary(op.gate, tuple(qmap[q] for q in op.targets)))
            elif isinstance(op, Measure):
                self.append(Measure(qmap[op.qubit], cmap[op.cbit]))
            else:
                self.append(ClassicallyControlled(cmap[op.cbit], op.gate,
                                                  tuple(qmap[q] for q in op.targets)))
        return self

    def copy(self) -> Circuit:
        return Circuit(self.n_qubits, self.n_cbits, list(self.ops))

    # -- queries ----------------------------------------------------------

    def written_cbits(self) -> set[int]:
        return {op.cbit for op in self.ops if isinstance(op, Measure)}

    def has_measurements(self) -> bool:
        return any(not isinstance(op, Unitary) for op in self.ops)

    def has_classical_control(self) -> bool:
        return any(isinstance(op, ClassicallyControlled) for op in self.ops)

    def __len__(self) -> int:
        return len(self.ops)

    # -- text format ------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"qubits {self.n_qubits}", f"cbits {self.n_cbits}"]
        for op in self.ops:
            if isinstance(op, Unitary):
                lines.append(" ".join(["U", op.gate] + [f"q{q}" for q in op.targets]))
            elif isinstance(op, Measure):
                lines.append(f"M q{op.qubit} c{op.cbit}")
            else:
                lines.append(" ".join(["CIF", f"c{op.cbit}", op.gate]
                                      + [f"q{q}" for q in op.targets]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> Circuit:
        header: dict[str, int] = {}
        body: list[tuple[int, list[str]]] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] in ("qubits", "cbits") and not body:
                if len(parts) != 2 or not parts[1].isdigit():
                    raise CircuitError(f"line {lineno}: malformed header {line!r}")
                header[parts[0]] = int(parts[1])
            else:
                body.append((lineno, parts))
        if "qubits" not in header:
            raise CircuitError("missing 'qubits <n>' header")
        circ = cls(header["qubits"], header.get("cbits", 0))
        for lineno, parts in body:
            try:
                circ.append(_parse_op(parts))
            except (CircuitError, ValueError, IndexError) as exc:
                raise CircuitError(f"line {lineno}: {exc}") from None
        return circ


def _index(token: str, prefix: str) -> int:
    if not token.startswith(prefix) or not token[len(prefix):].isdigit():
        raise CircuitError(f"expected {prefix}<index>, got {token!r}")
    return int(token[len(prefix):])


def _parse_op(parts: list[str]):
    kind = parts[0]
    if kind == "U":
        return Unitary(parts[1], tuple(_index(t, "q") for t in parts[2:]))
    if kind == "M":
        if len(parts) != 3:
            raise CircuitError("M takes exactly one qubit and one classical bit")
        return Measure(_index(parts[1], "q"), _index(parts[2], "c"))
    if kind == "CIF":
        return ClassicallyControlled(_index(parts[1], "c"), parts[2],
                                     tuple(_index(t, "q") for t in parts[3:]))
    raise CircuitError(f"unknown op kind {kind!r}")
