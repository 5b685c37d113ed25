"""Communication protocols built on the parallel entanglement source.

Every builder returns a :class:`ProtocolCircuit`: the circuit up to (but not
including) the receivers' final measurement, plus bookkeeping about which
qubit carries which channel. Runners execute it and report receiver
histograms and fidelities.
"""
from __future__ import annotations

import re
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from . import gates
from .circuit import Circuit, Measure
from .engine import (
    MAX_EXACT_DENSITY_QUBITS,
    MAX_EXACT_PURE_QUBITS,
    MAX_PURE_QUBITS,
    Histogram,
    NoiseModel,
    defer_measurements,
    run_exact_result,
    run_shots,
)
from .fidelity import FidelityReport, ProbabilityPair, diag_of, f_ap, histogram_to_pair, uhlmann
from .qcore import density_matrix
from .source import QubitBudgetError, build_source

DEFAULT_SHOTS = 8192
VARIANTS = ("feedback", "deferred")
BACKENDS = ("exact", "shots")
CASCADE_SOURCES = ("per_hop", "qft_shared", "ghz_shared")
SWAP_SOURCES = ("two_sources", "qft_source")


class IndeterminateBitError(RuntimeError):
    """Majority decoding hit an exact tie."""


class CBSContractError(ValueError):
    """The reduced relay only carries computational basis states."""


# -- inputs -----------------------------------------------------------------------

@dataclass(frozen=True)
class InputState:
    """A single-qubit input: a catalog name or explicit amplitudes."""

    label: str
    state: np.ndarray = field(compare=False, repr=False)
    prep: tuple = field(compare=False, repr=False)

    @classmethod
    def parse(cls, spec) -> InputState:
        if isinstance(spec, InputState):
            return spec
        if isinstance(spec, str):
            name = gates.canonical_state_name(spec)
            return cls(name, gates.prepare_named_state(name), gates.state_recipe(name))
        amps = np.asarray(spec, dtype=complex).reshape(-1)
        if amps.size != 2:
            raise ValueError(f"explicit input needs two amplitudes, got {amps.size}")
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("explicit input has zero norm")
        amps = amps / norm
        return cls(f"[{amps[0]!r}, {amps[1]!r}]", amps, (gates.state_prep_unitary(amps),))

    @property
    def rho(self) -> np.ndarray:
        return density_matrix(self.state)

    @property
    def theory(self) -> ProbabilityPair:
        return diag_of(self.rho)


def _prepare(circ: Circuit, inp: InputState, qubit: int):
    for g in inp.prep:
        circ.gate(g, qubit)


# -- circuits ---------------------------------------------------------------------

@dataclass
class ProtocolCircuit:
    """An unmeasured protocol circuit.

    ``receivers[i]``/``receiver_cbits[i]`` say where channel ``i`` lands.
    ``checkpoints`` maps a name to ``(n_ops, qubits)``: after the first
    ``n_ops`` operations the named state sits on ``qubits``.
    """

    name: str
    circuit: Circuit
    inputs: tuple
    receivers: tuple
    receiver_cbits: tuple
    checkpoints: dict = field(default_factory=dict)

    @property
    def n_qubits(self) -> int:
        return self.circuit.n_qubits

    def measured(self) -> Circuit:
        circ = self.circuit.copy()
        for q, c in zip(self.receivers, self.receiver_cbits):
            circ.measure(q, c)
        return circ

    def prefix(self, n_ops: int) -> Circuit:
        return Circuit(self.circuit.n_qubits, self.circuit.n_cbits, self.circuit.ops[:n_ops])


def _bsm_teleport(circ: Circuit, src: int, half: int, dst: int, c_z: int, c_x: int):
    """Bell-state measurement on (src, half) and Pauli corrections on dst."""
    circ.cnot(src, half).h(src)
    circ.measure(src, c_z).measure(half, c_x)
    circ.c_if(c_x, "X", dst).c_if(c_z, "Z", dst)


def _check_budget(n: int):
    if n > MAX_PURE_QUBITS:
        raise QubitBudgetError(f"protocol needs {n} qubits, limit is {MAX_PURE_QUBITS}")


def _inputs(specs, count: int | None = None) -> tuple:
    if isinstance(specs, (str, InputState)):
        specs = [specs]
    inputs = tuple(InputState.parse(s) for s in specs)
    if not inputs:
        raise ValueError("at least one input state is required")
    if count is not None and len(inputs) != count:
        raise ValueError(f"expected {count} input state(s), got {len(inputs)}")
    return inputs


def build_parallel_teleport(specs: Sequence) -> ProtocolCircuit:
    """k lanes: inputs on 0..k-1, sender halves on k..2k-1, receivers on 2k..3k-1."""
    inputs = _inputs(specs)
    k = len(inputs)
    _check_budget(3 * k)
    circ = Circuit(3 * k, 3 * k)
    for i, inp in enumerate(inputs):
        _prepare(circ, inp, i)
    src, _ = build_source(k, 2, layout="strided")
    circ.compose(src, qubits=list(range(k, 3 * k)))
    for i in range(k):
        _bsm_teleport(circ, i, k + i, 2 * k + i, 2 * i, 2 * i + 1)
    name = "tele" if k == 1 else f"{k}-tele"
    return ProtocolCircuit(name, circ, inputs, tuple(range(2 * k, 3 * k)),
                           tuple(range(2 * k, 3 * k)))


def build_teleport(spec) -> ProtocolCircuit:
    return build_parallel_teleport([spec])


def build_qss(specs: Sequence) -> ProtocolCircuit:
    """Secret sharing over GHZ_3 per lane: dealer, middle party, recoverer.

    The dealer Bell-measures the secret with her GHZ qubit, the middle party
    measures in the X basis, and the recoverer applies ``X^b Z^(a xor c)``.
    """
    inputs = _inputs(specs)
    k = len(inputs)
    _check_budget(4 * k)
    circ = Circuit(4 * k, 4 * k)
    for i, inp in enumerate(inputs):
        _prepare(circ, inp, i)
    src, _ = build_source(k, 3, layout="strided")
    circ.compose(src, qubits=list(range(k, 4 * k)))
    for i in range(k):
        secret, dealer, middle, rec = i, k + i, 2 * k + i, 3 * k + i
        c_a, c_b, c_c = 3 * i, 3 * i + 1, 3 * i + 2
        circ.cnot(secret, dealer).h(secret)
        circ.measure(secret, c_a).measure(dealer, c_b)
        circ.h(middle).measure(middle, c_c)
        circ.c_if(c_b, "X", rec).c_if(c_a, "Z", rec).c_if(c_c, "Z", rec)
    name = "qss" if k == 1 else f"{k}-qss"
    return ProtocolCircuit(name, circ, inputs, tuple(range(3 * k, 4 * k)),
                           tuple(range(3 * k, 4 * k)))


def build_bidirectional(specs: Sequence) -> ProtocolCircuit:
    """Alice's input on q0 goes to Bob (q3); Bob's input on q1 goes to Alice (q5).

    One S_2^2 source on q2..q5 with crossed ownership: pair (q2, q3) has its
    control at Alice, pair (q4, q5) has its control at Bob.
    """
    inputs = _inputs(specs, 2)
    circ = Circuit(6, 6)
    _prepare(circ, inputs[0], 0)
    _prepare(circ, inputs[1], 1)
    src, _ = build_source(2, 2)
    circ.compose(src, qubits=[2, 3, 4, 5])
    _bsm_teleport(circ, 0, 2, 3, 0, 1)
    _bsm_teleport(circ, 1, 4, 5, 2, 3)
    return ProtocolCircuit("bidirec", circ, inputs, (3, 5), (4, 5))


def build_entanglement_swap(spec, source: str = "two_sources") -> ProtocolCircuit:
    """q1-q2 and q3-q4 pairs; swapping at q2/q3 links q1 with q4, then q0 is teleported."""
    if source not in SWAP_SOURCES:
        raise ValueError(f"source must be one of {SWAP_SOURCES}, got {source!r}")
    inputs = _inputs([spec], 1)
    circ = Circuit(5, 5)
    _prepare(circ, inputs[0], 0)
    if source == "two_sources":
        bell, _ = build_source(1, 2)
        circ.compose(bell, qubits=[1, 2]).compose(bell, qubits=[3, 4])
    else:
        src, _ = build_source(2, 2)
        circ.compose(src, qubits=[1, 2, 3, 4])
    _bsm_teleport(circ, 2, 3, 4, 0, 1)
    swapped = len(circ)
    _bsm_teleport(circ, 0, 1, 4, 2, 3)
    name = "en-sw-1" if source == "two_sources" else "en-sw-2"
    return ProtocolCircuit(name, circ, inputs, (4,), (4,),
                           checkpoints={"swapped_pair": (swapped, (1, 4))})


def build_forward_cascade(spec, hops: int, source: str = "per_hop") -> ProtocolCircuit:
    """Chain of full teleportations; hop i uses pair (1+2i, 2+2i)."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    if source not in CASCADE_SOURCES:
        raise ValueError(f"source must be one of {CASCADE_SOURCES}, got {source!r}")
    inputs = _inputs([spec], 1)
    n = 1 + 2 * hops
    _check_budget(n)
    circ = Circuit(n, 2 * hops + 1)
    _prepare(circ, inputs[0], 0)
    pairs = [(1 + 2 * i, 2 + 2 * i) for i in range(hops)]
    if source == "qft_shared":
        src, _ = build_source(hops, 2)
        circ.compose(src, qubits=[q for p in pairs for q in p])
    elif source == "ghz_shared":
        src, _ = build_source(1, 2 * hops)
        circ.compose(src, qubits=[q for p in pairs for q in p])
    bell, _ = build_source(1, 2)
    checkpoints = {}
    carrier = 0
    for i, (a, b) in enumerate(pairs):
        if source == "per_hop":
            circ.compose(bell, qubits=[a, b])
        _bsm_teleport(circ, carrier, a, b, 2 * i, 2 * i + 1)
        checkpoints[f"hop{i + 1}"] = (len(circ), (b,))
        carrier = b
    return ProtocolCircuit(f"fo-ca-{hops}", circ, inputs, (carrier,), (2 * hops,),
                           checkpoints=checkpoints)


def _cbs_relay(spec, stages: int) -> ProtocolCircuit:
    """Cl2Qu on q0, then ``stages`` reduced teleports fed by one S_2^stages source.

    Reduced teleport: CNOT(carrier, a), measure a, X on b if the bit is 1.
    Checkpoint ``hop1`` is the freshly encoded qubit, ``hop{i+1}`` the output
    of stage ``i``.
    """
    inp = InputState.parse(spec)
    n = 1 + 2 * stages
    _check_budget(n)
    circ = Circuit(n, stages + 1)
    if inp.label in ("KET0", "KET1"):
        # the encoder always fires one gate so both bit values see the same noise
        circ.gate("I" if inp.label == "KET0" else "X", 0)
    else:
        _prepare(circ, inp, 0)
    checkpoints = {"hop1": (len(circ), (0,))}
    pairs = [(1 + 2 * i, 2 + 2 * i) for i in range(stages)]
    src, _ = build_source(stages, 2)
    circ.compose(src, qubits=[q for p in pairs for q in p])
    carrier = 0
    for i, (a, b) in enumerate(pairs):
        circ.cnot(carrier, a).measure(a, i).c_if(i, "X", b)
        checkpoints[f"hop{i + 2}"] = (len(circ), (b,))
        carrier = b
    return ProtocolCircuit(f"cbs-{stages}", circ, (inp,), (carrier,), (stages,),
                           checkpoints=checkpoints)


def _cbs_input(bit) -> str:
    if isinstance(bit, (bool, np.bool_)):
        bit = int(bit)
    if isinstance(bit, str) and bit in ("0", "1"):
        bit = int(bit)
    if not isinstance(bit, (int, np.integer)) or bit not in (0, 1):
        raise CBSContractError(f"outside CBS contract: input must be bit 0 or 1, got {bit!r}")
    return "KET1" if bit else "KET0"


# -- execution --------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolRun:
    inputs: tuple = ()
    variant: str = "feedback"
    noise: NoiseModel | None = None
    shots: int = DEFAULT_SHOTS
    seed: int = 0
    backend: str = "exact"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if not isinstance(self.shots, (int, np.integer)) or self.shots <= 0:
            raise ValueError(f"shots must be a positive integer, got {self.shots!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))

    @property
    def noiseless(self) -> bool:
        return self.noise is None or self.noise.trivial


@dataclass(frozen=True)
class ProtocolReport:
    protocol: str
    inputs: tuple
    histograms: tuple
    fidelities: tuple
    hop_f_ap: tuple | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        channels = []
        for i, (label, hist, fid) in enumerate(zip(self.inputs, self.histograms,
                                                   self.fidelities)):
            channels.append({"channel": i, "input": label, "counts": hist.counts,
                             "shots": hist.shots, **fid.to_dict()})
        doc = {"protocol": self.protocol, "channels": channels}
        if self.hop_f_ap is not None:
            doc["hop_f_ap"] = list(self.hop_f_ap)
        doc.update(self.extras)
        return doc


def _variant(circ: Circuit, variant: str) -> Circuit:
    return defer_measurements(circ) if variant == "deferred" else circ


def exact_feasible(n_qubits: int, run: ProtocolRun) -> bool:
    limit = MAX_EXACT_PURE_QUBITS if run.noiseless else MAX_EXACT_DENSITY_QUBITS
    return run.backend == "exact" and n_qubits <= limit


def _alice_estimate(inp: InputState, run: ProtocolRun, exact: bool) -> ProbabilityPair:
    """Prepare-and-measure the input on its own (the sender-side estimate)."""
    circ = Circuit(1, 1)
    _prepare(circ, inp, 0)
    circ.measure(0, 0)
    if exact:
        dist = run_exact_result(circ, run.noise).distribution()
        return ProbabilityPair(dist.get("0", 0.0), dist.get("1", 0.0))
    return histogram_to_pair(run_shots(circ, run.shots, run.seed, run.noise))


def receiver_state(pc: ProtocolCircuit, run: ProtocolRun, channel: int = 0) -> np.ndarray:
    """Exact reduced density matrix of a receiver qubit before its final measurement."""
    res = run_exact_result(_variant(pc.circuit, run.variant), run.noise)
    return res.reduced_density_matrix([pc.receivers[channel]])


def receiver_distribution(pc: ProtocolCircuit, run: ProtocolRun) -> dict[str, float]:
    """Exact joint distribution of the fully measured circuit."""
    return run_exact_result(_variant(pc.measured(), run.variant), run.noise).distribution()


def _checkpoint_pair(pc: ProtocolCircuit, name: str, run: ProtocolRun,
                     exact: bool) -> ProbabilityPair:
    n_ops, qubits = pc.checkpoints[name]
    prefix = pc.prefix(n_ops)
    if exact:
        res = run_exact_result(_variant(prefix, run.variant), run.noise)
        return diag_of(res.reduced_density_matrix(qubits))
    circ = Circuit(prefix.n_qubits, prefix.n_cbits + 1, prefix.ops)
    circ.measure(qubits[0], prefix.n_cbits)
    hist = run_shots(_variant(circ, run.variant), run.shots, run.seed, run.noise)
    return histogram_to_pair(hist.marginal([prefix.n_cbits]))


def execute(pc: ProtocolCircuit, run: ProtocolRun, hop_names: Sequence[str] = ()) -> ProtocolReport:
    """Run a protocol circuit: receiver histograms plus one fidelity report per channel."""
    measured = _variant(pc.measured(), run.variant)
    hist = run_shots(measured, run.shots, run.seed, run.noise)
    exact = exact_feasible(pc.n_qubits, run)
    result = run_exact_result(_variant(pc.circuit, run.variant), run.noise) if exact else None
    histograms, reports = [], []
    for i, inp in enumerate(pc.inputs):
        h = hist.marginal([pc.receiver_cbits[i]])
        histograms.append(h)
        alice = _alice_estimate(inp, run, exact)
        if result is not None:
            rho = result.reduced_density_matrix([pc.receivers[i]])
            bob, f_u = diag_of(rho), uhlmann(inp.rho, rho)
        else:
            bob, f_u = histogram_to_pair(h), None
        reports.append(FidelityReport.from_pairs(inp.theory, alice, bob, f_u))
    hops = None
    if hop_names:
        theory = pc.inputs[0].theory
        hops = tuple(f_ap(theory, _checkpoint_pair(pc, name, run, exact)) for name in hop_names)
    return ProtocolReport(pc.name, tuple(inp.label for inp in pc.inputs), tuple(histograms),
                          tuple(reports), hops)


# -- public runners ---------------------------------------------------------------

def teleport(run: ProtocolRun) -> ProtocolReport:
    return execute(build_parallel_teleport(_inputs(run.inputs, 1)), run)


def parallel_teleport(run: ProtocolRun) -> ProtocolReport:
    return execute(build_parallel_teleport(run.inputs), run)


def qss(run: ProtocolRun) -> ProtocolReport:
    return execute(build_qss(run.inputs), run)


def bidirectional_teleport(run: ProtocolRun) -> ProtocolReport:
    return execute(build_bidirectional(run.inputs), run)


def entanglement_swap(run: ProtocolRun, source: str = "two_sources") -> ProtocolReport:
    inputs = _inputs(run.inputs, 1)
    pc = build_entanglement_swap(inputs[0], source)
    report = execute(pc, run)
    n_ops, pair = pc.checkpoints["swapped_pair"]
    bell = np.zeros(4, dtype=complex)
    bell[[0, 3]] = 1 / np.sqrt(2)
    swap_fid = None
    if exact_feasible(pc.n_qubits, run):
        res = run_exact_result(_variant(pc.prefix(n_ops), run.variant), run.noise)
        swap_fid = uhlmann(density_matrix(bell), res.reduced_density_matrix(pair))
    return replace(report, extras={"swap_fidelity": swap_fid})


def forward_cascade(run: ProtocolRun, hops: int, source: str = "per_hop") -> ProtocolReport:
    inputs = _inputs(run.inputs, 1)
    pc = build_forward_cascade(inputs[0], hops, source)
    return execute(pc, run, hop_names=[f"hop{i + 1}" for i in range(hops)])


def cbs_teleport(bit, noise: NoiseModel | None = None, shots: int = DEFAULT_SHOTS,
                 seed: int = 0, variant: str = "feedback") -> ProtocolReport:
    pc = _cbs_relay(_cbs_input(bit), 1)
    run = ProtocolRun((pc.inputs[0].label,), variant, noise, shots, seed, "exact")
    return execute(pc, run)


def cl2qu(bit) -> np.ndarray:
    return gates.prepare_named_state(_cbs_input(bit))


def qu2cl(hist: Histogram | dict) -> int:
    """Strict-majority decode of a one-bit histogram."""
    counts = hist.counts if isinstance(hist, Histogram) else dict(hist)
    zeros, ones = counts.get("0", 0), counts.get("1", 0)
    if zeros == ones:
        raise IndeterminateBitError(f"majority vote tied at {zeros} vs {ones}")
    return int(ones > zeros)


@dataclass(frozen=True)
class MultiOrbitResult:
    sent: str
    received: str
    hop_f_ap: tuple
    histograms: tuple

    def to_dict(self) -> dict:
        return {"protocol": "multi-orbit", "sent": self.sent, "received": self.received,
                "hop_f_ap": [list(h) for h in self.hop_f_ap],
                "channels": [{"bit": i, "counts": h.counts, "shots": h.shots}
                             for i, h in enumerate(self.histograms)]}


def bit_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for message bit ``index``."""
    words = np.random.SeedSequence([seed, index]).generate_state(2, np.uint32)
    return int(words[0]) << 32 | int(words[1])


def multi_orbit_transmit(bits: str, hops: int, noise: NoiseModel | None = None,
                         shots: int = DEFAULT_SHOTS, seed: int = 0,
                         variant: str = "deferred", backend: str = "shots") -> MultiOrbitResult:
    """Relay a classical message across ``hops`` satellites.

    Each bit is encoded (Cl2Qu), passed through ``hops - 1`` reduced teleports
    sharing one S_2^(hops-1) source, and majority-decoded (Qu2Cl). Per-hop
    F_AP has ``hops`` entries: after encoding, then after each relay stage.
    """
    if hops < 2:
        raise ValueError("multi-orbit relay needs hops >= 2 (uplink and downlink)")
    if not bits or set(bits) - {"0", "1"}:
        raise ValueError(f"bits must be a non-empty string of 0/1, got {bits!r}")
    received, hop_seq, hists = [], [], []
    for i, b in enumerate(bits):
        pc = _cbs_relay(_cbs_input(b), hops - 1)
        run = ProtocolRun((pc.inputs[0].label,), variant, noise, shots, bit_seed(seed, i), backend)
        hist = run_shots(_variant(pc.measured(), variant), shots, run.seed, noise)
        h = hist.marginal([pc.receiver_cbits[0]])
        hists.append(h)
        received.append(str(qu2cl(h)))
        exact = exact_feasible(pc.n_qubits, run)
        theory = pc.inputs[0].theory
        hop_seq.append(tuple(f_ap(theory, _checkpoint_pair(pc, f"hop{k + 1}", run, exact))
                             for k in range(hops)))
    return MultiOrbitResult(bits, "".join(received), tuple(hop_seq), tuple(hists))


# -- registry ---------------------------------------------------------------------

PROTOCOL_LABELS = ("tele", "2-tele", "4-tele", "qss", "2-qss", "bidirec", "en-sw-1", "en-sw-2",
                   "fo-ca-N", "multi-orbit")

_FOCA = re.compile(r"^fo-ca-(\d+)$")


def run_protocol(label: str, run: ProtocolRun, **params):
    """Dispatch by table label (``tele``, ``2-qss``, ``fo-ca-3`` ...)."""
    if label == "tele":
        return teleport(run)
    if label in ("2-tele", "4-tele"):
        _inputs(run.inputs, int(label[0]))
        return parallel_teleport(run)
    if label == "qss":
        _inputs(run.inputs, 1)
        return qss(run)
    if label == "2-qss":
        _inputs(run.inputs, 2)
        return qss(run)
    if label == "bidirec":
        return bidirectional_teleport(run)
    if label == "en-sw-1":
        return entanglement_swap(run, "two_sources")
    if label == "en-sw-2":
        return entanglement_swap(run, "qft_source")
    if (m := _FOCA.match(label)) is not None:
        return forward_cascade(run, int(m.group(1)), params.get("source", "per_hop"))
    if label == "multi-orbit":
        return multi_orbit_transmit(params["bits"], params.get("hops", 5), run.noise, run.shots,
                                    run.seed, run.variant, run.backend)
    raise KeyError(f"unknown protocol {label!r}; valid: {', '.join(PROTOCOL_LABELS)}")


__all__ = [
    "CBSContractError", "IndeterminateBitError", "InputState", "MultiOrbitResult",
    "PROTOCOL_LABELS", "ProtocolCircuit", "ProtocolReport", "ProtocolRun",
    "bidirectional_teleport", "build_bidirectional", "build_entanglement_swap",
    "build_forward_cascade", "build_parallel_teleport", "build_qss", "build_teleport",
    "cbs_teleport", "cl2qu", "entanglement_swap", "execute", "forward_cascade",
    "multi_orbit_transmit", "parallel_teleport", "qss", "qu2cl", "receiver_distribution",
    "receiver_state", "run_protocol", "teleport",
]
