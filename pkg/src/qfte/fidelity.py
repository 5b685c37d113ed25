"""Single-qubit diagonal fidelities and the Uhlmann state fidelity.

The three platform fidelities compare Z-basis outcome probabilities:

* ``f_rp``: theory vs. the sender's prepare-and-measure estimate,
* ``f_tp``: sender's estimate vs. the receiver's estimate,
* ``f_ap``: theory vs. the receiver's estimate.

Each is ``1 - |p0_ref - p0_other| / max(p0_ref, p1_ref)``, clamped to [0, 1].
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

PAIR_TOL = 1e-6
DIAG_TOL = 1e-9
PSD_TOL = 1e-9


@dataclass(frozen=True)
class ProbabilityPair:
    p0: float
    p1: float

    def __post_init__(self):
        for name, p in (("p0", self.p0), ("p1", self.p1)):
            if not -PAIR_TOL <= p <= 1 + PAIR_TOL:
                raise ValueError(f"{name}={p!r} is not a probability")
        if abs(self.p0 + self.p1 - 1.0) > PAIR_TOL:
            raise ValueError(f"p0 + p1 = {self.p0 + self.p1!r}, expected 1")

    @classmethod
    def of(cls, p0: float) -> ProbabilityPair:
        return cls(p0, 1.0 - p0)

    def as_tuple(self) -> tuple[float, float]:
        return self.p0, self.p1


def diag_of(rho) -> ProbabilityPair:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError(f"diag_of expects a single-qubit density matrix, got {rho.shape}")
    p0, p1 = np.real(np.diag(rho))
    for p in (p0, p1):
        if not -DIAG_TOL <= p <= 1 + DIAG_TOL:
            raise ValueError(f"diagonal entry {p!r} outside [0, 1]")
    return ProbabilityPair(float(min(max(p0, 0.0), 1.0)), float(min(max(p1, 0.0), 1.0)))


def histogram_to_pair(hist) -> ProbabilityPair:
    """Normalize a one-bit histogram (keys ``"0"``/``"1"``) to outcome probabilities."""
    counts, shots = hist.counts, hist.shots
    foreign = set(counts) - {"0", "1"}
    if foreign:
        raise ValueError(f"histogram has keys other than '0'/'1': {sorted(foreign)}")
    if shots <= 0:
        raise ValueError("histogram has zero shots")
    return ProbabilityPair(counts.get("0", 0) / shots, counts.get("1", 0) / shots)


def _diag_fidelity(ref: ProbabilityPair, other: ProbabilityPair) -> float:
    f = 1.0 - abs(ref.p0 - other.p0) / max(ref.p0, ref.p1)
    return min(max(f, 0.0), 1.0)


def f_rp(theory: ProbabilityPair, alice_est: ProbabilityPair) -> float:
    return _diag_fidelity(theory, alice_est)


def f_tp(alice_est: ProbabilityPair, bob_est: ProbabilityPair) -> float:
    return _diag_fidelity(alice_est, bob_est)


def f_ap(theory: ProbabilityPair, bob_est: ProbabilityPair) -> float:
    return _diag_fidelity(theory, bob_est)


# eigenvalues this small are roundoff; their square roots (~1e-8) would not be
ROUNDOFF_EIG = 1e-15


def psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    if w.min() < -PSD_TOL:
        raise ValueError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3e})")
    w = np.where(w > ROUNDOFF_EIG * max(1.0, w.max()), w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def uhlmann(rho_t, rho_e) -> float:
    """``[Tr sqrt(sqrt(rho_t) rho_e sqrt(rho_t))]**2``, clamped to [0, 1].

    Evaluated as the squared trace norm of ``sqrt(rho_t) sqrt(rho_e)``, which
    avoids taking square roots of near-zero eigenvalues for pure inputs.
    """
    a = np.asarray(rho_t, dtype=complex)
    b = np.asarray(rho_e, dtype=complex)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    a = psd_sqrt((a + a.conj().T) / 2)
    b = psd_sqrt((b + b.conj().T) / 2)
    f = float(np.sum(np.linalg.svd(a @ b, compute_uv=False)) ** 2)
    return min(max(f, 0.0), 1.0)


@dataclass(frozen=True)
class FidelityReport:
    f_rp: float
    f_tp: float
    f_ap: float
    f_uhlmann: float | None = None

    def __post_init__(self):
        for name in ("f_rp", "f_tp", "f_ap", "f_uhlmann"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v!r} outside [0, 1]")

    @classmethod
    def from_pairs(cls, theory: ProbabilityPair, alice: ProbabilityPair, bob: ProbabilityPair,
                   f_uhlmann: float | None = None) -> FidelityReport:
        return cls(f_rp(theory, alice), f_tp(alice, bob), f_ap(theory, bob), f_uhlmann)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"
