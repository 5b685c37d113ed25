import numpy as np
import pytest

import oracles
from qfte.engine import NoiseModel, run_exact, run_exact_result
from qfte.fidelity import uhlmann
from qfte.gates import random_state
from qfte.protocols import (
    CBSContractError,
    IndeterminateBitError,
    InputState,
    ProtocolRun,
    _cbs_relay,
    build_bidirectional,
    build_entanglement_swap,
    build_forward_cascade,
    build_parallel_teleport,
    build_qss,
    build_teleport,
    cbs_teleport,
    cl2qu,
    entanglement_swap,
    forward_cascade,
    multi_orbit_transmit,
    parallel_teleport,
    qss,
    qu2cl,
    receiver_distribution,
    receiver_state,
    run_protocol,
    teleport,
)
from qfte.source import QubitBudgetError

PSI1 = (0.8535533905932737, 0.14644660940672624)
NOISELESS = ProtocolRun(variant="feedback")


def exact_run(*inputs, variant="feedback", noise=None):
    return ProtocolRun(inputs, variant, noise, shots=1024, seed=3)


def marginal0(pc, channel=0, variant="feedback", noise=None):
    rho = receiver_state(pc, ProtocolRun((), variant, noise), channel)
    return float(np.real(rho[0, 0]))


def random_inputs(seed, k):
    rng = np.random.default_rng(seed)
    return [random_state(rng) for _ in range(k)]


BUILDERS = {
    "teleport": lambda ins: build_teleport(ins[0]),
    "2-lane teleport": lambda ins: build_parallel_teleport(ins[:2]),
    "qss": lambda ins: build_qss(ins[:1]),
    "2-lane qss": lambda ins: build_qss(ins[:2]),
    "bidirectional": lambda ins: build_bidirectional(ins[:2]),
    "swap, two sources": lambda ins: build_entanglement_swap(ins[0], "two_sources"),
    "swap, qft source": lambda ins: build_entanglement_swap(ins[0], "qft_source"),
    "cascade 2, per hop": lambda ins: build_forward_cascade(ins[0], 2, "per_hop"),
    "cascade 2, qft shared": lambda ins: build_forward_cascade(ins[0], 2, "qft_shared"),
}


class TestFullStateTransfer:
    @pytest.mark.parametrize("name", list(BUILDERS))
    @pytest.mark.parametrize("seed", range(5))
    def test_receiver_holds_input(self, name, seed):
        inputs = random_inputs(seed, 2)
        pc = BUILDERS[name](inputs)
        for ch, inp in enumerate(pc.inputs):
            rho = receiver_state(pc, NOISELESS, ch)
            assert np.abs(rho - inp.rho).max() <= 1e-9
            assert uhlmann(inp.rho, rho) == pytest.approx(1, abs=1e-9)

    @pytest.mark.parametrize("name", ["teleport", "qss", "swap, qft source"])
    def test_dense_oracle_agrees(self, name):
        pc = BUILDERS[name](["PSI4", "PSI1"])
        rho = oracles.receiver_rho(pc.circuit, pc.receivers[0])
        assert np.abs(rho - pc.inputs[0].rho).max() <= 1e-9

    @pytest.mark.parametrize("name", list(BUILDERS))
    def test_deferred_matches_feedback(self, name):
        pc = BUILDERS[name](random_inputs(11, 2))
        a = receiver_distribution(pc, ProtocolRun((), "feedback"))
        b = receiver_distribution(pc, ProtocolRun((), "deferred"))
        for k in set(a) | set(b):
            assert a.get(k, 0) == pytest.approx(b.get(k, 0), abs=1e-9)


class TestTeleport:
    def test_ket0(self):
        rep = teleport(exact_run("0"))
        assert rep.histograms[0].counts == {"0": 1024}

    def test_psi1_marginal(self):
        assert marginal0(build_teleport("PSI1")) == pytest.approx(0.8536, abs=1e-4)

    def test_report_fidelities_noiseless(self):
        f = teleport(exact_run("PSI1")).fidelities[0]
        assert (f.f_rp, f.f_tp, f.f_ap) == pytest.approx((1, 1, 1), abs=1e-9)
        assert f.f_uhlmann == pytest.approx(1, abs=1e-9)

    def test_noisy_fidelity_frozen(self):
        # receiver |0> weight 0.7883979 from the dense-matrix oracle
        f = teleport(exact_run("PSI1", noise=NoiseModel(0.02))).fidelities[0]
        assert f.f_ap == pytest.approx(1 - (PSI1[0] - 0.7883979) / PSI1[0], abs=1e-6)
        assert f.f_uhlmann < 1

    def test_explicit_amplitudes(self):
        rep = teleport(exact_run([0.6, 0.8j]))
        assert rep.fidelities[0].f_uhlmann == pytest.approx(1, abs=1e-9)

    def test_wrong_input_count(self):
        with pytest.raises(ValueError):
            teleport(exact_run("PSI1", "PSI2"))


class TestParallelTeleport:
    def test_lanes(self):
        pc = build_parallel_teleport(["PSI1", "PSI3"])
        assert pc.n_qubits == 6
        assert marginal0(pc, 0) == pytest.approx(0.8536, abs=1e-4)
        assert marginal0(pc, 1) == pytest.approx(0.5, abs=1e-4)

    def test_zero_inputs(self):
        rep = parallel_teleport(exact_run("0", "0"))
        assert [h.counts for h in rep.histograms] == [{"0": 1024}, {"0": 1024}]

    def test_lane_independence(self):
        a = receiver_state(build_parallel_teleport(["PSI1", "PSI3"]), NOISELESS, 0)
        b = receiver_state(build_parallel_teleport(["PSI1", "PSI4"]), NOISELESS, 0)
        assert np.abs(a - b).max() <= 1e-9

    def test_four_lanes(self):
        pc = build_parallel_teleport(["PSI1", "PSI2", "PSI3", "PSI4"])
        assert pc.n_qubits == 12 and pc.circuit.ops[8].gate == "QFT4"
        for ch, inp in enumerate(pc.inputs):
            assert marginal0(pc, ch) == pytest.approx(inp.theory.p0, abs=1e-9)

    def test_budget(self):
        with pytest.raises(QubitBudgetError):
            build_parallel_teleport(["0"] * 7)


class TestQSS:
    def test_ket0(self):
        assert qss(exact_run("0")).histograms[0].counts == {"0": 1024}

    def test_psi1(self):
        assert marginal0(build_qss(["PSI1"])) == pytest.approx(0.8536, abs=1e-4)

    def test_two_triads(self):
        pc = build_qss(["PSI1", "PSI3"])
        assert pc.circuit.ops[2].gate == "QFT2"
        assert marginal0(pc, 0) == pytest.approx(0.8536, abs=1e-4)
        assert marginal0(pc, 1) == pytest.approx(0.5, abs=1e-4)

    def test_recoverer_needs_middle_bit(self):
        # dropping the middle party's correction leaves the recoverer dephased
        pc = build_qss(["PSI3"])
        ops = [op for op in pc.circuit.ops if not (hasattr(op, "cbit") and op.cbit == 2
                                                   and hasattr(op, "gate"))]
        pc.circuit.ops = ops
        rho = receiver_state(pc, NOISELESS)
        assert uhlmann(pc.inputs[0].rho, rho) == pytest.approx(0.5, abs=1e-9)


class TestBidirectional:
    def test_crossed_directions(self):
        pc = build_bidirectional(["PSI1", "PSI3"])
        assert marginal0(pc, 0) == pytest.approx(0.8536, abs=1e-4)
        assert marginal0(pc, 1) == pytest.approx(0.5, abs=1e-4)

    def test_basis_inputs(self):
        rep = run_protocol("bidirec", exact_run("0", "1"))
        assert [h.counts for h in rep.histograms] == [{"0": 1024}, {"1": 1024}]

    def test_swapping_inputs_swaps_outputs(self):
        a = build_bidirectional(["PSI1", "PSI4"])
        b = build_bidirectional(["PSI4", "PSI1"])
        assert marginal0(a, 0) == pytest.approx(marginal0(b, 1), abs=1e-12)
        assert marginal0(a, 1) == pytest.approx(marginal0(b, 0), abs=1e-12)


class TestEntanglementSwap:
    @pytest.mark.parametrize("source", ["two_sources", "qft_source"])
    def test_psi1(self, source):
        rep = entanglement_swap(exact_run("PSI1"), source)
        assert rep.fidelities[0].f_ap == pytest.approx(1, abs=1e-9)
        assert rep.extras["swap_fidelity"] == pytest.approx(1, abs=1e-9)

    def test_ket0(self):
        assert run_protocol("en-sw-1", exact_run("0")).histograms[0].counts == {"0": 1024}

    def test_sources_interchangeable(self):
        a = run_exact(build_entanglement_swap("PSI4", "two_sources").measured())
        b = run_exact(build_entanglement_swap("PSI4", "qft_source").measured())
        for k in set(a) | set(b):
            assert a.get(k, 0) == pytest.approx(b.get(k, 0), abs=1e-9)

    def test_unknown_source(self):
        with pytest.raises(ValueError):
            build_entanglement_swap("PSI1", "three_sources")


class TestForwardCascade:
    def test_one_hop_is_teleport(self):
        assert build_forward_cascade("PSI2", 1).measured() == build_teleport("PSI2").measured()

    def test_two_hops_qft_shared(self):
        pc = build_forward_cascade("PSI1", 2, "qft_shared")
        assert marginal0(pc) == pytest.approx(0.8536, abs=1e-4)

    def test_noise_degrades_with_hops(self):
        noise = NoiseModel(0.02)
        one = forward_cascade(exact_run("PSI1", noise=noise), 1).fidelities[0].f_ap
        two = forward_cascade(exact_run("PSI1", noise=noise), 2).fidelities[0].f_ap
        # frozen from the dense-matrix oracle
        assert one == pytest.approx(0.9236656, abs=1e-6)
        assert two == pytest.approx(0.8728825, abs=1e-6)

    def test_per_hop_sequence(self):
        rep = forward_cascade(exact_run("PSI1", noise=NoiseModel(0.02)), 3)
        hops = rep.hop_f_ap
        assert len(hops) == 3
        assert hops[0] > hops[1] > hops[2]
        assert hops[-1] == pytest.approx(rep.fidelities[0].f_ap, abs=1e-12)

    def test_ghz_shared_not_better_than_qft(self):
        ghz = receiver_state(build_forward_cascade("PSI4", 2, "ghz_shared"), NOISELESS)
        qft = receiver_state(build_forward_cascade("PSI4", 2, "qft_shared"), NOISELESS)
        rho = InputState.parse("PSI4").rho
        assert uhlmann(rho, ghz) <= uhlmann(rho, qft) + 1e-9

    @pytest.mark.parametrize("hops,source", [(0, "per_hop"), (2, "shared")])
    def test_invalid(self, hops, source):
        with pytest.raises(ValueError):
            build_forward_cascade("PSI1", hops, source)

    def test_label(self):
        rep = run_protocol("fo-ca-2", exact_run("PSI1"), source="qft_shared")
        assert rep.protocol == "fo-ca-2" and len(rep.hop_f_ap) == 2


class TestCBS:
    @pytest.mark.parametrize("bit", [0, 1])
    def test_bits(self, bit):
        rep = cbs_teleport(bit, shots=512)
        assert rep.histograms[0].counts == {str(bit): 512}

    @pytest.mark.parametrize("bit", [2, "+", 0.5, "PSI1"])
    def test_contract(self, bit):
        with pytest.raises(CBSContractError, match="outside CBS contract"):
            cbs_teleport(bit)

    def test_reduced_circuit_loses_phase(self):
        pc = _cbs_relay("PSI3", 1)
        rho = receiver_state(pc, NOISELESS)
        # diagonal survives, coherence does not
        assert np.real(np.diag(rho)) == pytest.approx([0.5, 0.5], abs=1e-9)
        assert uhlmann(pc.inputs[0].rho, rho) == pytest.approx(0.5, abs=1e-9)

    def test_sender_has_no_hadamard(self):
        pc = _cbs_relay("KET1", 1)
        gates = [op.gate for op in pc.circuit.ops if hasattr(op, "gate")]
        assert gates == ["X", "H", "CNOT", "CNOT", "X"]


class TestEndpoints:
    def test_cl2qu(self):
        assert np.array_equal(cl2qu(1), [0, 1])

    def test_qu2cl(self):
        assert qu2cl({"1": 7000, "0": 1192}) == 1
        assert qu2cl({"0": 5}) == 0

    def test_tie(self):
        with pytest.raises(IndeterminateBitError):
            qu2cl({"0": 4096, "1": 4096})


class TestMultiOrbit:
    def test_noiseless(self):
        res = multi_orbit_transmit("0110", 5, shots=256)
        assert res.received == "0110"
        assert all(f == 1.0 for hops in res.hop_f_ap for f in hops)
        assert all(len(h) == 5 for h in res.hop_f_ap)

    def test_noisy_monotone(self):
        res = multi_orbit_transmit("0", 5, NoiseModel(0.01), shots=8192, seed=7)
        seq = res.hop_f_ap[0]
        assert all(b <= a + 0.01 for a, b in zip(seq, seq[1:]))
        assert res.received == "0"

    def test_exact_backend_matches_trend(self):
        res = multi_orbit_transmit("1", 3, NoiseModel(0.01), shots=64, backend="exact")
        seq = res.hop_f_ap[0]
        assert seq[0] == pytest.approx(0.99, abs=1e-12)
        assert seq[0] > seq[1] > seq[2]

    def test_deterministic(self):
        a = multi_orbit_transmit("10", 3, NoiseModel(0.05), shots=500, seed=2)
        b = multi_orbit_transmit("10", 3, NoiseModel(0.05), shots=500, seed=2)
        assert a == b

    @pytest.mark.parametrize("bits,hops", [("", 5), ("012", 5), ("01", 1)])
    def test_invalid(self, bits, hops):
        with pytest.raises(ValueError):
            multi_orbit_transmit(bits, hops)

    def test_tie_surfaces(self):
        with pytest.raises(IndeterminateBitError):
            # half the shots flip at encoding; seed chosen so the vote ties
            multi_orbit_transmit("0", 2, NoiseModel(0.5), shots=2, seed=5)


class TestRunner:
    def test_unknown_label(self):
        with pytest.raises(KeyError, match="tele, 2-tele"):
            run_protocol("teleportation", exact_run("PSI1"))

    @pytest.mark.parametrize("label,n", [("2-tele", 1), ("4-tele", 2), ("qss", 2), ("2-qss", 1),
                                         ("bidirec", 1)])
    def test_input_count(self, label, n):
        with pytest.raises(ValueError):
            run_protocol(label, exact_run(*["PSI1"] * n))

    @pytest.mark.parametrize("kwargs", [{"variant": "lazy"}, {"backend": "gpu"}, {"shots": 0}])
    def test_invalid_run(self, kwargs):
        with pytest.raises(ValueError):
            ProtocolRun(("PSI1",), **kwargs)

    def test_shots_backend_without_uhlmann(self):
        run = ProtocolRun(("PSI1",), "deferred", None, 2048, 1, "shots")
        f = teleport(run).fidelities[0]
        assert f.f_uhlmann is None and f.f_ap > 0.97

    def test_report_dict(self):
        doc = teleport(exact_run("PSI1")).to_dict()
        assert doc["protocol"] == "tele"
        assert doc["channels"][0]["input"] == "PSI1"

    def test_noisy_exact_result_sums_to_one(self):
        pc = build_qss(["PSI2"])
        res = run_exact_result(pc.measured(), NoiseModel(0.01, 0.01, 0.01))
        assert res.total_probability == pytest.approx(1, abs=1e-12)
