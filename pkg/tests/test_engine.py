import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qfte.circuit import Circuit, CircuitError
from qfte.engine import (
    ExactBackendLimit,
    Histogram,
    MeasurementInPureBackend,
    NoiseModel,
    defer_measurements,
    marginal,
    run_exact,
    run_exact_result,
    run_shots,
    shot_uniforms,
    simulate_pure,
)
from qfte.gates import random_state, state_prep_unitary


def fig2b_source() -> Circuit:
    """QFT2 on the middle qubits, then flipped CNOT on (0,1) and CNOT on (2,3)."""
    return Circuit(4).gate("QFT2", 1, 2).gate("CNOT_FLIPPED", 0, 1).cnot(2, 3)


def teleport(prep="X_POW_1_4", measure_bob=True) -> Circuit:
    c = Circuit(3, 3)
    c.gate(prep, 0).h(1).cnot(1, 2)
    c.cnot(0, 1).h(0).measure(0, 0).measure(1, 1)
    c.c_if(1, "X", 2).c_if(0, "Z", 2)
    if measure_bob:
        c.measure(2, 2)
    return c


class TestPureBackend:
    def test_fig2b_pipeline(self):
        c = fig2b_source()
        t1 = simulate_pure(Circuit(4).gate("QFT2", 1, 2))
        expected_t1 = np.zeros(16)
        expected_t1[[0, 2, 4, 6]] = 0.5
        assert np.abs(t1 - expected_t1).max() <= 1e-12
        bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
        assert np.abs(simulate_pure(c) - np.kron(bell, bell)).max() <= 1e-12

    def test_rejects_measurement(self):
        with pytest.raises(MeasurementInPureBackend):
            simulate_pure(Circuit(1, 1).measure(0, 0))

    def test_qubit_limit(self):
        with pytest.raises(ExactBackendLimit):
            simulate_pure(Circuit(21))

    @given(st.integers(0, 2**32 - 1))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        c = Circuit(3).gate(state_prep_unitary(random_state(rng)), 1).gate("QFT2", 2, 0).cnot(1, 2)
        rho = sum(oracles.interpret(c).values())
        psi = simulate_pure(c)
        assert np.allclose(np.outer(psi, psi.conj()), rho, atol=1e-12)


class TestHistogram:
    def test_sorted_and_zero_dropped(self):
        h = Histogram({"1": 3, "0": 5, "11": 0}, 8)
        assert list(h.counts) == ["0", "1"]

    def test_counts_must_sum(self):
        with pytest.raises(ValueError):
            Histogram({"0": 3}, 4)

    def test_marginal(self):
        h = Histogram({"01": 2, "11": 3, "10": 1}, 6)
        assert h.marginal([1]).counts == {"0": 1, "1": 5}

    def test_csv_probabilities_sum_to_one(self):
        h = Histogram({"00": 1, "01": 2, "11": 4}, 7)
        rows = h.to_csv().splitlines()
        assert rows[0] == "bitstring,count,probability"
        assert math.isclose(sum(float(r.split(",")[2]) for r in rows[1:]), 1, abs_tol=1e-9)


class TestNoiseModel:
    @pytest.mark.parametrize("args", [(-0.1, 0, 0), (0.6, 0.5, 0), (0, 0, 1.5)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            NoiseModel(*args)

    def test_trivial(self):
        assert NoiseModel().trivial and not NoiseModel(p_z=0.1).trivial


class TestShots:
    def test_deterministic_under_seed(self):
        c = teleport()
        assert run_shots(c, 2000, 11) == run_shots(c, 2000, 11)
        assert run_shots(c, 2000, 11, NoiseModel(0.05)) == run_shots(c, 2000, 11, NoiseModel(0.05))

    def test_seed_changes_sample(self):
        c = teleport()
        assert run_shots(c, 2000, 1) != run_shots(c, 2000, 2)

    def test_prefix_of_shots_is_stable(self):
        # every shot draws from its own substream, so fewer shots give a sub-sample
        c = Circuit(1, 1).h(0).measure(0, 0)
        u = shot_uniforms(4, 10, 1)
        h = run_shots(c, 10, 4)
        assert h.counts.get("1", 0) == int(np.sum(u[:, 0] < 0.5))

    def test_keys_cover_all_cbits(self):
        h = run_shots(Circuit(2, 3).x(1).measure(1, 2), 50, 0)
        assert h.counts == {"001": 50}

    @pytest.mark.parametrize("shots", [0, -3, 2.5])
    def test_bad_shots(self, shots):
        with pytest.raises(ValueError):
            run_shots(teleport(), shots, 0)

    @pytest.mark.parametrize("noise", [None, NoiseModel(0.03), NoiseModel(0.01, 0.02, 0.03)])
    def test_within_five_sigma_of_exact(self, noise):
        c = teleport()
        shots = 8192
        exact = run_exact(c, noise)
        hist = run_shots(c, shots, 99, noise)
        for key in set(exact) | set(hist.counts):
            p = exact.get(key, 0.0)
            freq = hist.counts.get(key, 0) / shots
            assert abs(freq - p) <= 5 * oracles.binomial_sigma(p, shots) + 1e-12

    def test_chunking_does_not_change_results(self, monkeypatch):
        import qfte.engine as engine
        c = teleport()
        full = run_shots(c, 600, 3, NoiseModel(0.02))
        monkeypatch.setattr(engine, "CHUNK_AMPLITUDES", 8 * 7)
        assert run_shots(c, 600, 3, NoiseModel(0.02)) == full


class TestExact:
    def test_teleport_bob_marginal(self):
        bob = marginal(run_exact(teleport()), [2])
        assert bob["0"] == pytest.approx(0.8536, abs=1e-4)
        assert bob["0"] == pytest.approx(math.cos(math.pi / 8) ** 2, abs=1e-12)

    @pytest.mark.parametrize("noise", [(0.0, 0.0, 0.0), (0.02, 0.0, 0.0), (0.01, 0.02, 0.03)])
    def test_distribution_matches_oracle(self, noise):
        c = teleport()
        got = run_exact(c, NoiseModel(*noise))
        want = oracles.register_distribution(c, noise)
        assert set(got) == {k for k, v in want.items() if v > 1e-15}
        for k, v in got.items():
            assert v == pytest.approx(want[k], abs=1e-12)

    def test_noisy_teleport_frozen(self):
        # derived with the dense-matrix oracle: Bob's |0> weight for psi1 under p_x = 0.02
        bob = marginal(run_exact(teleport(), NoiseModel(0.02)), [2])
        assert bob["0"] == pytest.approx(0.7883979, abs=1e-7)

    @pytest.mark.parametrize("noise", [None, NoiseModel(0.05, 0.01, 0.0)])
    def test_branch_weights_sum_to_one(self, noise):
        res = run_exact_result(teleport(), noise)
        assert res.total_probability == pytest.approx(1, abs=1e-12)

    def test_pure_and_density_methods_agree(self):
        c = teleport()
        a = run_exact_result(c, method="pure").reduced_density_matrix([2])
        b = run_exact_result(c, method="density").reduced_density_matrix([2])
        assert np.allclose(a, b, atol=1e-12)

    def test_noisy_size_limit(self):
        with pytest.raises(ExactBackendLimit):
            run_exact(Circuit(11).h(0), NoiseModel(0.01))


class TestDeferral:
    def test_rewrites_feedback(self):
        d = defer_measurements(teleport())
        assert not d.has_classical_control()
        gates = [op.gate for op in d.ops if hasattr(op, "gate")]
        assert "CNOT" in gates and "CZ" in gates

    @given(st.integers(0, 2**32 - 1))
    def test_distribution_preserved(self, seed):
        u = state_prep_unitary(random_state(np.random.default_rng(seed)))
        c = teleport(prep=u)
        a, b = run_exact(c), run_exact(defer_measurements(c))
        for k in set(a) | set(b):
            assert a.get(k, 0) == pytest.approx(b.get(k, 0), abs=1e-9)

    def test_other_gates_become_controlled(self):
        c = Circuit(2, 1).h(0).measure(0, 0).c_if(0, "H", 1)
        d = defer_measurements(c)
        assert d.ops[1].gate == "C-H"
        assert run_exact(d) == pytest.approx(run_exact(c))

    @pytest.mark.parametrize("build", [
        lambda: Circuit(2, 1).measure(0, 0).measure(1, 0),
        lambda: Circuit(2, 2).measure(0, 0).measure(0, 1),
        lambda: Circuit(2, 1).measure(0, 0).h(0),
    ])
    def test_undeferrable(self, build):
        with pytest.raises(CircuitError):
            defer_measurements(build())
