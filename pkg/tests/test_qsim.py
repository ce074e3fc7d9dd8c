from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aevqe.ansatz import build_initializer
from aevqe.circuit import Circuit
from aevqe.hamiltonian import PauliSum, build_h2, build_tfim, dense_matrix, h2_coefficients_at
from aevqe.qsim import (
    Gate,
    MeasurementOutcome,
    NoiseModel,
    QuantumState,
    apply_gate,
    estimate_expectation_sampled,
    expectation,
    run_circuit,
    sample,
)

from conftest import prep_circuit, random_state

S2 = 1 / math.sqrt(2)


def test_hadamard_on_zero():
    out = apply_gate(QuantumState.zero(1), Gate("H", (0,)))
    np.testing.assert_allclose(out.amplitudes, [S2, S2], atol=1e-12)


def test_cz_entangles_minus_states():
    minus = np.array([1, -1]) * S2
    state = QuantumState(2, np.kron(minus, minus))
    out = apply_gate(state, Gate("CZ", (0, 1)))
    np.testing.assert_allclose(out.amplitudes, [0.5, -0.5, -0.5, -0.5], atol=1e-12)
    # no longer a product state: the 2x2 amplitude matrix has rank 2
    assert np.linalg.matrix_rank(out.amplitudes.reshape(2, 2), tol=1e-9) == 2


def test_rz_quarter_turn_is_phase_gate():
    plus = QuantumState(1, np.array([S2, S2]))
    out = apply_gate(plus, Gate("RZ", (0,), (math.pi / 2,))).amplitudes
    expected = np.array([S2, 1j * S2])
    assert abs(abs(np.vdot(expected, out)) - 1) < 1e-12


def test_little_endian_ordering():
    out = apply_gate(QuantumState.zero(3), Gate("X", (1,)))
    assert np.argmax(np.abs(out.amplitudes)) == 0b010


def test_cnot_first_target_is_control():
    state = QuantumState.basis(2, 0b01)  # qubit 0 set
    out = apply_gate(state, Gate("CNOT", (0, 1)))
    assert np.argmax(np.abs(out.amplitudes)) == 0b11


@pytest.mark.parametrize(
    "gate, message",
    [
        (lambda: Gate("H", (3,)), "out of range"),
        (lambda: Gate("UNITARY", (0,), matrix=np.array([[1, 1], [0, 1]])), "not unitary"),
        (lambda: Gate("CZ", (1, 1)), "repeated"),
    ],
)
def test_gate_errors(gate, message):
    with pytest.raises(ValueError, match=message):
        apply_gate(QuantumState.zero(2), gate())


def test_empty_circuit_leaves_state_unchanged(rng):
    amps = random_state(3, rng)
    out = run_circuit(Circuit(0, 3), initial_state=QuantumState(3, amps))
    np.testing.assert_array_equal(out.amplitudes, amps)


def test_certain_error_is_reproducible():
    circuit = Circuit(0, 1, (Gate("RX", (0,), (0.3,)),))
    noise = NoiseModel(p1=1.0)
    clean = run_circuit(circuit).amplitudes
    a = run_circuit(circuit, noise, rng_seed=7).amplitudes
    b = run_circuit(circuit, noise, rng_seed=7).amplitudes
    np.testing.assert_array_equal(a, b)
    # exactly one non-identity Pauli was applied after the gate
    paulis = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    overlaps = [abs(np.vdot(p @ clean, a)) for p in paulis]
    assert max(overlaps) == pytest.approx(1.0, abs=1e-12)
    assert abs(np.vdot(clean, a)) < 1 - 1e-6


def test_bell_initializer():
    state = run_circuit(build_initializer(1, 2, style="bell")).amplitudes
    expected = np.zeros(8)
    expected[0b000] = expected[0b011] = S2  # ancilla and first physical qubit paired
    assert abs(np.vdot(expected, state)) ** 2 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "amps, obs, value",
    [
        ([1, 0], PauliSum.from_labels({"Z0": 1}), 1.0),
        ([S2, S2], PauliSum.from_labels({"X0": 1}), 1.0),
        (np.eye(8)[0], build_tfim(3, 1.0, 0.0), -1.0),
    ],
)
def test_expectation_examples(amps, obs, value):
    n = int(np.log2(len(amps)))
    assert expectation(QuantumState(n, amps), obs) == pytest.approx(value, abs=1e-12)


def test_expectation_rejects_non_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        expectation(QuantumState.zero(1), PauliSum.from_labels({"X0": 1j}))


def test_sample_zero_state():
    out = sample(QuantumState.zero(1), None, 1000, rng_seed=3)
    assert out.counts == {"0": 1000}
    assert out.shots == 1000


def test_sample_plus_state_binomial():
    shots = 10**6
    out = sample(QuantumState(1, [S2, S2]), None, shots, rng_seed=11)
    frac = out.counts["1"] / shots
    assert abs(frac - 0.5) < 3 * 0.5 / 1e3


def test_sample_readout_flip_rate():
    shots = 10**6
    noise = NoiseModel(readout=((0.05, 0.0),))
    out = sample(QuantumState.zero(1), None, shots, noise, rng_seed=5)
    frac = out.counts["1"] / shots
    assert abs(frac - 0.05) < 3 * math.sqrt(0.05 * 0.95 / shots)


def test_sample_rejects_zero_shots():
    with pytest.raises(ValueError):
        sample(QuantumState.zero(1), None, 0)


def test_measurement_outcome_invariant():
    with pytest.raises(ValueError):
        MeasurementOutcome({"0": 3, "1": 2}, shots=4)


def test_sampled_z_on_zero_is_exact():
    est = estimate_expectation_sampled(Circuit(0, 1), PauliSum.from_labels({"Z0": 1}), 17, rng_seed=0)
    assert est == 1.0


def test_sampled_x_on_zero_is_near_zero():
    est = estimate_expectation_sampled(Circuit(0, 1), PauliSum.from_labels({"X0": 1}), 10**6, rng_seed=2)
    assert abs(est) < 0.004


def test_sampled_h2_ground_state():
    H = build_h2(h2_coefficients_at(0.6))
    vals, vecs = np.linalg.eigh(dense_matrix(H, 2).real)
    est = estimate_expectation_sampled(prep_circuit(vecs[:, 0]), H, 15 * 1024, rng_seed=9)
    assert abs(est - vals[0]) < 0.02


def test_y_basis_change():
    # S H |0> has <Y> = +1
    circuit = Circuit(0, 1, (Gate("H", (0,)), Gate("S", (0,))))
    est = estimate_expectation_sampled(circuit, PauliSum.from_labels({"Y0": 1}), 500, rng_seed=0)
    assert est == 1.0


# --- invariants ----------------------------------------------------------------

_ONE_Q = ["H", "S", "SDG", "X", "Y", "Z", "RX", "RY", "RZ"]
_TWO_Q = ["CZ", "CNOT", "YZZY"]


@st.composite
def gate_lists(draw, n=3):
    gates = []
    for _ in range(draw(st.integers(0, 12))):
        kind = draw(st.sampled_from(_ONE_Q + _TWO_Q))
        if kind in _TWO_Q:
            targets = tuple(draw(st.permutations(range(n)))[:2])
        else:
            targets = (draw(st.integers(0, n - 1)),)
        n_angles = {"RX": 1, "RY": 1, "RZ": 1, "YZZY": 2}.get(kind, 0)
        angles = tuple(draw(st.floats(-7, 7)) for _ in range(n_angles)) or None
        gates.append(Gate(kind, targets, angles))
    return Circuit(0, n, tuple(gates))


@settings(max_examples=60, deadline=None)
@given(gate_lists(), st.integers(0, 2**31), st.floats(0, 1))
def test_norm_preserved(circuit, seed, p):
    noise = NoiseModel(p1=p, p2=p)
    assert abs(run_circuit(circuit).norm() - 1) < 1e-9
    assert abs(run_circuit(circuit, noise, rng_seed=seed).norm() - 1) < 1e-9


@pytest.mark.parametrize(
    "circuit, obs, shrink",
    [
        # uniform X/Y/Z after a one-qubit gate: 2 of 3 errors flip Z
        (Circuit(0, 1, (Gate("RY", (0,), (0.7,)),)), PauliSum.from_labels({"Z0": 1}), 4 / 3),
        # uniform 15 two-qubit errors: 8 anticommute with Z0
        (
            Circuit(0, 2, (Gate("RY", (0,), (0.4,)), Gate("RY", (1,), (1.1,)), Gate("CNOT", (1, 0)))),
            PauliSum.from_labels({"Z0": 1}),
            16 / 15,
        ),
    ],
)
def test_trajectory_average_matches_channel(circuit, obs, shrink):
    p = 0.3
    gates = circuit.gates
    # noise only after the last gate, to isolate one channel
    prefix = Circuit(0, circuit.n_qubits, gates[:-1])
    start = run_circuit(prefix)
    last = Circuit(0, circuit.n_qubits, gates[-1:])
    noise = NoiseModel(p1=p, p2=p)
    values = np.array([expectation(run_circuit(last, noise, s, start), obs) for s in range(10_000)])
    clean = expectation(run_circuit(circuit), obs)
    expected = (1 - shrink * p) * clean
    sigma = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(values.mean() - expected) < 3 * sigma


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31))
def test_sampled_estimator_consistent(seed):
    rng = np.random.default_rng(seed)
    amps = random_state(3, rng)
    labels = {}
    while len(labels) < 5:
        ops = " ".join(f"{rng.choice(list('IXYZ'))}{q}" for q in range(3)).split()
        label = " ".join(o for o in ops if o[0] != "I")
        if label:
            labels[label] = float(rng.normal())
    obs = PauliSum.from_labels(labels)
    shots = 10**6
    state = QuantumState(3, amps)
    exact = expectation(state, obs)
    # triangle bound on the standard deviation of correlated term estimates
    sigma = sum(
        abs(t.coefficient.real) * math.sqrt(max(1 - expectation(state, PauliSum([t]) * (1 / t.coefficient)) ** 2, 0) / shots)
        for t in obs.terms
    )
    est = estimate_expectation_sampled(prep_circuit(amps), obs, shots, rng_seed=seed)
    assert abs(est - exact) < 4 * sigma + 1e-12


def test_sampling_is_seeded():
    circuit = build_initializer(1, 3)
    noise = NoiseModel(p1=0.05, p2=0.1, readout=((0.02, 0.03),) * 4)
    state = QuantumState.zero(4)
    a = sample(state, circuit, 4096, noise, rng_seed=21)
    b = sample(state, circuit, 4096, noise, rng_seed=21)
    c = sample(state, circuit, 4096, noise, rng_seed=22)
    assert a == b
    assert a != c
