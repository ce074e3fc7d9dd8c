from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.optimize import minimize

from aevqe.ansatz import (
    build_hw_efficient,
    build_initializer,
    build_parity_ladder,
    build_uccgsd_h2,
    default_layers,
    ladder_bonds,
    parameter_shift_gradient,
    random_parameters,
    reference_preparation,
)
from aevqe.circuit import Circuit, bind, from_text, to_text
from aevqe.hamiltonian import build_h2, build_tfim, dense_matrix, h2_coefficients_at
from aevqe.qsim import Gate, QuantumState, run_circuit
from aevqe.solvers import aevqe_loss


def ancilla_blocks(n_a: int, n_p: int, circuit: Circuit) -> np.ndarray:
    """Rows: ancilla outcome m; columns: physical basis index (unnormalized)."""
    amps = run_circuit(circuit).amplitudes
    return amps.reshape(1 << n_p, 1 << n_a).T


@pytest.mark.parametrize("style", ["cz", "bell"])
@pytest.mark.parametrize("n_a, n_p", [(a, p) for a in (1, 2, 3) for p in range(1, 10) if a <= p])
def test_initializer_is_maximally_entangled(n_a, n_p, style):
    blocks = ancilla_blocks(n_a, n_p, build_initializer(n_a, n_p, style))
    K = 1 << n_a
    rho_a = blocks @ blocks.conj().T
    # trace distance to I/K
    assert 0.5 * np.abs(np.linalg.eigvalsh(rho_a - np.eye(K) / K)).sum() < 1e-9
    # post-selected physical states are orthonormal after rescaling
    gram = K * blocks.conj() @ blocks.T
    np.testing.assert_allclose(gram, np.eye(K), atol=1e-9)


def test_initializer_one_ancilla_five_spins():
    blocks = ancilla_blocks(1, 5, build_initializer(1, 5))
    rho_a = blocks @ blocks.conj().T
    np.testing.assert_allclose(rho_a, np.eye(2) / 2, atol=1e-12)


@pytest.mark.parametrize("m", range(4))
def test_reference_states_match_initializer(m):
    blocks = ancilla_blocks(2, 3, build_initializer(2, 3))
    ref = run_circuit(reference_preparation(m, 2, 3)).amplitudes
    assert abs(np.vdot(ref, 2 * blocks[m])) == pytest.approx(1.0, abs=1e-12)


def test_initializer_rejects_too_many_ancillas():
    with pytest.raises(ValueError):
        build_initializer(3, 2)


@pytest.mark.parametrize("n, layers, slots", [(3, 1, 6), (5, 1, 10), (5, 2, 20)])
def test_hw_efficient_slot_examples(n, layers, slots):
    assert build_hw_efficient(n, layers).n_params == slots


@pytest.mark.parametrize("n", range(2, 10))
@pytest.mark.parametrize("layers", [1, 2, 3])
def test_slot_count_formulas(n, layers):
    assert build_hw_efficient(n, layers).n_params == 2 * n * layers
    assert build_parity_ladder(n, layers).n_params == 2 * (2 * n - 3) * layers
    assert len(ladder_bonds(n)) == 2 * n - 3


def test_default_layers():
    assert [default_layers(a) for a in (1, 2, 3)] == [1, 1, 2]


def test_uccgsd_zero_is_identity(rng):
    circuit = build_uccgsd_h2()
    assert circuit.n_params == 6
    for _ in range(3):
        start = np.zeros(4, complex)
        start[rng.integers(4)] = 1
        out = run_circuit(bind(circuit, np.zeros(6)), initial_state=QuantumState(2, start))
        np.testing.assert_allclose(out.amplitudes, start, atol=1e-12)


def test_uccgsd_reaches_subspace_optimum():
    H = build_h2(h2_coefficients_at(0.6))
    vals = np.linalg.eigvalsh(dense_matrix(H, 2).real)
    circuit = build_initializer(1, 2) + build_uccgsd_h2().embed(1)
    best = min(
        (minimize(lambda t: aevqe_loss(bind(circuit, t), H), x0, method="BFGS", options={"gtol": 1e-10})
         for x0 in np.random.default_rng(0).uniform(-np.pi, np.pi, (3, 6))),
        key=lambda r: r.fun,
    )
    assert abs(best.fun - vals[:2].mean()) < 1e-6


def _builders():
    tfim3 = build_tfim(3, 1.0, 0.4)
    return [
        ("hw_efficient", build_initializer(1, 3) + build_hw_efficient(3, 1).embed(1), tfim3),
        ("parity_ladder", build_initializer(1, 3) + build_parity_ladder(3, 2).embed(1), tfim3),
        ("uccgsd", build_initializer(1, 2) + build_uccgsd_h2().embed(1), build_h2(h2_coefficients_at(0.6))),
    ]


@pytest.mark.parametrize("name, circuit, H", _builders(), ids=[b[0] for b in _builders()])
def test_parameter_shift_matches_finite_differences(name, circuit, H):
    rng = np.random.default_rng(5)

    def loss(t):
        return aevqe_loss(bind(circuit, t), H)

    step = 1e-5
    for _ in range(20):
        theta = random_parameters(circuit.n_params, rng)
        analytic = parameter_shift_gradient(loss, theta)
        numeric = np.array(
            [(loss(theta + step * e) - loss(theta - step * e)) / (2 * step) for e in np.eye(theta.size)]
        )
        assert np.abs(analytic - numeric).max() < 1e-6
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(np.linalg.norm(analytic), 1e-3)


def test_bind_idempotent_and_pure(rng):
    circuit = build_parity_ladder(4, 1)
    theta = rng.normal(size=circuit.n_params)
    once = bind(circuit, theta)
    twice = bind(once, theta)
    assert once.gates == twice.gates
    assert not circuit.is_bound and once.is_bound


@pytest.mark.parametrize("builder", [lambda: build_hw_efficient(3, 1), lambda: build_parity_ladder(3, 1), build_uccgsd_h2])
def test_bind_periodicity(builder, rng):
    circuit = builder()
    theta = rng.normal(size=circuit.n_params)
    base = run_circuit(bind(circuit, theta)).amplitudes
    for j in range(circuit.n_params):
        shifted = theta.copy()
        shifted[j] += 2 * math.pi
        out = run_circuit(bind(circuit, shifted)).amplitudes
        assert abs(np.vdot(base, out)) == pytest.approx(1.0, abs=1e-12)


def test_bind_length_mismatch():
    with pytest.raises(ValueError, match="expected 6 parameters"):
        bind(build_hw_efficient(3, 1), np.zeros(5))


def test_slots_must_be_dense():
    with pytest.raises(ValueError):
        Circuit(0, 2, (Gate("RY", (0,), slots=(1,)),))
    with pytest.raises(ValueError):
        Circuit(0, 2, (Gate("RY", (0,), slots=(0,)), Gate("RZ", (1,), slots=(0,))))


def test_concatenation_renumbers_slots():
    combined = build_hw_efficient(2, 1) + build_hw_efficient(2, 1)
    assert combined.n_params == 8
    assert sorted(combined.param_slots) == list(range(8))


def test_text_round_trip(rng):
    unitary = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))[0]
    circuit = build_initializer(1, 3) + build_parity_ladder(3, 1).embed(1)
    circuit = Circuit(1, 3, circuit.gates + (Gate("UNITARY", (0,), matrix=unitary),))
    for c in (circuit, bind(circuit, rng.normal(size=circuit.n_params))):
        back = from_text(to_text(c))
        assert back.n_ancilla == 1 and back.n_physical == 3
        np.testing.assert_allclose(
            run_circuit(bind(back, np.ones(back.n_params)) if not back.is_bound else back).amplitudes,
            run_circuit(bind(c, np.ones(c.n_params)) if not c.is_bound else c).amplitudes,
            atol=1e-12,
        )
