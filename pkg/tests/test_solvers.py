from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from aevqe.ansatz import (
    build_initializer,
    build_parity_ladder,
    build_uccgsd_h2,
    reference_preparation,
    superposition_preparation,
)
from aevqe.circuit import Circuit, bind
from aevqe.hamiltonian import PauliSum, build_h2, build_tfim, dense_matrix, h2_coefficients_at
from aevqe.optim import OptimizerSpec
from aevqe.qsim import Gate, expectation, run_circuit
from aevqe.solvers import (
    Estimator,
    RunRecord,
    SolverConfig,
    aevqe_loss,
    ancilla_observable_label,
    build_problem,
    default_weights,
    diagonalize_subspace,
    eigenstate_amplitudes,
    exact_levels,
    mcvqe_subspace,
    measure_subspace_hamiltonian,
    problem_loss,
    run_solver,
    shot_allocation,
    solve_spectrum,
    ssvqe_loss,
    state_fidelity,
)


def exact_optimum(config: SolverConfig, H: PauliSum, ansatz: Circuit, restarts: int = 4, seed: int = 0):
    """Best BFGS optimum of the noiseless loss over a few random starts."""
    problem = build_problem(config, ansatz)
    rng = np.random.default_rng(seed)
    runs = [
        minimize(lambda t: problem_loss(problem, t, H, None), x0, method="BFGS", options={"gtol": 1e-9})
        for x0 in rng.uniform(-np.pi, np.pi, (restarts, ansatz.n_params))
    ]
    best = min(runs, key=lambda r: r.fun)
    return problem, best.x, best.fun


def levels(H: PauliSum, n: int) -> np.ndarray:
    return np.linalg.eigvalsh(dense_matrix(H, n).real)


# --- losses ----------------------------------------------------------------------


def test_single_level_loss_is_plain_vqe(rng):
    H = build_tfim(3, 1.0, 0.3)
    ansatz = build_parity_ladder(3, 1)
    circuit = bind(build_initializer(0, 3) + ansatz, rng.normal(size=ansatz.n_params))
    assert aevqe_loss(circuit, H) == pytest.approx(expectation(run_circuit(circuit), H), abs=1e-12)
    assert ssvqe_loss([circuit], H, [1.0]) == pytest.approx(aevqe_loss(circuit, H), abs=1e-12)


def test_loss_rejects_hamiltonian_on_ancillas():
    circuit = build_initializer(1, 2)
    with pytest.raises(ValueError, match="physical register"):
        aevqe_loss(circuit, build_tfim(3))


def test_two_level_optimum_matches_oracle():
    H = build_tfim(3, 1.0, 0.5)
    _, _, loss = exact_optimum(SolverConfig(K=2), H, build_parity_ladder(3, 1))
    assert abs(loss - levels(H, 3)[:2].mean()) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2]), st.floats(0.1, 2.0))
def test_variational_bound(seed, n_a, h):
    H = build_tfim(3, 1.0, h)
    K = 1 << n_a
    circuit = build_initializer(n_a, 3) + build_parity_ladder(3, 1).embed(n_a)
    theta = np.random.default_rng(seed).uniform(-np.pi, np.pi, circuit.n_params)
    assert aevqe_loss(bind(circuit, theta), H) >= levels(H, 3)[:K].mean() - 1e-9


def test_variational_bound_sampled():
    H = build_tfim(3, 1.0, 0.5)
    circuit = build_initializer(1, 3) + build_parity_ladder(3, 1).embed(1)
    problem, theta, _ = exact_optimum(SolverConfig(K=2), H, build_parity_ladder(3, 1))
    bound = bind(circuit, theta)
    shots = 4096
    est = Estimator(shots=shots)
    values = [aevqe_loss(bound, H, est, np.random.default_rng(s)) for s in range(20)]
    # per-string variance is at most 1 and settings are shared, so sum |c| bounds sigma
    sigma = sum(abs(t.coefficient) for t in H.terms) / math.sqrt(shots)
    assert min(values) >= levels(H, 3)[:2].mean() - 4 * sigma


def test_weighted_h2_optimum():
    H = build_h2(h2_coefficients_at(0.6))
    vals = levels(H, 2)
    ansatz = build_uccgsd_h2()
    weights = (2 / 3, 1 / 3)
    circuits = [reference_preparation(m, 1, 2) + ansatz for m in range(2)]
    runs = [
        minimize(lambda t: ssvqe_loss([bind(c, t) for c in circuits], H, weights), x0, method="BFGS",
                 options={"gtol": 1e-10})
        for x0 in np.random.default_rng(1).uniform(-np.pi, np.pi, (4, 6))
    ]
    assert min(r.fun for r in runs) == pytest.approx((2 * vals[0] + vals[1]) / 3, abs=1e-6)


def test_ssvqe_weight_count_checked():
    with pytest.raises(ValueError):
        ssvqe_loss([build_initializer(0, 2)], build_tfim(2), [0.5, 0.5])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([2, 4]))
def test_algorithm_losses_agree_with_uniform_weights(seed, K):
    H = build_tfim(3, 1.0, 0.4)
    ansatz = build_parity_ladder(3, 1)
    theta = np.random.default_rng(seed).uniform(-np.pi, np.pi, ansatz.n_params)
    ae = problem_loss(build_problem(SolverConfig("AEVQE", K=K), ansatz), theta, H, None)
    mc = problem_loss(build_problem(SolverConfig("MCVQE", K=K), ansatz), theta, H, None)
    ws_circuits = build_problem(SolverConfig("MCVQE", K=K), ansatz).bound(theta)
    ws = ssvqe_loss(ws_circuits, H, np.full(K, 1 / K))
    assert abs(ae - mc) < 1e-10 and abs(ae - ws) < 1e-10


# --- subspace Hamiltonians --------------------------------------------------------


@pytest.mark.parametrize(
    "m, n, n_a, label",
    [(0, 0, 1, "(I+Z)"), (0, 1, 1, "(X+iY)"), (1, 0, 1, "(X-iY)"), (3, 2, 2, "(I-Z)(X-iY)"), (1, 2, 2, "(X+iY)(X-iY)")],
)
def test_ancilla_observable_labels(m, n, n_a, label):
    assert ancilla_observable_label(m, n, n_a) == label


@pytest.mark.parametrize("n_a", [1, 2])
def test_subspace_matrix_matches_direct_overlaps(n_a, rng):
    H = build_tfim(3, 1.0, 0.3)
    K = 1 << n_a
    circuit = build_initializer(n_a, 3) + build_parity_ladder(3, 1).embed(n_a)
    bound = bind(circuit, rng.uniform(-np.pi, np.pi, circuit.n_params))
    blocks = run_circuit(bound).amplitudes.reshape(8, K).T
    hmat = dense_matrix(H, 3)
    direct = K * blocks.conj() @ hmat @ blocks.T
    measured = measure_subspace_hamiltonian(bound, H).entries
    np.testing.assert_allclose(measured, direct, atol=1e-12)


def test_diagonal_subspace():
    result = diagonalize_subspace(np.diag([0.3, -0.2, 1.5]))
    np.testing.assert_allclose(result.energies, [-0.2, 0.3, 1.5])
    np.testing.assert_allclose(np.abs(result.transform), np.eye(3)[[1, 0, 2]])
    np.testing.assert_allclose(result.transform, np.eye(3)[[1, 0, 2]])


def test_pauli_x_subspace():
    result = diagonalize_subspace(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(result.energies, [-1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(result.transform, np.array([[1, -1], [1, 1]]) / math.sqrt(2), atol=1e-12)


def test_non_hermitian_subspace_rejected():
    with pytest.raises(ValueError):
        diagonalize_subspace(np.array([[0, 1], [0, 0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_spectrum_invariants(seed, K):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(K, K)) + 1j * rng.normal(size=(K, K))
    mat = a + a.conj().T
    result = diagonalize_subspace(mat)
    T = result.transform
    np.testing.assert_allclose(T @ T.conj().T, np.eye(K), atol=1e-8)
    assert np.all(np.diff(result.energies) >= 0)
    np.testing.assert_allclose(T.conj().T @ np.diag(result.energies) @ T, mat, atol=1e-9)
    for row in T:
        top = row[np.argmax(np.abs(row))]
        assert abs(top.imag) < 1e-12 and top.real > 0


@pytest.mark.parametrize(
    "n, h, n_a, layers",
    [(3, 0.2, 1, 1), (3, 0.5, 1, 1), (3, 0.4, 2, 1), (3, 0.5, 2, 1), (5, 0.5, 1, 2), (5, 0.3, 2, 2)],
)
def test_pipeline_recovers_levels(n, h, n_a, layers):
    H = build_tfim(n, 1.0, h)
    K = 1 << n_a
    config = SolverConfig(K=K)
    problem, theta, _ = exact_optimum(config, H, build_parity_ladder(n, layers), restarts=2)
    spectrum = solve_spectrum(problem, theta, H, None)
    vals, vecs = np.linalg.eigh(dense_matrix(H, n).real)
    np.testing.assert_allclose(spectrum.energies, vals[:K], atol=1e-6)
    for j, ec in enumerate(spectrum.eigenstate_circuits):
        if min(abs(vals[j] - vals[i]) for i in range(K + 1) if i != j) > 1e-6:
            assert state_fidelity(eigenstate_amplitudes(ec), vecs[:, j]) > 0.999


def test_mcvqe_offdiagonal_zero_for_diagonal_h():
    H = PauliSum.from_labels({"Z0": 1.0})
    zero = Circuit(0, 1)
    one = Circuit(0, 1, (Gate("X", (0,)),))
    plus = Circuit(0, 1, (Gate("H", (0,)),))
    minus = Circuit(0, 1, (Gate("H", (0,)), Gate("Z", (0,))))
    hsub = mcvqe_subspace([zero, one], {(0, 1): (plus, minus)}, H)
    np.testing.assert_allclose(hsub.entries, np.diag([1.0, -1.0]), atol=1e-12)


@pytest.mark.parametrize("m, n, sign", [(0, 1, 1), (0, 3, -1), (1, 2, 1), (2, 3, -1)])
def test_superposition_preparation(m, n, sign):
    got = run_circuit(superposition_preparation(m, n, sign, 2, 3)).amplitudes
    psi_m = run_circuit(reference_preparation(m, 2, 3)).amplitudes
    psi_n = run_circuit(reference_preparation(n, 2, 3)).amplitudes
    want = (psi_m + sign * psi_n) / math.sqrt(2)
    assert abs(np.vdot(want, got)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("K", [2, 4])
def test_mcvqe_and_aevqe_spectra_agree(K, rng):
    H = build_tfim(3, 1.0, 0.5)
    ansatz = build_parity_ladder(3, 1)
    problem, theta, _ = exact_optimum(SolverConfig(K=K), H, ansatz, restarts=3)
    ae = solve_spectrum(problem, theta, H, None)
    mc = solve_spectrum(build_problem(SolverConfig("MCVQE", K=K), ansatz), theta, H, None)
    np.testing.assert_allclose(mc.energies, ae.energies, atol=1e-6)
    np.testing.assert_allclose(ae.energies, levels(H, 3)[:K], atol=1e-6)
    # the subspaces coincide at any parameters, not just at the optimum
    other = rng.uniform(-np.pi, np.pi, ansatz.n_params)
    np.testing.assert_allclose(
        solve_spectrum(build_problem(SolverConfig("MCVQE", K=K), ansatz), other, H, None).energies,
        solve_spectrum(problem, other, H, None).energies,
        atol=1e-10,
    )


# --- shot budgets ------------------------------------------------------------------


@pytest.mark.parametrize(
    "algorithm, weights, K, M0, expected",
    [
        ("MCVQE", None, 2, 15360, [7680, 7680]),
        ("WSSVQE", [0.5, 0.5], 2, 1000, [500, 500]),
        ("AEVQE", None, 2, 15360, [15360]),
        ("AEVQE", None, 8, 999, [999]),
        ("MCVQE", None, 4, 1001, [251] * 4),
    ],
)
def test_shot_allocation_examples(algorithm, weights, K, M0, expected):
    assert shot_allocation(algorithm, weights, K, M0) == expected


@pytest.mark.parametrize("bad", [dict(M0=0), dict(weights=[0.5, 0.0]), dict(algorithm="VQD")])
def test_shot_allocation_errors(bad):
    args = dict(algorithm="WSSVQE", weights=[0.6, 0.4], K=2, M0=100) | bad
    with pytest.raises(ValueError):
        shot_allocation(**args)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(10**3, 10**6), st.integers(0, 2**31))
def test_shot_allocation_balances_variance(K, M0, seed):
    w = np.sort(np.random.default_rng(seed).uniform(0.05, 1, K))[::-1]
    w = w / w.sum()
    M1 = np.array(shot_allocation("WSSVQE", w, K, M0))
    unrounded = w**2 * K * M0
    assert np.all(np.abs(M1 - unrounded) <= 0.5 + 1e-9) or np.any(unrounded < 1)
    # before rounding each circuit contributes an equal share of 1/M0
    assert np.sum(w**2 / unrounded) == pytest.approx(1 / M0, rel=1e-12)


def test_default_weights():
    np.testing.assert_allclose(default_weights(3), [3 / 6, 2 / 6, 1 / 6])
    assert default_weights(1).tolist() == [1.0]


# --- solver runs -------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [dict(algorithm="AEVQE", K=3), dict(algorithm="WSSVQE", K=2, weights=(0.4, 0.6)), dict(max_iterations=-1)],
)
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_zero_iteration_budget():
    H = build_tfim(3, 1.0, 0.5)
    record, spectrum = run_solver(SolverConfig(K=2, max_iterations=0), H, build_parity_ladder(3, 1), 3)
    assert not record.converged and record.losses == []
    assert spectrum is not None and len(spectrum.energies) == 2


def test_exact_run_matches_oracle():
    H = build_tfim(3, 1.0, 0.5)
    config = SolverConfig(
        K=2, max_iterations=400, stop_at_convergence=False, optimizer=OptimizerSpec("powell", tol=1e-8)
    )
    record, spectrum = run_solver(config, H, build_parity_ladder(3, 1), 0)
    assert record.converged
    np.testing.assert_allclose(spectrum.energies, exact_levels(H, 3, 2), atol=1e-4)


def test_h2_sampled_spsa_converges():
    H = build_h2(h2_coefficients_at(0.6))
    config = SolverConfig(K=2, shots=15 * 1024, max_iterations=100)
    hits = 0
    for seed in range(10):
        record, _ = run_solver(config, H, build_uccgsd_h2(), seed)
        hits += record.converged
    assert hits >= 8


def test_run_record_round_trip():
    H = build_tfim(3, 1.0, 0.5)
    record, _ = run_solver(SolverConfig(K=2, max_iterations=5), H, build_parity_ladder(3, 1), 4)
    back = RunRecord.from_json(record.to_json())
    assert back == record
    assert back.n_iterations == 5 and back.evaluations == 10


def test_runs_are_seeded():
    H = build_tfim(3, 1.0, 0.5)
    config = SolverConfig(K=2, shots=1024, max_iterations=10)
    a, _ = run_solver(config, H, build_parity_ladder(3, 1), 8)
    b, _ = run_solver(config, H, build_parity_ladder(3, 1), 8)
    assert a.losses == b.losses and a.energies == b.energies
