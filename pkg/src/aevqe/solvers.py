"""AEVQE and the weighted-SSVQE / MCVQE baselines.

AEVQE entangles ``N_a`` ancillas with the physical register so that one
circuit carries ``K = 2**N_a`` orthogonal reference states. Its loss (the
energy of ``I_a (x) H``) is the average energy of the ``K`` variational states
and the ancilla-resolved matrix ``H_sub[m, n] = <Psi| |m><n|_a (x) H |Psi>``
equals ``<phi_m|H|phi_n> / K``. This module reports ``K * H_sub`` so that its
eigenvalues are energies.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Sequence

import numpy as np

from .ansatz import (
    build_initializer,
    random_parameters,
    reference_preparation,
    rotated_reference_preparation,
    superposition_preparation,
)
from .circuit import Circuit, bind
from .hamiltonian import (
    PauliSum,
    PauliString,
    PauliTerm,
    basis_indices,
    lowest_eigenpairs,
    parity_operator,
    pauli_masks,
    sparse_matrix,
)
from .mitigation import ReadoutCalibration, mitigate_distribution
from .optim import OptimizerSpec
from .qsim import (
    CompiledObservable,
    Gate,
    NoiseModel,
    QuantumState,
    basis_change_gates,
    find_setting,
    group_qubitwise,
    parity_from_counts,
    run_circuit,
    sample_counts,
)

ALGORITHMS = ("AEVQE", "WSSVQE", "MCVQE")
HERMITIAN_TOL = 1e-8


# --- estimation --------------------------------------------------------------------


@dataclass(frozen=True)
class Estimator:
    """How expectation values are obtained.

    Attributes:
        shots: Shots per measurement setting, or ``None`` for exact
            statevector expectations.
        noise: Gate and readout noise; requires ``shots``.
        mitigate_readout: Invert the noise model's readout confusion on the
            sampled distributions.
        grouping: Share measurement settings between qubit-wise commuting terms.
    """

    shots: int | None = None
    noise: NoiseModel | None = None
    mitigate_readout: bool = False
    grouping: bool = True

    def __post_init__(self) -> None:
        if self.shots is not None and self.shots <= 0:
            raise ValueError("shots must be positive")
        if self.shots is None and self.noise is not None and not self.noise.is_trivial:
            raise ValueError("noisy estimation needs a finite shot count")

    @property
    def exact(self) -> bool:
        return self.shots is None

    def with_shots(self, shots: int | None) -> Estimator:
        return dataclasses.replace(self, shots=shots)


def _ancilla_projector_indices(n_qubits: int, n_ancilla: int, outcome: int) -> np.ndarray:
    idx = basis_indices(n_qubits)
    return np.flatnonzero((idx & ((1 << n_ancilla) - 1)) == outcome)


def _exact_string_values(amps: np.ndarray, n: int, strings: Sequence[PauliString]) -> dict:
    idx = basis_indices(n)
    values = {}
    for ops in strings:
        xmask, zmask, n_y = pauli_masks(ops)
        sign = 1.0 - 2.0 * (np.bitwise_count(idx & zmask) & 1)
        values[ops] = float(np.real((1j**n_y) * np.vdot(amps[idx ^ xmask], sign * amps)))
    return values


@lru_cache(maxsize=256)
def _settings_for(strings: tuple[PauliString, ...], grouping: bool, pin: tuple) -> tuple:
    settings = group_qubitwise(strings) if grouping else [dict(s) for s in strings if s]
    if not settings:
        settings = [{}]
    for setting in settings:
        for q, p in pin:
            if setting.get(q, p) != p:
                raise ValueError("post-selected qubits must be measured in the Z basis")
            setting[q] = p
    return tuple(tuple(sorted(s.items())) for s in settings)


def measure_strings(
    circuit: Circuit,
    strings: Sequence[PauliString],
    estimator: Estimator,
    rng: np.random.Generator | None,
    postselect: int | None = None,
    shots: int | None = None,
) -> tuple[dict[PauliString, float], float]:
    """Expectations of Pauli strings on a bound circuit's output.

    Args:
        circuit: Bound circuit.
        strings: Pauli strings over the full register.
        estimator: Estimation mode.
        rng: Stream for shot sampling (unused when exact).
        postselect: If given, condition on the ancilla register reading this
            outcome; strings must then act trivially on the ancillas.
        shots: Overrides ``estimator.shots`` for this call.

    Returns:
        ``(values, acceptance)`` where ``acceptance`` is the (estimated)
        post-selection probability, 1 without post-selection.
    """
    n = circuit.n_qubits
    strings = tuple(dict.fromkeys(s for s in strings if s))
    if postselect is not None and any(q < circuit.n_ancilla for s in strings for q, _ in s):
        raise ValueError("post-selected estimates cannot measure ancilla Paulis")
    shots = estimator.shots if shots is None else shots
    if shots is None:
        amps = run_circuit(circuit).amplitudes
        acceptance = 1.0
        if postselect is not None:
            keep = _ancilla_projector_indices(n, circuit.n_ancilla, postselect)
            projected = np.zeros_like(amps)
            projected[keep] = amps[keep]
            acceptance = float(np.vdot(projected, projected).real)
            if acceptance <= 0:
                raise ValueError(f"ancilla outcome {postselect} has zero probability")
            amps = projected / math.sqrt(acceptance)
        return _exact_string_values(amps, n, strings), acceptance

    if rng is None:
        raise ValueError("sampled estimation needs a random generator")
    pin = tuple((q, "Z") for q in range(circuit.n_ancilla)) if postselect is not None else ()
    settings = _settings_for(strings, estimator.grouping, pin)
    cal = None
    if estimator.mitigate_readout and estimator.noise is not None:
        cal = ReadoutCalibration.from_noise_model(estimator.noise, n)
    keep = _ancilla_projector_indices(n, circuit.n_ancilla, postselect) if postselect is not None else None
    distributions = []
    accepted = []
    for setting in settings:
        gates = list(circuit.gates) + basis_change_gates(dict(setting))
        dist = sample_counts(gates, n, shots, estimator.noise, rng).astype(float)
        if cal is not None:
            dist = mitigate_distribution(dist, n, cal)
        if keep is not None:
            mask = np.zeros(dist.shape, dtype=bool)
            mask[keep] = True
            accepted.append(dist[mask].sum() / dist.sum())
            dist = np.where(mask, dist, 0.0)
            if dist.sum() <= 0:
                raise ValueError(f"no shots survived post-selection on ancilla outcome {postselect}")
        distributions.append(dist)
    setting_dicts = [dict(s) for s in settings]
    values = {
        ops: parity_from_counts(distributions[find_setting(ops, setting_dicts)], n, ops)
        for ops in strings
    }
    acceptance = float(np.mean(accepted)) if accepted else 1.0
    return values, acceptance


def combine(obs: PauliSum, values: dict[PauliString, float]) -> complex:
    """``sum_P c_P <P>`` from measured string values (identity counts as 1)."""
    return sum(t.coefficient * (values[t.ops] if t.ops else 1.0) for t in obs.terms)


@lru_cache(maxsize=128)
def _compiled(obs: PauliSum, n: int) -> CompiledObservable:
    return CompiledObservable(obs, n)


def estimate_energy(
    circuit: Circuit,
    obs: PauliSum,
    estimator: Estimator,
    rng: np.random.Generator | None,
    shots: int | None = None,
) -> float:
    """``<obs>`` on a bound circuit's output under the given estimator."""
    shots = estimator.shots if shots is None else shots
    if shots is None:
        return _compiled(obs, circuit.n_qubits)(run_circuit(circuit))
    values, _ = measure_strings(circuit, [t.ops for t in obs.terms], estimator, rng, shots=shots)
    return float(combine(obs, values).real)


# --- losses ------------------------------------------------------------------------


def _physical_observable(H: PauliSum, circuit: Circuit) -> PauliSum:
    if H.n_qubits > circuit.n_physical:
        raise ValueError(
            f"H acts on {H.n_qubits} qubits but the physical register has {circuit.n_physical}"
        )
    return H.shifted(circuit.n_ancilla)


def aevqe_loss(
    circuit: Circuit, H: PauliSum, estimator: Estimator | None = None, rng: np.random.Generator | None = None
) -> float:
    """Energy of ``I_a (x) H`` on the full AEVQE state.

    ``H`` is written over the physical register (qubit 0 = first physical
    qubit) and is relabelled past the ancillas here.
    """
    estimator = estimator or Estimator()
    return estimate_energy(circuit, _physical_observable(H, circuit), estimator, rng)


def ssvqe_loss(
    circuits: Sequence[Circuit],
    H: PauliSum,
    weights: Sequence[float],
    estimator: Estimator | None = None,
    rng: np.random.Generator | None = None,
    shots: Sequence[int | None] | None = None,
) -> float:
    """``sum_i w_i <psi_i|U^dag H U|psi_i>`` over the bound circuits ``U |psi_i>``."""
    if len(circuits) != len(weights):
        raise ValueError(f"{len(circuits)} circuits but {len(weights)} weights")
    estimator = estimator or Estimator()
    shots = [None] * len(circuits) if shots is None else list(shots)
    total = 0.0
    for c, w, s in zip(circuits, weights, shots):
        total += w * estimate_energy(c, _physical_observable(H, c), estimator, rng, shots=s)
    return total


def default_weights(K: int) -> np.ndarray:
    """Strictly decreasing normalized weights ``(K - i) / sum_j (K - j)``."""
    if K < 1:
        raise ValueError("K must be positive")
    w = np.arange(K, 0, -1, dtype=float)
    return w / w.sum()


def shot_allocation(
    algorithm: str, weights: Sequence[float] | None, K: int, M0: int
) -> list[int]:
    """Shots per circuit that give every algorithm the same loss variance.

    AEVQE measures one circuit with ``M0`` shots. Weighted SSVQE gives circuit
    ``i`` ``round(w_i**2 K M0)`` shots and MCVQE ``ceil(M0 / K)`` per circuit.
    """
    if M0 <= 0:
        raise ValueError("M0 must be positive")
    if K < 1:
        raise ValueError("K must be positive")
    if algorithm == "AEVQE":
        return [int(M0)]
    if algorithm == "MCVQE":
        return [math.ceil(M0 / K)] * K
    if algorithm == "WSSVQE":
        if weights is None:
            raise ValueError("WSSVQE needs weights")
        w = np.asarray(weights, dtype=float)
        if w.size != K:
            raise ValueError(f"{w.size} weights for K = {K}")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        return [max(1, int(round(x * x * K * M0))) for x in w]
    raise ValueError(f"unknown algorithm {algorithm!r}")


# --- subspace Hamiltonians -------------------------------------------------------------


def ancilla_operator(m: int, n: int, n_ancilla: int) -> PauliSum:
    """``|m><n|`` on the ancillas as a Pauli sum.

    Per ancilla bit: ``|0><0| = (I+Z)/2``, ``|1><1| = (I-Z)/2``,
    ``|0><1| = (X+iY)/2`` and ``|1><0| = (X-iY)/2``.
    """
    op = PauliSum.identity()
    for q in range(n_ancilla):
        bm, bn = m >> q & 1, n >> q & 1
        if bm == bn:
            factor = {(q, "Z"): 1.0 if bm == 0 else -1.0}
            first = PauliTerm(0.5, ())
            second = PauliTerm(0.5 * factor[(q, "Z")], ((q, "Z"),))
        else:
            first = PauliTerm(0.5, ((q, "X"),))
            second = PauliTerm(0.5j if bm == 0 else -0.5j, ((q, "Y"),))
        op = op @ PauliSum([first, second])
    return op


def ancilla_observable_label(m: int, n: int, n_ancilla: int) -> str:
    """Unnormalized factor labels, most significant ancilla first, e.g. ``(I-Z)(X-iY)``."""
    parts = []
    for q in reversed(range(n_ancilla)):
        bm, bn = m >> q & 1, n >> q & 1
        parts.append({(0, 0): "(I+Z)", (1, 1): "(I-Z)", (0, 1): "(X+iY)", (1, 0): "(X-iY)"}[(bm, bn)])
    return "".join(parts)


@dataclass(frozen=True)
class SubspaceHamiltonian:
    """A Hermitian ``K x K`` matrix in energy units."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        mat = np.array(self.entries, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("subspace Hamiltonian must be square")
        mat.setflags(write=False)
        object.__setattr__(self, "entries", mat)

    @property
    def K(self) -> int:
        return self.entries.shape[0]


def measure_subspace_hamiltonian(
    circuit: Circuit,
    H: PauliSum,
    K: int | None = None,
    estimator: Estimator | None = None,
    rng: np.random.Generator | None = None,
) -> SubspaceHamiltonian:
    """Estimates ``K * <Psi| |m><n|_a (x) H |Psi>`` for all ``m, n``.

    All entries come from one shared set of measurement settings; the result
    is symmetrized as ``(M + M^dag)/2``.
    """
    n_a = circuit.n_ancilla
    K = 1 << n_a if K is None else K
    if K != 1 << n_a:
        raise ValueError(f"K = {K} does not match {n_a} ancillas")
    estimator = estimator or Estimator()
    hp = _physical_observable(H, circuit)
    ops = {(m, n): ancilla_operator(m, n, n_a) @ hp for m in range(K) for n in range(m, K)}
    strings = sorted({t.ops for op in ops.values() for t in op.terms})
    values, _ = measure_strings(circuit, strings, estimator, rng)
    mat = np.zeros((K, K), dtype=complex)
    for (m, n), op in ops.items():
        mat[m, n] = combine(op, values)
        mat[n, m] = np.conj(mat[m, n])
    mat = 0.5 * (mat + mat.conj().T)
    return SubspaceHamiltonian(K * mat)


def mcvqe_subspace(
    circuits: Sequence[Circuit],
    plus_minus: dict[tuple[int, int], tuple[Circuit, Circuit]],
    H: PauliSum,
    estimator: Estimator | None = None,
    rng: np.random.Generator | None = None,
    shots: int | None = None,
) -> SubspaceHamiltonian:
    """Subspace Hamiltonian from reference and interference-state energies.

    Diagonal entries are ``<psi_m|U^dag H U|psi_m>``. With normalized
    ``|+-> = (|psi_m> +- |psi_n>)/sqrt(2)`` the difference of their energies
    is ``2 Re <psi_m|U^dag H U|psi_n>``, so off-diagonals are half of it.
    Only the real part is recovered, which suffices for real Hamiltonians and
    real ansatz circuits.
    """
    estimator = estimator or Estimator()
    K = len(circuits)
    mat = np.zeros((K, K))
    for m, c in enumerate(circuits):
        mat[m, m] = estimate_energy(c, _physical_observable(H, c), estimator, rng, shots=shots)
    for m in range(K):
        for n in range(m + 1, K):
            plus, minus = plus_minus[(m, n)]
            e_plus = estimate_energy(plus, _physical_observable(H, plus), estimator, rng, shots=shots)
            e_minus = estimate_energy(minus, _physical_observable(H, minus), estimator, rng, shots=shots)
            mat[m, n] = mat[n, m] = 0.5 * (e_plus - e_minus)
    return SubspaceHamiltonian(mat)


@dataclass(frozen=True)
class EigenstateCircuit:
    """A bound circuit whose output (after optional ancilla post-selection) is one eigenstate.

    Attributes:
        circuit: The bound circuit.
        postselect: Ancilla outcome to keep, or ``None``.
    """

    circuit: Circuit
    postselect: int | None = None


@dataclass(frozen=True)
class SpectrumResult:
    """Energies, the diagonalizing transform and eigenstate circuits.

    ``transform`` is ``T`` with ``K * H_sub = T^dag diag(energies) T``; its
    rows are the eigenvectors, each phased so its largest-magnitude entry is
    real and positive.
    """

    energies: np.ndarray
    transform: np.ndarray
    eigenstate_circuits: tuple[EigenstateCircuit, ...] = ()


def _phase_fix(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        k = int(np.argmax(np.abs(col) - 1e-12 * np.arange(col.size)))
        out[:, j] = col * (abs(col[k]) / col[k])
    return out


def diagonalize_subspace(hsub: SubspaceHamiltonian | np.ndarray) -> SpectrumResult:
    """Eigendecomposition of a subspace Hamiltonian (no eigenstate circuits)."""
    mat = hsub.entries if isinstance(hsub, SubspaceHamiltonian) else np.asarray(hsub, dtype=complex)
    if np.abs(mat - mat.conj().T).max(initial=0.0) > HERMITIAN_TOL:
        raise ValueError("subspace Hamiltonian is not Hermitian")
    herm = 0.5 * (mat + mat.conj().T)
    if np.allclose(herm.imag, 0, atol=1e-14):
        herm = herm.real
    energies, vecs = np.linalg.eigh(herm)
    vecs = _phase_fix(np.asarray(vecs, dtype=complex))
    return SpectrumResult(energies, vecs.conj().T)


def aevqe_eigenstate_circuits(circuit: Circuit, spectrum: SpectrumResult) -> tuple[EigenstateCircuit, ...]:
    """Appends ``T^*`` on the ancillas; post-selecting outcome ``j`` yields level ``j``."""
    n_a = circuit.n_ancilla
    if n_a == 0:
        return (EigenstateCircuit(circuit, None),)
    rotate = Gate("UNITARY", tuple(range(n_a)), matrix=spectrum.transform.conj())
    full = Circuit(n_a, circuit.n_physical, circuit.gates + (rotate,))
    return tuple(EigenstateCircuit(full, j) for j in range(len(spectrum.energies)))


def eigenstate_amplitudes(ec: EigenstateCircuit) -> np.ndarray:
    """Noiseless normalized physical-register state of an eigenstate circuit."""
    c = ec.circuit
    amps = run_circuit(c).amplitudes
    if ec.postselect is None:
        return amps.reshape(-1)[:: 1 << c.n_ancilla] if c.n_ancilla else amps
    block = amps.reshape(1 << c.n_physical, 1 << c.n_ancilla)[:, ec.postselect]
    return block / np.linalg.norm(block)


def measure_eigenstate(
    ec: EigenstateCircuit,
    observables: Sequence[PauliSum],
    estimator: Estimator,
    rng: np.random.Generator | None,
) -> tuple[list[float], float]:
    """Expectations of physical-register observables on one eigenstate.

    Returns:
        ``(values, acceptance)``; ``acceptance`` is the ancilla post-selection
        probability (1 when nothing is post-selected).
    """
    c = ec.circuit
    shifted = [o.shifted(c.n_ancilla) for o in observables]
    strings = sorted({t.ops for o in shifted for t in o.terms if t.ops})
    values, acceptance = measure_strings(c, strings, estimator, rng, postselect=ec.postselect)
    return [float(combine(o, values).real) for o in shifted], acceptance


def measure_eigenstate_strings(
    ec: EigenstateCircuit,
    strings: Sequence[PauliString],
    estimator: Estimator,
    rng: np.random.Generator | None,
) -> tuple[dict[PauliString, float], float]:
    """Like :func:`measure_eigenstate` but returns values keyed by physical-register strings."""
    off = ec.circuit.n_ancilla
    shifted = [tuple((q + off, p) for q, p in s) for s in strings]
    values, acceptance = measure_strings(ec.circuit, shifted, estimator, rng, postselect=ec.postselect)
    return {s: values[t] for s, t in zip(strings, shifted) if s}, acceptance


def eigenstate_counts(
    ec: EigenstateCircuit, shots: int, noise: NoiseModel | None, rng: np.random.Generator
) -> np.ndarray:
    """Z-basis counts of the physical register after ancilla post-selection."""
    c = ec.circuit
    counts = sample_counts(c.gates, c.n_qubits, shots, noise, rng)
    grid = counts.reshape(1 << c.n_physical, 1 << c.n_ancilla)
    if ec.postselect is None:
        return grid.sum(axis=1)
    return grid[:, ec.postselect]


# --- solver run ----------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Settings of one eigensolver run.

    Attributes:
        algorithm: ``"AEVQE"``, ``"WSSVQE"`` or ``"MCVQE"``.
        K: Number of target levels (``2**n_ancilla`` for AEVQE).
        weights: WSSVQE weights; defaults to :func:`default_weights`.
        shots: Shot budget ``M0`` per loss estimate, or ``None`` for exact.
        noise: Gate/readout noise model.
        max_iterations: Optimizer iteration budget.
        convergence_tol: Allowed gap between loss and the exact target loss.
        stop_at_convergence: End the run at the first converged iteration.
        optimizer: Optimizer choice; its own ``max_iter`` is overridden.
        init_style: Reference-state family, see :func:`build_initializer`.
        mitigate_readout: Invert readout confusion in sampled estimates.
        use_oracle: Judge convergence against exact diagonalization; if off,
            use the stagnation rule instead.
        stagnation_window: Iterations spanned by the stagnation rule.
        stagnation_rtol: Relative loss change that counts as stagnation.
    """

    algorithm: str = "AEVQE"
    K: int = 2
    weights: tuple[float, ...] | None = None
    shots: int | None = None
    noise: NoiseModel | None = None
    max_iterations: int = 200
    convergence_tol: float = 0.05
    stop_at_convergence: bool = True
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    init_style: str = "cz"
    mitigate_readout: bool = False
    use_oracle: bool = True
    stagnation_window: int = 30
    stagnation_rtol: float = 1e-4

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.algorithm == "AEVQE" and self.K & (self.K - 1):
            raise ValueError("AEVQE needs K = 2**n_ancilla")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.size != self.K:
                raise ValueError(f"{w.size} weights for K = {self.K}")
            if np.any(w <= 0) or np.any(np.diff(w) >= 0):
                raise ValueError("weights must be strictly positive and strictly decreasing")
            object.__setattr__(self, "weights", tuple(float(x) for x in w))
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")

    @property
    def n_bits(self) -> int:
        """Qubits needed to label the ``K`` reference states."""
        return max(1, math.ceil(math.log2(self.K))) if self.K > 1 else 0

    def estimator(self) -> Estimator:
        return Estimator(self.shots, self.noise, self.mitigate_readout)

    def level_weights(self) -> np.ndarray:
        if self.algorithm == "WSSVQE":
            return np.asarray(self.weights, dtype=float) if self.weights else default_weights(self.K)
        return np.full(self.K, 1.0 / self.K)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["weights"] = list(self.weights) if self.weights else None
        out["noise"] = dataclasses.asdict(self.noise) if self.noise else None
        return out


@dataclass
class RunRecord:
    """Everything one optimization trial produced."""

    seed: int
    config: dict[str, Any]
    losses: list[float] = field(default_factory=list)
    evaluations: int = 0
    converged: bool = False
    convergence_iteration: int | None = None
    final_params: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    exact_energies: list[float] = field(default_factory=list)
    target_loss: float | None = None
    status: str = ""
    error: str | None = None
    wall_time: float = 0.0
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def n_iterations(self) -> int:
        return len(self.losses)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, default=_json_default)

    @classmethod
    def from_json(cls, line: str) -> RunRecord:
        return cls(**json.loads(line))


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass(frozen=True)
class Problem:
    """Bound-free circuits of one solver instance."""

    config: SolverConfig
    ansatz: Circuit
    circuits: tuple[Circuit, ...]
    shots: tuple[int | None, ...]

    def bound(self, params: np.ndarray) -> list[Circuit]:
        return [bind(c, params) for c in self.circuits]


def build_problem(config: SolverConfig, ansatz: Circuit) -> Problem:
    """Assembles the circuits a configuration optimizes.

    AEVQE uses one circuit (entangled initializer + embedded ansatz); the
    baselines use one circuit per reference state.
    """
    if ansatz.n_ancilla:
        raise ValueError("pass the ansatz over the physical register only")
    n_p = ansatz.n_physical
    if config.algorithm == "AEVQE":
        n_a = config.n_bits
        circuits = (build_initializer(n_a, n_p, config.init_style) + ansatz.embed(n_a),)
    else:
        circuits = tuple(
            reference_preparation(m, config.n_bits, n_p, config.init_style) + ansatz
            for m in range(config.K)
        )
    if config.shots is None:
        shots: tuple[int | None, ...] = (None,) * len(circuits)
    else:
        weights = config.level_weights() if config.algorithm == "WSSVQE" else None
        shots = tuple(shot_allocation(config.algorithm, weights, config.K, config.shots))
    return Problem(config, ansatz, circuits, shots)


def problem_loss(problem: Problem, params: np.ndarray, H: PauliSum, rng: np.random.Generator | None) -> float:
    cfg = problem.config
    est = cfg.estimator()
    circuits = problem.bound(params)
    if cfg.algorithm == "AEVQE":
        return estimate_energy(circuits[0], _physical_observable(H, circuits[0]), est, rng, shots=problem.shots[0])
    return ssvqe_loss(circuits, H, cfg.level_weights(), est, rng, shots=problem.shots)


def solve_spectrum(
    problem: Problem, params: np.ndarray, H: PauliSum, rng: np.random.Generator | None
) -> SpectrumResult:
    """Energies and eigenstate circuits at fixed parameters."""
    cfg = problem.config
    est = cfg.estimator()
    if cfg.algorithm == "AEVQE":
        circuit = bind(problem.circuits[0], params)
        spectrum = diagonalize_subspace(
            measure_subspace_hamiltonian(circuit, H, cfg.K, est.with_shots(problem.shots[0]), rng)
        )
        return dataclasses.replace(spectrum, eigenstate_circuits=aevqe_eigenstate_circuits(circuit, spectrum))
    n_p = problem.ansatz.n_physical
    bound_ansatz = bind(problem.ansatz, params)
    circuits = [bind(c, params) for c in problem.circuits]
    if cfg.algorithm == "WSSVQE":
        energies = np.array(
            [
                estimate_energy(c, _physical_observable(H, c), est, rng, shots=s)
                for c, s in zip(circuits, problem.shots)
            ]
        )
        order = np.argsort(energies, kind="stable")
        transform = np.eye(cfg.K)[order]
        ecs = tuple(EigenstateCircuit(circuits[i]) for i in order)
        return SpectrumResult(energies[order], transform, ecs)
    pm = {}
    for m in range(cfg.K):
        for n in range(m + 1, cfg.K):
            pm[(m, n)] = tuple(
                superposition_preparation(m, n, sign, cfg.n_bits, n_p, cfg.init_style) + bound_ansatz
                for sign in (1, -1)
            )
    hsub = mcvqe_subspace(circuits, pm, H, est, rng, shots=problem.shots[0])
    spectrum = diagonalize_subspace(hsub)
    vecs = spectrum.transform.conj().T
    ecs = tuple(
        EigenstateCircuit(
            rotated_reference_preparation(j, _embed_unitary(vecs, cfg.n_bits), cfg.n_bits, n_p, cfg.init_style)
            + bound_ansatz
        )
        for j in range(cfg.K)
    )
    return dataclasses.replace(spectrum, eigenstate_circuits=ecs)


def _embed_unitary(vecs: np.ndarray, n_bits: int) -> np.ndarray:
    dim = 1 << n_bits
    out = np.eye(dim, dtype=complex)
    out[: vecs.shape[0], : vecs.shape[1]] = vecs
    return out


def exact_levels(H: PauliSum, n_physical: int, K: int) -> np.ndarray:
    vals, _ = lowest_eigenpairs(H, K, n_physical)
    return vals


@dataclass(frozen=True)
class RngStreams:
    """Independent generators derived from one trial seed.

    The parameter, perturbation and measurement streams do not depend on the
    algorithm, so runs of different algorithms with the same seed share their
    starting point and perturbation sequence.
    """

    init: np.random.Generator
    optimizer: np.random.Generator
    estimation: np.random.Generator
    final: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> RngStreams:
        children = np.random.SeedSequence(seed).spawn(4)
        return cls(*(np.random.default_rng(c) for c in children))


def run_solver(
    config: SolverConfig,
    H: PauliSum,
    ansatz: Circuit,
    rng_seed: int,
    initial_params: np.ndarray | None = None,
) -> tuple[RunRecord, SpectrumResult | None]:
    """Optimizes the configured loss, then extracts the spectrum.

    Convergence is declared at the first iteration whose reported loss is
    within ``convergence_tol`` of the exact target loss (or, without the
    oracle, when the loss stagnates). Optimizer errors end up in the record.
    """
    start = time.perf_counter()
    streams = RngStreams.from_seed(rng_seed)
    problem = build_problem(config, ansatz)
    record = RunRecord(seed=int(rng_seed), config=config.to_dict())
    weights = config.level_weights()
    target = None
    if config.use_oracle:
        exact = exact_levels(H, ansatz.n_physical, config.K)
        record.exact_energies = exact.tolist()
        target = float(np.dot(weights, exact))
        record.target_loss = target
    params = random_parameters(ansatz.n_params, streams.init) if initial_params is None else np.asarray(initial_params, float)

    def loss(theta: np.ndarray) -> float:
        return problem_loss(problem, theta, H, streams.estimation)

    def callback(k: int, theta: np.ndarray, value: float) -> bool:
        if record.convergence_iteration is None:
            if target is not None:
                hit = abs(value - target) < config.convergence_tol
            else:
                hist = trace_losses
                hist.append(value)
                w = config.stagnation_window
                hit = len(hist) > w and abs(hist[-1] - hist[-1 - w]) <= config.stagnation_rtol * max(abs(hist[-1]), 1e-12)
            if hit:
                record.convergence_iteration = k
                record.converged = True
        return record.converged and config.stop_at_convergence

    trace_losses: list[float] = []
    optimizer = dataclasses.replace(config.optimizer, max_iter=config.max_iterations)
    final = params
    try:
        trace = optimizer.minimize(params, loss, streams.optimizer, callback)
        record.losses = trace.losses
        record.evaluations = trace.total_evaluations
        record.status = trace.status
        if trace.final_params is not None:
            final = trace.final_params
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        record.status = "error"
        record.error = f"{type(exc).__name__}: {exc}"
        record.converged = False
    record.final_params = np.asarray(final).tolist()
    spectrum = None
    try:
        spectrum = solve_spectrum(problem, np.asarray(final), H, streams.final)
        record.energies = spectrum.energies.tolist()
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        record.error = (record.error + "; " if record.error else "") + f"spectrum: {exc}"
    record.wall_time = time.perf_counter() - start
    return record, spectrum


def level_parities(H: PauliSum, n_spins: int, K: int) -> list[int]:
    """X-parity (+1/-1) of each of the ``K`` lowest exact eigenstates."""
    _, vecs = lowest_eigenpairs(H, K, n_spins)
    px = sparse_matrix(parity_operator(n_spins), n_spins)
    return [int(np.sign(np.vdot(v, px @ v).real)) for v in vecs.T]


def state_fidelity(a: np.ndarray | QuantumState, b: np.ndarray | QuantumState) -> float:
    a = a.amplitudes if isinstance(a, QuantumState) else np.asarray(a)
    b = b.amplitudes if isinstance(b, QuantumState) else np.asarray(b)
    return float(abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real))
