"""Statevector simulation with depolarizing-trajectory noise and shot sampling.

Amplitudes are indexed little-endian: qubit ``q`` is bit ``q`` of the basis
index. Noise is modelled the way a device shot sees it: after each gate a
random non-identity Pauli hits the gate's targets with probability ``p1``
(one target) or ``p2`` (two or more targets), independently per shot, and each
measured bit may then be flipped by readout error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Protocol, Sequence

import numpy as np

from .hamiltonian import PauliSum, PauliString, basis_indices, parity_signs, pauli_masks

UNITARY_TOL = 1e-10

ROTATION_KINDS = frozenset({"RX", "RY", "RZ"})
FIXED_1Q_KINDS = frozenset({"H", "S", "SDG", "X", "Y", "Z"})
FIXED_2Q_KINDS = frozenset({"CZ", "CNOT"})
# exp(-i (a Y_t0 Z_t1 + b Z_t0 Y_t1) / 2): a real, parity-preserving two-qubit rotation.
PAIR_KINDS = frozenset({"YZZY"})
KINDS = ROTATION_KINDS | FIXED_1Q_KINDS | FIXED_2Q_KINDS | PAIR_KINDS | {"UNITARY"}

N_ANGLES = {**{k: 1 for k in ROTATION_KINDS}, "YZZY": 2}

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.diag([1.0, -1.0]).astype(complex)
_PAULI_1Q = (_I2, _X, _Y, _Z)
_FIXED = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "S": np.diag([1, 1j]),
    "SDG": np.diag([1, -1j]),
    "X": _X,
    "Y": _Y,
    "Z": _Z,
    # two-qubit matrices use index b0 + 2*b1 for targets (t0, t1)
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "CNOT": np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex),
}
_YZ = np.kron(_Z, _Y)  # Y on t0, Z on t1
_ZY = np.kron(_Y, _Z)  # Z on t0, Y on t1


def _rotation(pauli: np.ndarray, angle: float) -> np.ndarray:
    return math.cos(angle / 2) * np.eye(len(pauli)) - 1j * math.sin(angle / 2) * pauli


@dataclass(frozen=True, eq=False)
class Gate:
    """One circuit instruction.

    Attributes:
        kind: Gate name, one of ``KINDS``.
        targets: Qubit indices. For ``CNOT`` the first is the control.
        angles: Rotation angles in radians; ``None`` while a slot is unbound.
        matrix: The ``2**k x 2**k`` matrix of a ``UNITARY`` gate, indexed
            little-endian over ``targets``.
        slots: Parameter slot per angle role for parameterized gates.
    """

    kind: str
    targets: tuple[int, ...]
    angles: tuple[float, ...] | None = None
    matrix: np.ndarray | None = None
    slots: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "targets", targets)
        if len(set(targets)) != len(targets):
            raise ValueError(f"repeated target in {targets}")
        if any(t < 0 for t in targets):
            raise ValueError(f"negative target in {targets}")
        arity = self.arity_required()
        if arity is not None and len(targets) != arity:
            raise ValueError(f"{self.kind} takes {arity} target(s), got {len(targets)}")
        n_angles = N_ANGLES.get(self.kind, 0)
        if self.angles is not None:
            object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
            if len(self.angles) != n_angles:
                raise ValueError(f"{self.kind} takes {n_angles} angle(s)")
        if self.slots is not None:
            object.__setattr__(self, "slots", tuple(int(s) for s in self.slots))
            if len(self.slots) != n_angles:
                raise ValueError(f"{self.kind} takes {n_angles} slot(s)")
        if n_angles and self.angles is None and self.slots is None:
            raise ValueError(f"{self.kind} needs angles or parameter slots")
        if self.kind == "UNITARY":
            if self.matrix is None or not targets:
                raise ValueError("UNITARY needs targets and a matrix")
            mat = np.array(self.matrix, dtype=complex)
            dim = 1 << len(targets)
            if mat.shape != (dim, dim):
                raise ValueError(f"UNITARY on {len(targets)} qubits needs a {dim}x{dim} matrix")
            if not np.allclose(mat @ mat.conj().T, np.eye(dim), atol=UNITARY_TOL, rtol=0):
                raise ValueError("UNITARY matrix is not unitary")
            mat.setflags(write=False)
            object.__setattr__(self, "matrix", mat)
        elif self.matrix is not None:
            raise ValueError(f"{self.kind} does not take a matrix")

    def arity_required(self) -> int | None:
        if self.kind in ROTATION_KINDS or self.kind in FIXED_1Q_KINDS:
            return 1
        if self.kind in FIXED_2Q_KINDS or self.kind in PAIR_KINDS:
            return 2
        return None

    @property
    def angle(self) -> float | None:
        """The single angle of an RX/RY/RZ gate."""
        return None if self.angles is None else self.angles[0]

    @property
    def is_bound(self) -> bool:
        return N_ANGLES.get(self.kind, 0) == 0 or self.angles is not None

    def unitary(self) -> np.ndarray:
        """Matrix of the gate over its targets (little-endian)."""
        if not self.is_bound:
            raise ValueError(f"{self.kind} gate has unbound parameter slots {self.slots}")
        if self.kind == "RX":
            return _rotation(_X, self.angles[0])
        if self.kind == "RY":
            return _rotation(_Y, self.angles[0])
        if self.kind == "RZ":
            return _rotation(_Z, self.angles[0])
        if self.kind == "YZZY":
            a, b = self.angles
            # the two generators commute, so the order is immaterial
            return _rotation(_YZ, a) @ _rotation(_ZY, b)
        if self.kind == "UNITARY":
            return self.matrix
        return _FIXED[self.kind]

    def with_angles(self, angles: Sequence[float]) -> Gate:
        return Gate(self.kind, self.targets, tuple(angles), self.matrix, self.slots)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Gate):
            return NotImplemented
        same_matrix = (self.matrix is None and other.matrix is None) or (
            self.matrix is not None
            and other.matrix is not None
            and np.array_equal(self.matrix, other.matrix)
        )
        return (
            self.kind == other.kind
            and self.targets == other.targets
            and self.angles == other.angles
            and self.slots == other.slots
            and same_matrix
        )

    def __hash__(self) -> int:
        return hash((self.kind, self.targets, self.angles, self.slots))


class CircuitLike(Protocol):
    n_qubits: int
    gates: tuple[Gate, ...]


@dataclass(frozen=True)
class NoiseModel:
    """Depolarizing gate noise plus independent per-qubit readout flips.

    Attributes:
        p1: Error probability after a one-qubit gate.
        p2: Error probability after a gate on two or more qubits.
        readout: Per-qubit ``(p_flip_0to1, p_flip_1to0)``; qubits beyond the
            tuple read out perfectly.
    """

    p1: float = 0.0
    p2: float = 0.0
    readout: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        readout = tuple((float(a), float(b)) for a, b in self.readout)
        object.__setattr__(self, "readout", readout)
        for p in (self.p1, self.p2, *(x for pair in readout for x in pair)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")

    @classmethod
    def depolarizing(cls, p1: float = 0.001, p2: float = 0.01) -> NoiseModel:
        """The default gate-noise rates used throughout the experiments."""
        return cls(p1=p1, p2=p2)

    def gate_error_probability(self, gate: Gate) -> float:
        return self.p1 if len(gate.targets) == 1 else self.p2

    def readout_pair(self, qubit: int) -> tuple[float, float]:
        return self.readout[qubit] if qubit < len(self.readout) else (0.0, 0.0)

    @property
    def has_readout_error(self) -> bool:
        return any(a > 0 or b > 0 for a, b in self.readout)

    @property
    def is_trivial(self) -> bool:
        return self.p1 == 0 and self.p2 == 0 and not self.has_readout_error


@dataclass
class QuantumState:
    """A pure state of ``n_qubits`` qubits."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise ValueError(
                f"{self.n_qubits} qubits need {1 << self.n_qubits} amplitudes, "
                f"got shape {self.amplitudes.shape}"
            )

    @classmethod
    def zero(cls, n_qubits: int) -> QuantumState:
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> QuantumState:
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> QuantumState:
        return QuantumState(self.n_qubits, self.amplitudes.copy())


@dataclass
class MeasurementOutcome:
    """Shot counts keyed by bitstring (qubit ``n-1`` leftmost)."""

    counts: dict[str, int]
    shots: int
    n_qubits: int = field(default=0)

    def __post_init__(self) -> None:
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to the shot total")
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("negative count")

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_qubits: int) -> MeasurementOutcome:
        counts = {
            format(int(i), f"0{n_qubits}b") if n_qubits else "": int(vector[i])
            for i in np.flatnonzero(vector)
        }
        return cls(counts, int(vector.sum()), n_qubits)

    def to_vector(self) -> np.ndarray:
        vec = np.zeros(1 << self.n_qubits, dtype=np.int64)
        for bits, c in self.counts.items():
            vec[int(bits, 2) if bits else 0] += c
        return vec


# --- kernels ------------------------------------------------------------------


def _apply_matrix(states: np.ndarray, n: int, targets: Sequence[int], mat: np.ndarray) -> np.ndarray:
    """Applies ``mat`` on ``targets`` to a batch of states of shape ``(B, 2**n)``."""
    batch = states.shape[0]
    if len(targets) == 1:
        q = targets[0]
        view = states.reshape(batch * (1 << (n - 1 - q)), 2, 1 << q)
        return np.matmul(mat, view).reshape(batch, -1)
    k = len(targets)
    psi = states.reshape((batch,) + (2,) * n)
    # tensor axis of qubit t is n - t; the matrix's leading row axis is target k-1
    axes = [n - t for t in reversed(targets)]
    m = mat.reshape((2,) * (2 * k))
    out = np.tensordot(m, psi, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return np.ascontiguousarray(out).reshape(batch, -1)


@lru_cache(maxsize=64)
def _pauli_error_matrices(k: int) -> tuple[np.ndarray, ...]:
    """All ``4**k`` Pauli products on ``k`` targets; code ``c`` has digit ``j`` for target ``j``."""
    mats = []
    for code in range(4**k):
        mat = np.ones((1, 1), dtype=complex)
        for j in range(k):
            mat = np.kron(_PAULI_1Q[(code >> (2 * j)) & 3], mat)
        mats.append(mat)
    return tuple(mats)


def _check_targets(gate: Gate, n: int) -> None:
    if any(t >= n for t in gate.targets):
        raise ValueError(f"{gate.kind} targets {gate.targets} out of range for {n} qubits")


@lru_cache(maxsize=256)
def _pauli_tables(n: int, targets: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Gather indices and phases for every Pauli product on ``targets``.

    Row ``c`` (encoded as in ``_pauli_error_matrices``) satisfies
    ``(P_c psi)[i] = phase[c, i] * psi[src[c, i]]``.
    """
    codes = np.arange(4 ** len(targets))
    xmask = np.zeros(codes.shape, dtype=np.int64)
    zmask = np.zeros(codes.shape, dtype=np.int64)
    n_y = np.zeros(codes.shape, dtype=np.int64)
    for j, t in enumerate(targets):
        digit = (codes >> (2 * j)) & 3
        xmask |= np.where((digit == 1) | (digit == 2), 1 << t, 0)
        zmask |= np.where((digit == 2) | (digit == 3), 1 << t, 0)
        n_y += digit == 2
    # (P psi)[c] = i**n_y * (-1)**popcount((c ^ x) & z) * psi[c ^ x]
    src = basis_indices(n)[None, :] ^ xmask[:, None]
    sign = 1 - 2 * (np.bitwise_count(src & zmask[:, None]) & 1)
    return src, (1j ** n_y)[:, None] * sign


def _apply_paulis(amps: np.ndarray, n: int, targets: Sequence[int], codes: np.ndarray) -> np.ndarray:
    """Applies a per-row Pauli product (encoded as in ``_pauli_error_matrices``) to a batch."""
    src, phase = _pauli_tables(n, tuple(targets))
    codes = np.asarray(codes, dtype=np.int64)
    return phase[codes] * np.take_along_axis(amps, src[codes], axis=1)


def apply_gate(state: QuantumState, gate: Gate) -> QuantumState:
    """Returns a new state with ``gate`` applied."""
    _check_targets(gate, state.n_qubits)
    out = _apply_matrix(state.amplitudes[None, :], state.n_qubits, gate.targets, gate.unitary())
    return QuantumState(state.n_qubits, out[0])


def _initial_amplitudes(n: int, initial_state: QuantumState | None) -> np.ndarray:
    if initial_state is None:
        return QuantumState.zero(n).amplitudes
    if initial_state.n_qubits != n:
        raise ValueError("initial state size does not match the circuit")
    return initial_state.amplitudes


def run_circuit(
    circuit: CircuitLike,
    noise: NoiseModel | None = None,
    rng_seed: int | np.random.Generator = 0,
    initial_state: QuantumState | None = None,
) -> QuantumState:
    """Runs a bound circuit from ``|0...0>`` (or ``initial_state``).

    With gate noise this is a single trajectory: after each gate a uniformly
    random non-identity Pauli is inserted on its targets with the gate's error
    probability, drawn from the seeded stream.
    """
    n = circuit.n_qubits
    amps = _initial_amplitudes(n, initial_state)[None, :].copy()
    rng = np.random.default_rng(rng_seed)
    for gate in circuit.gates:
        _check_targets(gate, n)
        amps = _apply_matrix(amps, n, gate.targets, gate.unitary())
        if noise is not None:
            p = noise.gate_error_probability(gate)
            if p > 0 and rng.random() < p:
                k = len(gate.targets)
                code = int(rng.integers(1, 4**k))
                amps = _apply_matrix(amps, n, gate.targets, _pauli_error_matrices(k)[code])
    return QuantumState(n, amps[0])


class CompiledObservable:
    """A Hermitian PauliSum grouped by X-mask for fast exact expectations."""

    def __init__(self, obs: PauliSum, n_qubits: int):
        if not obs.is_hermitian():
            raise ValueError("observable is not Hermitian")
        if obs.n_qubits > n_qubits:
            raise ValueError(f"observable acts on {obs.n_qubits} qubits, state has {n_qubits}")
        self.n_qubits = n_qubits
        groups: dict[int, np.ndarray] = {}
        for term in obs.terms:
            xmask, zmask, n_y = pauli_masks(term.ops)
            vec = term.coefficient * (1j**n_y) * parity_signs(n_qubits, zmask)
            groups[xmask] = groups.get(xmask, 0) + vec
        idx = basis_indices(n_qubits)
        self._groups = [(idx ^ x, v) for x, v in sorted(groups.items())]

    def expectation_batch(self, amps: np.ndarray) -> np.ndarray:
        """Expectations for a batch of states of shape ``(B, 2**n)``."""
        total = np.zeros(amps.shape[0], dtype=complex)
        for perm, vec in self._groups:
            total += np.einsum("bi,bi->b", amps[:, perm].conj(), amps * vec)
        return total.real

    def __call__(self, state: QuantumState | np.ndarray) -> float:
        amps = state.amplitudes if isinstance(state, QuantumState) else np.asarray(state)
        return float(self.expectation_batch(amps[None, :])[0])


def expectation(state: QuantumState, obs: PauliSum) -> float:
    """Exact ``<state|obs|state>`` for a Hermitian observable."""
    return CompiledObservable(obs, state.n_qubits)(state)


# --- sampling -----------------------------------------------------------------


def _readout_probabilities(probs: np.ndarray, n: int, noise: NoiseModel | None) -> np.ndarray:
    """Pushes an outcome distribution through independent per-qubit bit flips."""
    if noise is None or not noise.has_readout_error:
        return probs
    out = probs.reshape((-1,) + (2,) * n)
    for q in range(n):
        p01, p10 = noise.readout_pair(q)
        if p01 == 0 and p10 == 0:
            continue
        conf = np.array([[1 - p01, p10], [p01, 1 - p10]])  # conf[read, true]
        axis = n - q
        out = np.moveaxis(np.tensordot(conf, out, axes=([1], [axis])), 0, axis)
    return out.reshape(probs.shape)


def _multinomial(rng: np.random.Generator, shots: int, probs: np.ndarray) -> np.ndarray:
    probs = np.clip(probs, 0.0, None)
    return rng.multinomial(shots, probs / probs.sum())


def sample_counts(
    gates: Sequence[Gate],
    n_qubits: int,
    shots: int,
    noise: NoiseModel | None,
    rng: np.random.Generator,
    initial_state: QuantumState | None = None,
) -> np.ndarray:
    """Samples ``shots`` computational-basis outcomes of a bound gate list.

    Every shot follows its own noise trajectory. Shots that drew the same
    error pattern share one simulation, so the cost scales with the number of
    distinct patterns rather than with ``shots``.

    Returns:
        Integer count vector of length ``2**n_qubits``.
    """
    if shots <= 0:
        raise ValueError("shots must be positive")
    n = n_qubits
    amps0 = _initial_amplitudes(n, initial_state)
    for gate in gates:
        _check_targets(gate, n)
    mats = [g.unitary() for g in gates]
    probs_err = (
        np.array([noise.gate_error_probability(g) for g in gates]) if noise is not None else None
    )
    if probs_err is None or not probs_err.any():
        amps = amps0[None, :]
        for gate, mat in zip(gates, mats):
            amps = _apply_matrix(amps, n, gate.targets, mat)
        probs = _readout_probabilities(np.abs(amps[0]) ** 2, n, noise)
        return _multinomial(rng, shots, probs)

    n_gates = len(gates)
    arity = np.array([len(g.targets) for g in gates])
    # Hitting each shot independently with probability p is the same as
    # hitting a uniformly random subset of Binomial(shots, p) shots.
    n_hit = rng.binomial(shots, probs_err)
    hit_shots = np.concatenate(
        [rng.choice(shots, size=k, replace=False) for k in n_hit] + [np.zeros(0, np.int64)]
    ).astype(np.int64)
    hit_gates = np.repeat(np.arange(n_gates), n_hit)
    hit_codes = rng.integers(1, 4 ** arity[hit_gates]) if hit_gates.size else hit_gates
    # error-free shots form one group; only the rest need deduplicating
    noisy_rows, row_of = np.unique(hit_shots, return_inverse=True)
    n_clean = shots - noisy_rows.size
    sub = np.zeros((noisy_rows.size, n_gates), dtype=np.uint8)
    sub[row_of, hit_gates] = hit_codes
    keys = sub.view(np.dtype((np.void, n_gates))).ravel()
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    patterns = sub[first]
    # order patterns by their first error; until then each equals the clean state
    onset = np.argmax(patterns != 0, axis=1)
    order = np.argsort(onset, kind="stable")
    patterns, onset = patterns[order], onset[order]
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    inverse = rank[inverse.ravel()]
    clean = amps0[None, :]
    amps = np.empty((patterns.shape[0] + 1, 1 << n), dtype=complex)
    active = 0
    for g, (gate, mat) in enumerate(zip(gates, mats)):
        clean = _apply_matrix(clean, n, gate.targets, mat)
        if active:
            amps[1 : active + 1] = _apply_matrix(amps[1 : active + 1], n, gate.targets, mat)
        joining = int(np.count_nonzero(onset == g))
        if joining:
            amps[active + 1 : active + 1 + joining] = clean
            active += joining
        rows = np.flatnonzero(patterns[:active, g])
        if rows.size:
            amps[rows + 1] = _apply_paulis(amps[rows + 1], n, gate.targets, patterns[rows, g])
    amps[0] = clean[0]
    probs = _readout_probabilities(np.abs(amps) ** 2, n, noise)
    counts = _multinomial(rng, n_clean, probs[0]) if n_clean else np.zeros(1 << n, np.int64)
    if noisy_rows.size:
        # one inverse-CDF draw per noisy shot from its own trajectory's
        # distribution; offsetting pattern k's CDF by k makes one sorted array
        cdf = np.cumsum(probs[1:], axis=1)
        cdf /= cdf[:, -1:]
        cdf += np.arange(cdf.shape[0])[:, None]
        u = rng.random(noisy_rows.size) + inverse
        flat = np.searchsorted(cdf.ravel(), u)
        outcome = np.minimum(flat - inverse * (1 << n), (1 << n) - 1)
        counts += np.bincount(outcome, minlength=1 << n)
    return counts


def sample(
    state: QuantumState,
    basis_rotations: CircuitLike | Sequence[Gate] | None,
    shots: int,
    noise: NoiseModel | None = None,
    rng_seed: int | np.random.Generator = 0,
) -> MeasurementOutcome:
    """Measures ``state`` after optional basis-change gates.

    The basis-change gates are subject to gate noise like any other gate.
    """
    if shots <= 0:
        raise ValueError("shots must be positive")
    if basis_rotations is None:
        gates: Sequence[Gate] = ()
    elif hasattr(basis_rotations, "gates"):
        gates = basis_rotations.gates
    else:
        gates = basis_rotations
    rng = np.random.default_rng(rng_seed)
    vec = sample_counts(gates, state.n_qubits, shots, noise, rng, initial_state=state)
    return MeasurementOutcome.from_vector(vec, state.n_qubits)


# --- Pauli measurement settings ------------------------------------------------


def basis_change_gates(setting: dict[int, str]) -> list[Gate]:
    """Gates mapping each qubit's measured Pauli onto Z (``H`` for X, ``S^dag H`` for Y)."""
    gates = []
    for qubit, letter in sorted(setting.items()):
        if letter == "X":
            gates.append(Gate("H", (qubit,)))
        elif letter == "Y":
            gates.append(Gate("SDG", (qubit,)))
            gates.append(Gate("H", (qubit,)))
        elif letter != "Z":
            raise ValueError(f"unknown measurement letter {letter!r}")
    return gates


def group_qubitwise(strings: Iterable[PauliString]) -> list[dict[int, str]]:
    """Greedy qubit-wise-commuting grouping in the given order.

    Each returned setting assigns one letter per qubit; every input string
    is diagonal in at least one setting.
    """
    settings: list[dict[int, str]] = []
    for ops in strings:
        if not ops:
            continue
        for setting in settings:
            if all(setting.get(q, p) == p for q, p in ops):
                setting.update(ops)
                break
        else:
            settings.append(dict(ops))
    return settings


def find_setting(ops: PauliString, settings: Sequence[dict[int, str]]) -> int:
    for i, setting in enumerate(settings):
        if all(setting.get(q) == p for q, p in ops):
            return i
    raise KeyError(f"no measurement setting covers {ops}")


def parity_from_counts(counts: np.ndarray, n_qubits: int, ops: PauliString) -> float:
    """Mean of ``prod_q (-1)**bit_q`` over the qubits in ``ops`` (any weights)."""
    total = counts.sum()
    if total == 0:
        raise ValueError("no counts to average")
    zmask = 0
    for q, _ in ops:
        zmask |= 1 << q
    return float(np.dot(counts, parity_signs(n_qubits, zmask)) / total)


def estimate_expectation_sampled(
    state_prep: CircuitLike,
    obs: PauliSum,
    shots_per_term: int,
    noise: NoiseModel | None = None,
    rng_seed: int | np.random.Generator = 0,
    grouping: bool = True,
) -> float:
    """Shot-based estimate of ``<obs>`` on the state prepared by ``state_prep``.

    Terms are measured with ``shots_per_term`` shots per measurement setting.
    With ``grouping`` qubit-wise commuting terms share a setting, otherwise
    each term gets its own.
    """
    if shots_per_term <= 0:
        raise ValueError("shots_per_term must be positive")
    if not obs.is_hermitian():
        raise ValueError("observable is not Hermitian")
    n = state_prep.n_qubits
    if obs.n_qubits > n:
        raise ValueError("observable acts outside the prepared register")
    rng = np.random.default_rng(rng_seed)
    strings = [t.ops for t in obs.terms if t.ops]
    settings = group_qubitwise(strings) if grouping else [dict(s) for s in strings]
    counts = [
        sample_counts(list(state_prep.gates) + basis_change_gates(s), n, shots_per_term, noise, rng)
        for s in settings
    ]
    total = obs.constant().real
    for term in obs.terms:
        if term.ops:
            k = find_setting(term.ops, settings)
            total += term.coefficient.real * parity_from_counts(counts[k], n, term.ops)
    return float(total)
