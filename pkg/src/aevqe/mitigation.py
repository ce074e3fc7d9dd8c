"""Readout-error mitigation and X-parity symmetry verification."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .hamiltonian import PauliSum, PauliString, parity_operator, parity_projectors, sparse_matrix
from .qsim import MeasurementOutcome, NoiseModel, QuantumState

ACCEPTANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class ReadoutCalibration:
    """Per-qubit readout confusion.

    Attributes:
        flips: One ``(p10, p01)`` pair per qubit, where ``p10`` is the chance
            a prepared 0 reads as 1 and ``p01`` the chance a prepared 1 reads
            as 0.
    """

    flips: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        flips = tuple((float(a), float(b)) for a, b in self.flips)
        object.__setattr__(self, "flips", flips)
        for p10, p01 in flips:
            if not (0 <= p10 <= 1 and 0 <= p01 <= 1):
                raise ValueError("flip probabilities must lie in [0, 1]")

    @property
    def n_qubits(self) -> int:
        return len(self.flips)

    def matrix(self, qubit: int) -> np.ndarray:
        """``C[reported, true]`` for one qubit; columns sum to one."""
        p10, p01 = self.flips[qubit]
        return np.array([[1 - p10, p01], [p10, 1 - p01]])

    @classmethod
    def identity(cls, n_qubits: int) -> ReadoutCalibration:
        return cls(((0.0, 0.0),) * n_qubits)

    @classmethod
    def from_noise_model(cls, noise: NoiseModel, n_qubits: int) -> ReadoutCalibration:
        return cls(tuple(noise.readout_pair(q) for q in range(n_qubits)))

    @classmethod
    def load(cls, path: str | Path) -> ReadoutCalibration:
        """Reads ``qubit p10 p01`` rows; ``#`` starts a comment."""
        rows: dict[int, tuple[float, float]] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'qubit p10 p01'")
            rows[int(fields[0])] = (float(fields[1]), float(fields[2]))
        if sorted(rows) != list(range(len(rows))):
            raise ValueError(f"{path}: qubit rows must cover 0..n-1")
        return cls(tuple(rows[q] for q in range(len(rows))))

    def save(self, path: str | Path) -> None:
        lines = ["# qubit p10 p01"] + [f"{q} {a!r} {b!r}" for q, (a, b) in enumerate(self.flips)]
        Path(path).write_text("\n".join(lines) + "\n")


def _apply_per_qubit(dist: np.ndarray, n: int, mats: list[np.ndarray | None]) -> np.ndarray:
    out = dist.reshape((2,) * n)
    for q, mat in enumerate(mats):
        if mat is None:
            continue
        axis = n - 1 - q
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [axis])), 0, axis)
    return out.reshape(-1)


def apply_readout_noise(dist: np.ndarray, n_qubits: int, cal: ReadoutCalibration) -> np.ndarray:
    """Pushes an exact distribution through the calibration's confusion maps."""
    mats = [cal.matrix(q) if q < cal.n_qubits else None for q in range(n_qubits)]
    return _apply_per_qubit(np.asarray(dist, dtype=float), n_qubits, mats)


def mitigate_distribution(
    dist: np.ndarray, n_qubits: int, cal: ReadoutCalibration, clip: bool = True
) -> np.ndarray:
    """Applies the per-qubit inverse confusion maps to a distribution over ``n_qubits`` bits.

    With ``clip`` negative quasi-probabilities are set to zero and the result
    renormalized.
    """
    if cal.n_qubits < n_qubits:
        raise ValueError(f"calibration covers {cal.n_qubits} qubits, outcome has {n_qubits}")
    mats: list[np.ndarray | None] = []
    for q in range(n_qubits):
        p10, p01 = cal.flips[q]
        if p10 >= 0.5 or p01 >= 0.5:
            raise ValueError(f"qubit {q}: flip probability >= 0.5 makes the confusion map singular")
        mats.append(None if p10 == 0 and p01 == 0 else np.linalg.inv(cal.matrix(q)))
    dist = np.asarray(dist, dtype=float)
    total = dist.sum()
    out = _apply_per_qubit(dist / total, n_qubits, mats)
    if clip:
        out = np.clip(out, 0.0, None)
        out /= out.sum()
    return out * total


def mitigate_counts(raw: MeasurementOutcome, cal: ReadoutCalibration) -> dict[str, float]:
    """Mitigated outcome probabilities keyed by bitstring (zero entries omitted)."""
    n = raw.n_qubits
    if raw.shots <= 0:
        raise ValueError("empty measurement outcome")
    probs = mitigate_distribution(raw.to_vector() / raw.shots, n, cal)
    return {format(i, f"0{n}b"): float(p) for i, p in enumerate(probs) if p > 0}


# --- symmetry verification ------------------------------------------------------


@dataclass(frozen=True)
class VerifiedEstimate:
    """An energy projected onto one parity sector.

    Attributes:
        energy: ``Tr[H P rho P] / Tr[P rho P]``.
        acceptance_rate: ``Tr[P rho P]``, the fraction of population kept.
        sector: ``+1`` or ``-1``.
    """

    energy: float
    acceptance_rate: float
    sector: int


def _check_sector(sector: int) -> None:
    if sector not in (1, -1):
        raise ValueError(f"sector must be +1 or -1, got {sector}")


def _check_acceptance(acceptance: float, sector: int) -> None:
    if not acceptance >= ACCEPTANCE_FLOOR:
        raise ValueError(f"parity sector {sector:+d} is unpopulated (acceptance {acceptance:.3g})")


def verification_terms(H: PauliSum, n_spins: int) -> tuple[PauliSum, PauliSum]:
    """Returns ``(H @ P_X, P_X)``; together with ``H`` these fix the verified energy."""
    px = parity_operator(n_spins)
    return (H @ px).real(), px


def verify_from_expectations(e_h: float, e_hp: float, e_p: float, sector: int) -> VerifiedEstimate:
    """``(<H> + s <H P_X>) / (1 + s <P_X>)`` with acceptance ``(1 + s <P_X>)/2``."""
    _check_sector(sector)
    acceptance = 0.5 * (1 + sector * e_p)
    _check_acceptance(acceptance, sector)
    return VerifiedEstimate((e_h + sector * e_hp) / (2 * acceptance), float(acceptance), sector)


def symmetry_verify(
    data: QuantumState | np.ndarray | Mapping[PauliString, float],
    H: PauliSum,
    sector: int,
    n_spins: int,
) -> VerifiedEstimate:
    """Projects an energy estimate onto the X-parity sector ``sector``.

    Args:
        data: A pure state (``QuantumState`` or 1-D amplitudes), a density
            matrix (2-D array), or measured Pauli expectations keyed by Pauli
            string covering the terms of ``H``, ``H @ P_X`` and ``P_X``.
        H: Observable commuting with the parity ``X_0 ... X_{n-1}``.
        sector: Target parity eigenvalue.
        n_spins: Register size.
    """
    _check_sector(sector)
    px = parity_operator(n_spins)
    if isinstance(data, Mapping):
        hp, _ = verification_terms(H, n_spins)

        def value(obs: PauliSum) -> float:
            return sum(
                t.coefficient.real * (1.0 if not t.ops else data[t.ops]) for t in obs.terms
            )

        return verify_from_expectations(value(H), value(hp), value(px), sector)
    plus, minus = parity_projectors(n_spins)
    proj = sparse_matrix(plus if sector > 0 else minus, n_spins)
    hmat = sparse_matrix(H, n_spins)
    if isinstance(data, QuantumState):
        data = data.amplitudes
    arr = np.asarray(data, dtype=complex)
    if arr.ndim == 1:
        kept = proj @ arr
        acceptance = float(np.vdot(kept, kept).real)
        _check_acceptance(acceptance, sector)
        return VerifiedEstimate(float(np.vdot(kept, hmat @ kept).real) / acceptance, acceptance, sector)
    p = proj.toarray()
    projected = p @ arr @ p
    acceptance = float(np.trace(projected).real)
    _check_acceptance(acceptance, sector)
    return VerifiedEstimate(float(np.trace(hmat @ projected).real) / acceptance, acceptance, sector)
