"""Pauli-sum observables and the model Hamiltonians used in the experiments.

Qubit indices are little-endian: qubit 0 is the least significant bit of a
computational-basis index. A Pauli string is stored as a sorted tuple of
``(qubit, letter)`` pairs with identity factors omitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

COEFF_TOL = 1e-12
DENSE_QUBIT_LIMIT = 14

# Single-qubit product table: (a, b) -> (phase, letter) with a*b = phase*letter.
_PRODUCT: dict[tuple[str, str], tuple[complex, str]] = {
    ("X", "X"): (1, "I"),
    ("Y", "Y"): (1, "I"),
    ("Z", "Z"): (1, "I"),
    ("X", "Y"): (1j, "Z"),
    ("Y", "X"): (-1j, "Z"),
    ("Y", "Z"): (1j, "X"),
    ("Z", "Y"): (-1j, "X"),
    ("Z", "X"): (1j, "Y"),
    ("X", "Z"): (-1j, "Y"),
}

PauliString = tuple[tuple[int, str], ...]


def _canonical_ops(ops: Iterable[tuple[int, str]]) -> PauliString:
    seen: dict[int, str] = {}
    for qubit, letter in ops:
        qubit = int(qubit)
        letter = str(letter).upper()
        if qubit < 0:
            raise ValueError(f"negative qubit index {qubit}")
        if letter not in "IXYZ" or len(letter) != 1:
            raise ValueError(f"unknown Pauli letter {letter!r}")
        if qubit in seen:
            raise ValueError(f"qubit {qubit} appears twice in one Pauli string")
        if letter != "I":
            seen[qubit] = letter
    return tuple(sorted(seen.items()))


def parse_pauli_label(label: str) -> PauliString:
    """Parses labels such as ``"X0 Z2"`` or ``"I"`` into a Pauli string."""
    label = label.strip()
    if label in ("", "I"):
        return ()
    ops = []
    for token in label.split():
        ops.append((int(token[1:]), token[0]))
    return _canonical_ops(ops)


def pauli_label(ops: PauliString) -> str:
    """Inverse of :func:`parse_pauli_label`."""
    if not ops:
        return "I"
    return " ".join(f"{letter}{qubit}" for qubit, letter in ops)


def pauli_masks(ops: PauliString) -> tuple[int, int, int]:
    """Returns ``(xmask, zmask, n_y)`` for a Pauli string.

    The string acts on a basis state as
    ``P|b> = i**n_y * (-1)**popcount(b & zmask) |b ^ xmask>``.
    """
    xmask = zmask = n_y = 0
    for qubit, letter in ops:
        bit = 1 << qubit
        if letter in "XY":
            xmask |= bit
        if letter in "YZ":
            zmask |= bit
        if letter == "Y":
            n_y += 1
    return xmask, zmask, n_y


def _multiply_strings(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    phase: complex = 1
    left = dict(a)
    out = dict(left)
    for qubit, letter in b:
        if qubit not in left:
            out[qubit] = letter
            continue
        factor, result = _PRODUCT[(left[qubit], letter)]
        phase *= factor
        if result == "I":
            del out[qubit]
        else:
            out[qubit] = result
    return phase, tuple(sorted(out.items()))


@dataclass(frozen=True)
class PauliTerm:
    """A complex coefficient times a Pauli string.

    Attributes:
        coefficient: Complex prefactor.
        ops: Sorted ``(qubit, letter)`` pairs; an empty tuple is the identity.
    """

    coefficient: complex
    ops: PauliString = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", _canonical_ops(self.ops))
        object.__setattr__(self, "coefficient", complex(self.coefficient))

    @property
    def label(self) -> str:
        return pauli_label(self.ops)


class PauliSum:
    """An immutable linear combination of Pauli strings in canonical form.

    Like strings are merged, coefficients with magnitude below ``1e-12`` are
    dropped and the terms are kept sorted by their Pauli string, so two equal
    operators always compare equal.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Iterable[PauliTerm | tuple[complex, Iterable[tuple[int, str]]]] = ()):
        acc: dict[PauliString, complex] = {}
        for term in terms:
            if not isinstance(term, PauliTerm):
                coeff, ops = term
                term = PauliTerm(coeff, tuple(ops))
            acc[term.ops] = acc.get(term.ops, 0) + term.coefficient
        self._terms: tuple[PauliTerm, ...] = tuple(
            PauliTerm(c, ops) for ops, c in sorted(acc.items()) if abs(c) >= COEFF_TOL
        )

    @classmethod
    def from_labels(cls, mapping: Mapping[str, complex]) -> PauliSum:
        """Builds a sum from ``{"Z0 Z1": -0.5, "X0": 0.2}``-style mappings."""
        return cls(PauliTerm(c, parse_pauli_label(k)) for k, c in mapping.items())

    @classmethod
    def identity(cls, coefficient: complex = 1.0) -> PauliSum:
        return cls([PauliTerm(coefficient, ())])

    @property
    def terms(self) -> tuple[PauliTerm, ...]:
        return self._terms

    @property
    def n_qubits(self) -> int:
        """One past the largest qubit index acted on (0 for a pure constant)."""
        top = -1
        for term in self._terms:
            if term.ops:
                top = max(top, term.ops[-1][0])
        return top + 1

    def to_labels(self) -> dict[str, complex]:
        return {t.label: t.coefficient for t in self._terms}

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return all(abs(t.coefficient.imag) <= tol for t in self._terms)

    def real(self) -> PauliSum:
        """Drops imaginary parts of the coefficients."""
        return PauliSum(PauliTerm(t.coefficient.real, t.ops) for t in self._terms)

    def dagger(self) -> PauliSum:
        return PauliSum(PauliTerm(t.coefficient.conjugate(), t.ops) for t in self._terms)

    def shifted(self, offset: int) -> PauliSum:
        """Relabels every qubit ``q`` as ``q + offset``."""
        return PauliSum(
            PauliTerm(t.coefficient, tuple((q + offset, p) for q, p in t.ops)) for t in self._terms
        )

    def constant(self) -> complex:
        for t in self._terms:
            if not t.ops:
                return t.coefficient
        return 0j

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PauliSum):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        return hash(self._terms)

    def __repr__(self) -> str:
        parts = [f"{t.coefficient:.6g}*[{t.label}]" for t in self._terms]
        return "PauliSum(" + " + ".join(parts) + ")"

    def __add__(self, other: PauliSum | complex) -> PauliSum:
        if isinstance(other, PauliSum):
            return PauliSum(self._terms + other._terms)
        return PauliSum(self._terms + (PauliTerm(other, ()),))

    __radd__ = __add__

    def __neg__(self) -> PauliSum:
        return self * -1

    def __sub__(self, other: PauliSum | complex) -> PauliSum:
        return self + (-other)

    def __rsub__(self, other: complex) -> PauliSum:
        return (-self) + other

    def __mul__(self, other: PauliSum | complex) -> PauliSum:
        if isinstance(other, PauliSum):
            return self @ other
        return PauliSum(PauliTerm(t.coefficient * other, t.ops) for t in self._terms)

    def __rmul__(self, other: complex) -> PauliSum:
        return self * other

    def __matmul__(self, other: PauliSum) -> PauliSum:
        out = []
        for a in self._terms:
            for b in other._terms:
                phase, ops = _multiply_strings(a.ops, b.ops)
                out.append(PauliTerm(phase * a.coefficient * b.coefficient, ops))
        return PauliSum(out)

    def commutator(self, other: PauliSum) -> PauliSum:
        return self @ other - other @ self

    def to_dense(self, n_qubits: int | None = None) -> np.ndarray:
        return dense_matrix(self, n_qubits)


def tensor(left: PauliSum, right: PauliSum, right_offset: int) -> PauliSum:
    """Returns ``left (x) right`` with ``right`` relabelled to start at ``right_offset``."""
    return left @ right.shifted(right_offset)


@lru_cache(maxsize=32)
def basis_indices(n_qubits: int) -> np.ndarray:
    """Computational-basis indices ``0..2**n-1`` as an int64 array."""
    return np.arange(1 << n_qubits, dtype=np.int64)


def parity_signs(n_qubits: int, zmask: int) -> np.ndarray:
    """``(-1)**popcount(b & zmask)`` for every basis index ``b``."""
    idx = basis_indices(n_qubits)
    return 1.0 - 2.0 * (np.bitwise_count(idx & zmask) & 1)


def _check_size(obs: PauliSum, n_qubits: int | None) -> int:
    n = obs.n_qubits if n_qubits is None else n_qubits
    if obs.n_qubits > n:
        raise ValueError(f"operator acts on {obs.n_qubits} qubits, more than {n}")
    return max(n, 0)


def sparse_matrix(obs: PauliSum, n_qubits: int | None = None) -> sp.csr_matrix:
    """Sparse matrix of ``obs`` in the little-endian computational basis."""
    n = _check_size(obs, n_qubits)
    dim = 1 << n
    idx = basis_indices(n)
    rows, cols, vals = [], [], []
    for term in obs.terms:
        xmask, zmask, n_y = pauli_masks(term.ops)
        rows.append(idx ^ xmask)
        cols.append(idx)
        vals.append(term.coefficient * (1j**n_y) * parity_signs(n, zmask))
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=complex)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    return mat.tocsr()


def dense_matrix(obs: PauliSum, n_qubits: int | None = None) -> np.ndarray:
    """Dense matrix of ``obs``; refuses registers above 14 qubits."""
    n = _check_size(obs, n_qubits)
    if n > DENSE_QUBIT_LIMIT:
        raise ValueError(f"dense matrices are limited to {DENSE_QUBIT_LIMIT} qubits, got {n}")
    return sparse_matrix(obs, n).toarray()


def lowest_eigenpairs(
    obs: PauliSum, k: int, n_qubits: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Exact lowest ``k`` eigenvalues (ascending) and eigenvectors (columns).

    Dense diagonalization is used up to 10 qubits, Lanczos above.
    """
    if not obs.is_hermitian():
        raise ValueError("observable is not Hermitian")
    n = _check_size(obs, n_qubits)
    dim = 1 << n
    if k < 1 or k > dim:
        raise ValueError(f"cannot take {k} eigenpairs of a {dim}-dimensional operator")
    if n <= 10 or k >= dim - 1:
        mat = dense_matrix(obs, n)
        if np.allclose(mat.imag, 0):
            mat = mat.real
        vals, vecs = np.linalg.eigh(mat)
        return vals[:k], vecs[:, :k]
    mat = sparse_matrix(obs, n)
    if abs(mat.imag).max() == 0:
        mat = mat.real
    vals, vecs = spla.eigsh(mat, k=k, which="SA", v0=np.ones(dim) / math.sqrt(dim))
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


# --- models -----------------------------------------------------------------


def build_tfim(n_spins: int, J: float = 1.0, h: float = 0.5) -> PauliSum:
    """Open-chain transverse-field Ising model.

    ``H = -(J/2) sum_i Z_i Z_{i+1} + h sum_i X_i`` over ``n_spins`` qubits.
    """
    if n_spins < 2:
        raise ValueError("the chain needs at least two spins")
    terms = [PauliTerm(-J / 2, ((i, "Z"), (i + 1, "Z"))) for i in range(n_spins - 1)]
    terms += [PauliTerm(h, ((i, "X"),)) for i in range(n_spins)]
    return PauliSum(terms)


def parity_operator(n_qubits: int) -> PauliSum:
    """The X-parity ``P_X = X_0 X_1 ... X_{n-1}``."""
    return PauliSum([PauliTerm(1.0, tuple((i, "X") for i in range(n_qubits)))])


def parity_projectors(n_qubits: int) -> tuple[PauliSum, PauliSum]:
    """Returns ``((I + P_X)/2, (I - P_X)/2)``."""
    px = parity_operator(n_qubits)
    ident = PauliSum.identity()
    return 0.5 * (ident + px), 0.5 * (ident - px)


@dataclass(frozen=True)
class H2Coefficients:
    """Two-qubit H2 coefficients at one bond distance (Hartree).

    The Hamiltonian is ``c0 I + c1 Z0 + c2 X0 + c3 Z0 Z1 + c4 X0 X1``.
    """

    distance: float
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float

    def __post_init__(self) -> None:
        if not self.distance > 0:
            raise ValueError(f"bond distance must be positive, got {self.distance}")


@dataclass(frozen=True)
class H2Reference:
    """Exact ground and first excited energies at one bond distance."""

    distance: float
    e0: float
    e1: float


def build_h2(coeffs: H2Coefficients) -> PauliSum:
    """The two-qubit H2 Hamiltonian for one row of coefficients."""
    c = coeffs
    return PauliSum.from_labels(
        {"I": c.c0, "Z0": c.c1, "X0": c.c2, "Z0 Z1": c.c3, "X0 X1": c.c4}
    )


def _read_rows(path: Path | None, name: str, width: int) -> list[list[float]]:
    if path is None:
        text = resources.files("aevqe.data").joinpath(name).read_text()
    else:
        text = Path(path).read_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != width:
            raise ValueError(f"{name}:{lineno}: expected {width} columns, got {len(fields)}")
        rows.append([float(f) for f in fields])
    return rows


def load_h2_table(path: str | Path | None = None) -> list[H2Coefficients]:
    """Loads ``distance c0 c1 c2 c3 c4`` rows; defaults to the bundled table."""
    rows = _read_rows(Path(path) if path else None, "h2_sto3g.txt", 6)
    return [H2Coefficients(*r) for r in rows]


def load_h2_reference(path: str | Path | None = None) -> list[H2Reference]:
    """Loads ``distance E0 E1`` rows; defaults to the bundled full-CI values."""
    rows = _read_rows(Path(path) if path else None, "h2_reference.txt", 3)
    return [H2Reference(*r) for r in rows]


def h2_coefficients_at(distance: float, table: Sequence[H2Coefficients] | None = None) -> H2Coefficients:
    """Returns the tabulated row closest to ``distance`` (within 1e-6)."""
    table = load_h2_table() if table is None else table
    for row in table:
        if abs(row.distance - distance) < 1e-6:
            return row
    raise KeyError(f"no H2 coefficients tabulated at {distance}")
