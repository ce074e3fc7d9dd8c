"""Initialization circuits and variational ansatz builders.

All ansatz builders return ancilla-free circuits over the physical register;
``Circuit.embed`` places them behind the ancillas. Every parameterized gate
is ``exp(-i theta P / 2)`` for a Pauli string ``P``, so the two-point
parameter-shift rule with shift ``pi/2`` is exact for every slot.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .circuit import Circuit
from .qsim import Gate

INIT_STYLES = ("cz", "bell")


def _check_register(n_ancilla: int, n_physical: int) -> None:
    if n_ancilla < 0 or n_physical < 1:
        raise ValueError("need at least one physical qubit and a non-negative ancilla count")
    if n_ancilla > n_physical:
        raise ValueError(f"{n_ancilla} ancillas cannot pair with {n_physical} physical qubits")


def build_initializer(n_ancilla: int, n_physical: int, style: str = "cz") -> Circuit:
    """Entangles ancilla ``i`` with physical qubit ``i`` in a maximally entangled pair.

    Styles:
        ``"cz"``: every qubit starts in ``(|0> - |1>)/sqrt(2)`` via ``RY(-pi/2)``
            and a CZ joins each pair. Unpaired physical qubits stay in that
            state, so post-selecting ancilla bit ``i`` leaves ``|->`` (bit 0) or
            ``-|+>`` (bit 1) on physical qubit ``i``.
        ``"bell"``: ``H`` on both, then ``CZ`` conjugated by ``H`` on the
            physical side gives ``(|00> + |11>)/sqrt(2)``; unpaired physical
            qubits stay in ``|0>``.

    Post-selecting ancilla outcome ``m`` (ancilla ``i`` = bit ``i``) leaves the
    physical register in ``|psi_m>``, matching :func:`reference_preparation`.
    """
    _check_register(n_ancilla, n_physical)
    gates: list[Gate] = []
    if style == "cz":
        for q in range(n_ancilla + n_physical):
            gates.append(Gate("RY", (q,), (-math.pi / 2,)))
        for i in range(n_ancilla):
            gates.append(Gate("CZ", (i, n_ancilla + i)))
    elif style == "bell":
        for i in range(n_ancilla):
            a, p = i, n_ancilla + i
            gates += [Gate("H", (a,)), Gate("H", (p,)), Gate("CZ", (a, p)), Gate("H", (p,))]
    else:
        raise ValueError(f"unknown initializer style {style!r}; expected one of {INIT_STYLES}")
    return Circuit(n_ancilla, n_physical, tuple(gates))


def _local_layer(n_physical: int, style: str) -> list[Gate]:
    if style == "cz":
        return [Gate("RY", (q,), (-math.pi / 2,)) for q in range(n_physical)]
    if style == "bell":
        return []
    raise ValueError(f"unknown initializer style {style!r}")


def reference_preparation(m: int, n_bits: int, n_physical: int, style: str = "cz") -> Circuit:
    """Prepares ``|psi_m>`` directly on an ancilla-free physical register.

    These are the orthogonal input states of the subspace-search baselines;
    they coincide (up to sign) with the states the entangled initializer of
    the same ``style`` leaves behind for ancilla outcome ``m``.
    """
    _check_register(n_bits, n_physical)
    if not 0 <= m < 1 << n_bits:
        raise ValueError(f"reference index {m} out of range for {n_bits} bits")
    gates = [Gate("X", (i,)) for i in range(n_bits) if m >> i & 1]
    return Circuit(0, n_physical, tuple(gates + _local_layer(n_physical, style)))


def superposition_preparation(
    m: int, n: int, sign: int, n_bits: int, n_physical: int, style: str = "cz"
) -> Circuit:
    """Prepares ``(|psi_m> + sign |psi_n>)/sqrt(2)`` up to a global sign."""
    _check_register(n_bits, n_physical)
    if m == n or sign not in (1, -1):
        raise ValueError("need two distinct indices and sign +-1")
    diff = m ^ n
    pivot = (diff & -diff).bit_length() - 1
    base = m if not m >> pivot & 1 else n
    gates = [Gate("X", (i,)) for i in range(n_bits) if base >> i & 1]
    gates.append(Gate("H", (pivot,)))
    if sign < 0:
        gates.append(Gate("Z", (pivot,)))
    for i in range(n_bits):
        if i != pivot and diff >> i & 1:
            gates.append(Gate("CNOT", (pivot, i)))
    return Circuit(0, n_physical, tuple(gates + _local_layer(n_physical, style)))


def rotated_reference_preparation(
    j: int, unitary: np.ndarray, n_bits: int, n_physical: int, style: str = "cz"
) -> Circuit:
    """Prepares ``sum_m unitary[m, j] |psi_m>``."""
    gates = [Gate("X", (i,)) for i in range(n_bits) if j >> i & 1]
    gates.append(Gate("UNITARY", tuple(range(n_bits)), matrix=unitary))
    return Circuit(0, n_physical, tuple(gates + _local_layer(n_physical, style)))


def build_hw_efficient(n_physical: int, layers: int) -> Circuit:
    """Hardware-efficient layers: RY and RZ slots on every qubit, then a CZ ladder.

    Slots are numbered layer by layer, qubit by qubit, RY before RZ, giving
    ``2 * n_physical * layers`` parameters.
    """
    if layers < 1:
        raise ValueError("layers must be at least 1")
    gates: list[Gate] = []
    slot = 0
    for _ in range(layers):
        for q in range(n_physical):
            gates.append(Gate("RY", (q,), slots=(slot,)))
            gates.append(Gate("RZ", (q,), slots=(slot + 1,)))
            slot += 2
        for q in range(n_physical - 1):
            gates.append(Gate("CZ", (q, q + 1)))
    return Circuit(0, n_physical, tuple(gates))


def ladder_bonds(n_physical: int) -> list[int]:
    """Bond order of one parity-ladder layer: forward sweep, then back down."""
    return list(range(n_physical - 1)) + list(range(n_physical - 3, -1, -1))


def build_parity_ladder(n_physical: int, layers: int) -> Circuit:
    """Parity-preserving ladder of ``YZZY`` gates for the Ising chain.

    Each gate ``exp(-i (a Y_q Z_q+1 + b Z_q Y_q+1)/2)`` is real and commutes
    with the global X-parity, so parity eigenstates from the ``"cz"``
    initializer stay in their sector, where the Ising eigenstates live. One
    layer sweeps the chain forward then back, for ``2 * (2 n - 3)`` slots
    per layer.
    """
    if layers < 1:
        raise ValueError("layers must be at least 1")
    if n_physical < 2:
        raise ValueError("the ladder needs at least two qubits")
    gates = []
    slot = 0
    for _ in range(layers):
        for q in ladder_bonds(n_physical):
            gates.append(Gate("YZZY", (q, q + 1), slots=(slot, slot + 1)))
            slot += 2
    return Circuit(0, n_physical, tuple(gates))


def default_layers(n_ancilla: int) -> int:
    """Two variational layers from three ancillas upward, one otherwise."""
    return 2 if n_ancilla >= 3 else 1


# Generators of real rotations on two qubits; together they span so(4).
UCCGSD_GENERATORS: tuple[str, ...] = ("X0 Y1", "Y0 X1", "Z0 Y1", "Y0 Z1", "Y0", "Y1")


def _pauli_rotation_gates(label: str, slot: int) -> list[Gate]:
    """``exp(-i theta P / 2)`` as basis change, CNOT parity ladder and an RZ slot."""
    ops = [(int(tok[1:]), tok[0]) for tok in label.split()]
    pre, post = [], []
    for q, p in ops:
        if p == "X":
            pre.append(Gate("H", (q,)))
            post.append(Gate("H", (q,)))
        elif p == "Y":
            pre.append(Gate("RX", (q,), (math.pi / 2,)))
            post.append(Gate("RX", (q,), (-math.pi / 2,)))
    qubits = [q for q, _ in ops]
    ladder = [Gate("CNOT", (a, b)) for a, b in zip(qubits, qubits[1:])]
    core = ladder + [Gate("RZ", (qubits[-1],), slots=(slot,))] + ladder[::-1]
    return pre + core + post


def build_uccgsd_h2() -> Circuit:
    """Two-qubit generalized singles-and-doubles ansatz for H2.

    A product of six real Pauli rotations (``UCCGSD_GENERATORS`` in order),
    each compiled to RX/H basis changes, at most two CNOTs and one RZ slot.
    All slots at zero give the identity.
    """
    gates: list[Gate] = []
    for slot, label in enumerate(UCCGSD_GENERATORS):
        gates += _pauli_rotation_gates(label, slot)
    return Circuit(0, 2, tuple(gates))


def random_parameters(n_params: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform initial parameters in ``[-pi, pi)``."""
    return rng.uniform(-math.pi, math.pi, size=n_params)


def parameter_shift_gradient(
    loss: Callable[[np.ndarray], float], params: Sequence[float] | np.ndarray
) -> np.ndarray:
    """Exact gradient by the ``pi/2`` shift rule (``2 * n_params`` evaluations)."""
    theta = np.asarray(params, dtype=float)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        shift = np.zeros_like(theta)
        shift[j] = math.pi / 2
        grad[j] = 0.5 * (loss(theta + shift) - loss(theta - shift))
    return grad
