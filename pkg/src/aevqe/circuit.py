"""Circuit intermediate representation, parameter binding and text serialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .qsim import N_ANGLES, Gate


@dataclass(frozen=True)
class Circuit:
    """An ordered gate list over an ancilla + physical register.

    Ancillas occupy qubits ``0..n_ancilla-1`` and physical qubits follow.
    Parameterized gates carry one slot per angle role; slots are numbered
    densely from zero and each is used exactly once.

    Attributes:
        n_ancilla: Number of ancilla qubits.
        n_physical: Number of physical qubits.
        gates: The instructions, applied first to last.
    """

    n_ancilla: int
    n_physical: int
    gates: tuple[Gate, ...] = ()
    param_slots: dict[int, tuple[int, int]] = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.n_ancilla < 0 or self.n_physical < 0:
            raise ValueError("register sizes must be non-negative")
        object.__setattr__(self, "gates", tuple(self.gates))
        slots: dict[int, tuple[int, int]] = {}
        for pos, gate in enumerate(self.gates):
            if any(t >= self.n_qubits for t in gate.targets):
                raise ValueError(f"gate {pos} ({gate.kind}) targets {gate.targets} out of range")
            for role, slot in enumerate(gate.slots or ()):
                if slot in slots:
                    raise ValueError(f"slot {slot} used twice")
                slots[slot] = (pos, role)
        if sorted(slots) != list(range(len(slots))):
            raise ValueError("parameter slots must be numbered 0..P-1")
        object.__setattr__(self, "param_slots", slots)

    @property
    def n_qubits(self) -> int:
        return self.n_ancilla + self.n_physical

    @property
    def n_params(self) -> int:
        return len(self.param_slots)

    @property
    def is_bound(self) -> bool:
        return all(g.is_bound for g in self.gates)

    @property
    def physical_qubits(self) -> range:
        return range(self.n_ancilla, self.n_qubits)

    def __add__(self, other: Circuit) -> Circuit:
        """Concatenates two circuits on the same register; the right slots are renumbered."""
        if (self.n_ancilla, self.n_physical) != (other.n_ancilla, other.n_physical):
            raise ValueError("cannot concatenate circuits on different registers")
        return Circuit(self.n_ancilla, self.n_physical, self.gates + _shift_slots(other.gates, self.n_params))

    def embed(self, n_ancilla: int) -> Circuit:
        """Places a purely physical circuit behind ``n_ancilla`` ancilla qubits."""
        if self.n_ancilla:
            raise ValueError("only ancilla-free circuits can be embedded")
        gates = tuple(
            Gate(g.kind, tuple(t + n_ancilla for t in g.targets), g.angles, g.matrix, g.slots)
            for g in self.gates
        )
        return Circuit(n_ancilla, self.n_physical, gates)

    def unbound_copy(self) -> Circuit:
        """Drops bound angles from parameterized gates, keeping their slots."""
        gates = tuple(
            Gate(g.kind, g.targets, None, g.matrix, g.slots) if g.slots is not None else g
            for g in self.gates
        )
        return Circuit(self.n_ancilla, self.n_physical, gates)


def _shift_slots(gates: Iterable[Gate], offset: int) -> tuple[Gate, ...]:
    return tuple(
        Gate(g.kind, g.targets, g.angles, g.matrix, tuple(s + offset for s in g.slots))
        if g.slots is not None
        else g
        for g in gates
    )


def bind(circuit: Circuit, params: Sequence[float] | np.ndarray) -> Circuit:
    """Returns a copy of ``circuit`` with every slot set from ``params``."""
    values = np.asarray(params, dtype=float).ravel()
    if values.shape[0] != circuit.n_params:
        raise ValueError(f"expected {circuit.n_params} parameters, got {values.shape[0]}")
    gates = tuple(
        g.with_angles([values[s] for s in g.slots]) if g.slots is not None else g
        for g in circuit.gates
    )
    return Circuit(circuit.n_ancilla, circuit.n_physical, gates)


def fixed_circuit(n_ancilla: int, n_physical: int, gates: Iterable[Gate]) -> Circuit:
    return Circuit(n_ancilla, n_physical, tuple(gates))


# --- text format ----------------------------------------------------------------
#
#   circuit n_ancilla=1 n_physical=3
#   RY 1 angle=-1.5707963267948966
#   YZZY 1,2 slot=0,1
#   UNITARY 0 matrix=re,im;re,im;...   (row-major)


def to_text(circuit: Circuit) -> str:
    lines = [f"circuit n_ancilla={circuit.n_ancilla} n_physical={circuit.n_physical}"]
    for g in circuit.gates:
        parts = [g.kind, ",".join(str(t) for t in g.targets)]
        if g.slots is not None:
            parts.append("slot=" + ",".join(str(s) for s in g.slots))
        if g.angles is not None:
            parts.append("angle=" + ",".join(repr(float(a)) for a in g.angles))
        if g.matrix is not None:
            flat = g.matrix.ravel()
            parts.append("matrix=" + ";".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in flat))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> Circuit:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("circuit"):
        raise ValueError("missing circuit header line")
    header = dict(tok.split("=") for tok in lines[0].split()[1:])
    gates = []
    for line in lines[1:]:
        fields = line.split()
        kind, targets = fields[0], tuple(int(t) for t in fields[1].split(","))
        opts = dict(tok.split("=", 1) for tok in fields[2:])
        slots = tuple(int(s) for s in opts["slot"].split(",")) if "slot" in opts else None
        angles = tuple(float(a) for a in opts["angle"].split(",")) if "angle" in opts else None
        matrix = None
        if "matrix" in opts:
            flat = [complex(*map(float, z.split(","))) for z in opts["matrix"].split(";")]
            dim = 1 << len(targets)
            matrix = np.array(flat, dtype=complex).reshape(dim, dim)
        if N_ANGLES.get(kind, 0) and angles is None and slots is None:
            raise ValueError(f"line {line!r}: parameterized gate without slot or angle")
        gates.append(Gate(kind, targets, angles, matrix, slots))
    return Circuit(int(header["n_ancilla"]), int(header["n_physical"]), tuple(gates))
