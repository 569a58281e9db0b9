"""Exact pure-state simulation and Pauli-string expectation values.

Qubit 0 is the least-significant bit of the amplitude index.  State
mutation happens in place (the state is exclusively owned while gates are
applied); everything else is a pure function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .circuit import Circuit, Gate, GateKind, ValidationError, require_valid

SIM_QUBIT_CAP = 25

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_H_MATRIX = np.array([[_SQRT1_2, _SQRT1_2], [_SQRT1_2, -_SQRT1_2]], dtype=np.complex128)
_S_MATRIX = np.array([[1.0, 0.0], [0.0, 1.0j]], dtype=np.complex128)


class CapacityError(ValueError):
    """Requested qubit count exceeds the configured cap."""


@dataclass
class StateVector:
    n_qubits: int
    amps: np.ndarray  # 2^n complex128 amplitudes

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))


@dataclass(frozen=True)
class PauliString:
    """Length-n word over {I, X, Y, Z} stored as x/z bitmasks."""

    n_qubits: int
    x_mask: int
    z_mask: int

    def __post_init__(self):
        top = 1 << self.n_qubits
        if not (0 <= self.x_mask < top and 0 <= self.z_mask < top):
            raise ValidationError("mask bits above qubit count")

    @classmethod
    def from_letters(cls, letters: str) -> "PauliString":
        x = z = 0
        for q, ch in enumerate(letters):
            if ch == "X":
                x |= 1 << q
            elif ch == "Z":
                z |= 1 << q
            elif ch == "Y":
                x |= 1 << q
                z |= 1 << q
            elif ch != "I":
                raise ValidationError(f"invalid Pauli letter {ch!r}")
        return cls(n_qubits=len(letters), x_mask=x, z_mask=z)

    @property
    def letters(self) -> str:
        out = []
        for q in range(self.n_qubits):
            xb = (self.x_mask >> q) & 1
            zb = (self.z_mask >> q) & 1
            out.append("IXZY"[xb + 2 * zb])
        return "".join(out)


class BlochVector(NamedTuple):
    x: float
    y: float
    z: float


def zero_state(n: int, cap: int = SIM_QUBIT_CAP) -> StateVector:
    if not 1 <= n <= cap:
        raise CapacityError(f"n={n} outside supported range [1, {cap}]")
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits=n, amps=amps)


def single_qubit_unitary(gate: Gate) -> np.ndarray:
    """2x2 matrix of a single-qubit gate (RX/RY/RZ use exp(-i theta P / 2))."""
    if gate.kind is GateKind.H:
        return _H_MATRIX
    if gate.kind is GateKind.S:
        return _S_MATRIX
    t = gate.angle
    c, s = math.cos(t / 2.0), math.sin(t / 2.0)
    if gate.kind is GateKind.RX:
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)
    if gate.kind is GateKind.RY:
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if gate.kind is GateKind.RZ:
        return np.array([[c - 1j * s, 0.0], [0.0, c + 1j * s]], dtype=np.complex128)
    raise ValidationError(f"{gate.kind.value} has no single-qubit matrix")


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    for q in gate.qubits:
        if not 0 <= q < state.n_qubits:
            raise ValidationError(f"qubit {q} out of range for n={state.n_qubits}")
    if gate.kind is GateKind.CNOT:
        control, target = gate.qubits
        if control == target:
            raise ValidationError("CNOT control equals target")
        kernels.apply_cnot(state.amps, control, target)
    else:
        if gate.kind in (GateKind.RX, GateKind.RY, GateKind.RZ):
            if gate.angle is None or not math.isfinite(gate.angle):
                raise ValidationError(f"{gate.kind.value} needs a finite angle")
        kernels.apply_1q(state.amps, gate.qubits[0], single_qubit_unitary(gate))
    return state


def run(circuit: Circuit, cap: int = SIM_QUBIT_CAP) -> StateVector:
    require_valid(circuit)
    state = zero_state(circuit.n_qubits, cap=cap)
    for gate in circuit.gates:
        apply_gate(state, gate)
    return state


def pauli_expectation(state: StateVector, pauli: PauliString) -> float:
    """<psi|P|psi> via bitmask phase accumulation; result certified real."""
    if pauli.n_qubits != state.n_qubits:
        raise ValidationError(
            f"Pauli string on {pauli.n_qubits} qubits, state on {state.n_qubits}"
        )
    val = kernels.pauli_expectation(state.amps, pauli.x_mask, pauli.z_mask)
    if abs(val.imag) >= 1e-10:
        raise ArithmeticError(f"non-real Pauli expectation (imag={val.imag:g})")
    return float(val.real)


def run_product_wires(circuit: Circuit) -> list[StateVector]:
    """Per-qubit 2-amplitude states of a circuit with no multi-qubit gates.

    The tensor product of the returned wires equals ``run(circuit)`` up to
    global phase; runs in O(total gates), independent of 2^n.
    """
    require_valid(circuit)
    for i, gate in enumerate(circuit.gates):
        if len(gate.qubits) != 1:
            raise ValidationError(f"gate {i} ({gate.kind.value}) is not single-qubit")
    wires = [zero_state(1) for _ in range(circuit.n_qubits)]
    for gate in circuit.gates:
        wire = wires[gate.qubits[0]]
        kernels.apply_1q(wire.amps, 0, single_qubit_unitary(gate))
    return wires


def bloch(state: StateVector) -> BlochVector:
    """(<X>, <Y>, <Z>) of a single-qubit state."""
    if state.n_qubits != 1:
        raise ValidationError(f"bloch() needs a single-qubit state, got n={state.n_qubits}")
    a0, a1 = state.amps
    x = 2.0 * (np.conj(a0) * a1).real
    y = 2.0 * (np.conj(a0) * a1).imag
    z = float(abs(a0) ** 2 - abs(a1) ** 2)
    return BlochVector(float(x), float(y), z)


def fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2; 1 means equal up to global phase."""
    if a.n_qubits != b.n_qubits:
        raise ValidationError("fidelity needs equal qubit counts")
    return float(np.abs(np.vdot(a.amps, b.amps)) ** 2)


def kron_all(wires: list[StateVector]) -> StateVector:
    """Tensor product of single-qubit wires, wire q mapped to index bit q."""
    # Amplitude index bit q comes from wire q, so wire n-1 is the leftmost
    # kron factor.
    amps = np.array([1.0 + 0.0j])
    for wire in wires:
        amps = np.kron(wire.amps, amps)
    return StateVector(n_qubits=len(wires), amps=amps)
