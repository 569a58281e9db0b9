"""Shared fixtures and dense-matrix oracles.

BLAS threading is pinned to one thread before numpy loads so every test,
including the bit-reproducibility ones, runs at thread count 1.
"""
import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from sregnn.circuit import Circuit, Gate, GateKind

# --- dense oracles, independent of the package's kernels --------------------

PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def dense_pauli(letters: str) -> np.ndarray:
    """Tensor product with qubit 0 as the least-significant index bit."""
    out = np.eye(1, dtype=complex)
    for ch in letters:
        out = np.kron(PAULI_1Q[ch], out)
    return out


def dense_gate_matrix(gate: Gate, n: int) -> np.ndarray:
    """Full 2^n x 2^n unitary built from scratch (no sregnn.sim reuse)."""
    import math

    if gate.kind is GateKind.CNOT:
        control, target = gate.qubits
        dim = 1 << n
        mat = np.zeros((dim, dim), dtype=complex)
        for j in range(dim):
            out = j ^ (1 << target) if (j >> control) & 1 else j
            mat[out, j] = 1.0
        return mat
    theta = gate.angle
    if gate.kind is GateKind.H:
        local = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
    elif gate.kind is GateKind.S:
        local = np.array([[1, 0], [0, 1j]], dtype=complex)
    else:
        axis = {"RX": "X", "RY": "Y", "RZ": "Z"}[gate.kind.value]
        local = (
            math.cos(theta / 2) * PAULI_1Q["I"]
            - 1j * math.sin(theta / 2) * PAULI_1Q[axis]
        )
    mat = np.eye(1, dtype=complex)
    for q in range(n):
        mat = np.kron(local if q == gate.qubits[0] else PAULI_1Q["I"], mat)
    return mat


def dense_run(circuit: Circuit) -> np.ndarray:
    state = np.zeros(1 << circuit.n_qubits, dtype=complex)
    state[0] = 1.0
    for gate in circuit.gates:
        state = dense_gate_matrix(gate, circuit.n_qubits) @ state
    return state


def dense_sre_m2(state: np.ndarray) -> float:
    """Brute-force m2 via dense Pauli matrices over all 4^n strings."""
    import itertools
    import math

    n = int(np.log2(state.size))
    total = 0.0
    for letters in itertools.product("IXYZ", repeat=n):
        p = dense_pauli("".join(letters))
        exp = np.vdot(state, p @ state).real
        total += (exp**2 / 2**n) ** 2
    return -math.log(total) - n * math.log(2)


def random_state(n: int, rng: np.random.Generator) -> np.ndarray:
    amps = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return amps / np.linalg.norm(amps)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
