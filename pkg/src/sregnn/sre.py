"""Exact order-2 stabilizer Renyi entropy with strategy dispatch.

Strategies, in dispatch priority: inherit from a parent circuit extended by
a Clifford-only tail, per-wire closed form for product circuits, full 4^n
Pauli enumeration, externally supplied labels.  Values are natural-log
based and clamped at zero from below (residues beyond -1e-9 are treated as
simulator bugs, not noise).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Optional

from . import kernels
from .circuit import Circuit, GateKind, require_valid
from .sim import BlochVector, CapacityError, StateVector, bloch, run, run_product_wires

FULL_ENUM_CAP = 12

_LN2 = math.log(2.0)
_NEG_RESIDUE = 1e-9

CLIFFORD_TAIL_KINDS = frozenset({GateKind.H, GateKind.S, GateKind.CNOT})


class UnlabelableError(ValueError):
    """No labeling strategy applies to the circuit under the given policy."""


@dataclass(frozen=True)
class SreResult:
    m2: float
    method: str  # "full" | "product" | "inherited" | "external"
    n_qubits: int

    def __post_init__(self):
        if self.m2 < 0.0:
            raise ValueError(f"m2 must be nonnegative, got {self.m2}")
        if self.m2 > sre_max(self.n_qubits) + _NEG_RESIDUE:
            raise ValueError(
                f"m2={self.m2} exceeds bound {sre_max(self.n_qubits)} for n={self.n_qubits}"
            )


@dataclass(frozen=True)
class LabelPolicy:
    """How sre_of_circuit may label a circuit.

    ``parent_m2``/``parent_gate_count`` enable inheritance (the gates past
    the parent prefix must be Clifford generators); ``external`` maps
    circuit ids to externally computed values.
    """

    full_cap: int = FULL_ENUM_CAP
    parent_m2: Optional[float] = None
    parent_gate_count: Optional[int] = None
    external: Optional[Mapping[str, float]] = None


def sre_max(n: int) -> float:
    """Upper bound ln((2^n + 1) / 2) on m2 for n qubits."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return math.log((2.0**n + 1.0) / 2.0)


def _clamp(raw: float, n: int) -> float:
    if raw < -_NEG_RESIDUE:
        raise ArithmeticError(f"m2={raw} below -{_NEG_RESIDUE}; simulator bug suspected")
    return max(raw, 0.0)


def sre_full(state: StateVector, cap: int = FULL_ENUM_CAP) -> float:
    """m2 by summing Xi_P^2 over all 4^n Pauli strings."""
    n = state.n_qubits
    if n > cap:
        raise CapacityError(
            f"full enumeration capped at n={cap} (got n={n}); "
            "use the product or inherited strategies"
        )
    fourth = kernels.pauli_fourth_power_sum(state.amps)
    # sum_P (  <P>^2 / 2^n )^2 = fourth / 4^n, so m2 = n ln2 - ln(fourth).
    return _clamp(n * _LN2 - math.log(fourth), n)


def sre_single_qubit(b: BlochVector) -> float:
    """Closed form -ln((1 + x^4 + y^4 + z^4) / 2) for a pure qubit."""
    norm = math.sqrt(b.x**2 + b.y**2 + b.z**2)
    if abs(norm - 1.0) >= 1e-8:
        raise ValueError(f"Bloch vector not normalized (|b|={norm})")
    raw = -math.log((1.0 + b.x**4 + b.y**4 + b.z**4) / 2.0)
    return max(raw, 0.0)


def sre_product(circuit: Circuit) -> float:
    """m2 of a product circuit as the sum of per-wire closed forms."""
    wires = run_product_wires(circuit)
    return sum(sre_single_qubit(bloch(w)) for w in wires)


def _clifford_tail_ok(circuit: Circuit, parent_gate_count: int) -> bool:
    if not 0 <= parent_gate_count <= len(circuit.gates):
        return False
    return all(g.kind in CLIFFORD_TAIL_KINDS for g in circuit.gates[parent_gate_count:])


def sre_of_circuit(circuit: Circuit, policy: LabelPolicy = LabelPolicy()) -> SreResult:
    """Label a circuit with its m2, recording the strategy used."""
    require_valid(circuit)
    n = circuit.n_qubits
    if policy.parent_m2 is not None:
        if policy.parent_gate_count is not None and not _clifford_tail_ok(
            circuit, policy.parent_gate_count
        ):
            raise UnlabelableError(
                "inheritance requires a Clifford-only tail past the parent prefix"
            )
        return SreResult(m2=policy.parent_m2, method="inherited", n_qubits=n)
    if all(len(g.qubits) == 1 for g in circuit.gates):
        return SreResult(m2=sre_product(circuit), method="product", n_qubits=n)
    if n <= policy.full_cap:
        return SreResult(m2=sre_full(run(circuit), cap=policy.full_cap), method="full", n_qubits=n)
    if policy.external is not None and circuit.meta.id in policy.external:
        return SreResult(m2=policy.external[circuit.meta.id], method="external", n_qubits=n)
    raise UnlabelableError(
        f"no strategy for circuit {circuit.meta.id!r}: n={n} above cap "
        f"{policy.full_cap}, multi-qubit gates present, no parent or external label"
    )


def load_external_labels(path) -> dict[str, float]:
    """CSV with columns (circuit_id, m2), e.g. noisy labels computed elsewhere."""
    out: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"circuit_id", "m2"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns circuit_id, m2")
        for row in reader:
            out[row["circuit_id"]] = float(row["m2"])
    return out
