"""Circuit intermediate representation, canonicalization, validation, JSONL IO.

The circuit object is the universal input shared by the simulator, the
entropy oracles, the dataset generators, and the graph encoder.  All values
are immutable after construction; every function here is pure.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Iterable, Iterator, Optional


class GateKind(Enum):
    H = "H"
    S = "S"
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    CNOT = "CNOT"
    # Graph-only node types; never valid inside a stored circuit.
    INPUT = "INPUT"
    OUTPUT = "OUTPUT"


ROTATION_KINDS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ})
SINGLE_QUBIT_KINDS = frozenset({GateKind.H, GateKind.S}) | ROTATION_KINDS
CIRCUIT_KINDS = SINGLE_QUBIT_KINDS | {GateKind.CNOT}

FAMILIES = ("PS", "CS", "ES", "RQC", "TIM")


class ValidationError(ValueError):
    """A circuit, gate, or argument violates a structural invariant."""


class ParseError(ValueError):
    """Malformed JSONL input; message carries line number and field."""


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    qubits: tuple[int, ...]
    angle: Optional[float] = None

    @staticmethod
    def h(q: int) -> "Gate":
        return Gate(GateKind.H, (q,))

    @staticmethod
    def s(q: int) -> "Gate":
        return Gate(GateKind.S, (q,))

    @staticmethod
    def rx(q: int, angle: float) -> "Gate":
        return Gate(GateKind.RX, (q,), angle)

    @staticmethod
    def ry(q: int, angle: float) -> "Gate":
        return Gate(GateKind.RY, (q,), angle)

    @staticmethod
    def rz(q: int, angle: float) -> "Gate":
        return Gate(GateKind.RZ, (q,), angle)

    @staticmethod
    def cnot(control: int, target: int) -> "Gate":
        return Gate(GateKind.CNOT, (control, target))


@dataclass(frozen=True)
class TrotterParams:
    """Trotterized Ising metadata; dt = 1, so j = theta and h = phi."""

    steps: int
    theta: float
    phi: float
    j: float
    h: float


@dataclass(frozen=True)
class CircuitMeta:
    id: str = ""
    family: Optional[str] = None
    parent_id: Optional[str] = None
    clifford_depth: Optional[int] = None
    r_m: Optional[float] = None
    trotter: Optional[TrotterParams] = None


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...]
    meta: CircuitMeta = field(default_factory=CircuitMeta)

    def __len__(self) -> int:
        return len(self.gates)


@dataclass(frozen=True)
class GateCounts:
    counts: dict[GateKind, int]
    total: int


@dataclass(frozen=True)
class DatasetRecord:
    """A circuit plus its labels, the row type of the JSONL dataset format.

    ``m2``/``m2_src`` are the flattened entropy result (value plus the
    strategy that produced it); ``stab`` is the stabilizer/magic class and
    ``cls_sre`` the low/high threshold class.  Any label may be absent.
    """

    circuit: Circuit
    stab: Optional[int] = None
    m2: Optional[float] = None
    m2_src: Optional[str] = None
    cls_sre: Optional[int] = None


def _gate_violations(gate: Gate, index: int, n_qubits: int) -> list[str]:
    where = f"gate {index} ({gate.kind.value})"
    out = []
    if gate.kind not in CIRCUIT_KINDS:
        out.append(f"{where}: kind not allowed in stored circuits")
        return out
    arity = 2 if gate.kind is GateKind.CNOT else 1
    if len(gate.qubits) != arity:
        out.append(f"{where}: expected {arity} qubit(s), got {len(gate.qubits)}")
    for q in gate.qubits:
        if not 0 <= q < n_qubits:
            out.append(f"{where}: qubit {q} out of range for n={n_qubits}")
    if gate.kind is GateKind.CNOT and len(gate.qubits) == 2:
        if gate.qubits[0] == gate.qubits[1]:
            out.append(f"{where}: control equals target ({gate.qubits[0]})")
    if gate.kind in ROTATION_KINDS:
        if gate.angle is None:
            out.append(f"{where}: missing angle")
        elif not math.isfinite(gate.angle):
            out.append(f"{where}: non-finite angle {gate.angle!r}")
    elif gate.angle is not None:
        out.append(f"{where}: angle given for non-rotation gate")
    return out


def validate(circuit: Circuit) -> list[str]:
    """Return every invariant violation; an empty list means valid."""
    out = []
    if circuit.n_qubits < 1:
        out.append(f"n_qubits must be >= 1, got {circuit.n_qubits}")
    for i, g in enumerate(circuit.gates):
        out.extend(_gate_violations(g, i, circuit.n_qubits))
    meta = circuit.meta
    if meta.family is not None and meta.family not in FAMILIES:
        out.append(f"unknown family {meta.family!r}")
    if meta.family == "CS":
        if meta.parent_id is None:
            out.append("family=CS requires parent_id")
        if meta.clifford_depth is None or not 1 <= meta.clifford_depth <= 25:
            out.append(f"family=CS requires clifford_depth in [1,25], got {meta.clifford_depth}")
    if meta.family == "TIM" and meta.trotter is None:
        out.append("family=TIM requires trotter metadata")
    return out


def require_valid(circuit: Circuit) -> None:
    violations = validate(circuit)
    if violations:
        raise ValidationError("; ".join(violations))


_H_EXPANSION = (GateKind.RZ, math.pi), (GateKind.RY, math.pi / 2)


def canonicalize(circuit: Circuit, ps_mode: bool = False) -> Circuit:
    """Rewrite S -> RZ(pi/2), and with ``ps_mode`` also H -> RZ(pi), RY(pi/2).

    Both rewrites preserve the prepared state up to a global phase, which no
    downstream label depends on.  Idempotent; metadata and gate order are
    untouched.
    """
    gates: list[Gate] = []
    for g in circuit.gates:
        if g.kind is GateKind.S:
            gates.append(Gate.rz(g.qubits[0], math.pi / 2))
        elif g.kind is GateKind.H and ps_mode:
            q = g.qubits[0]
            gates.extend(Gate(kind, (q,), angle) for kind, angle in _H_EXPANSION)
        else:
            gates.append(g)
    return replace(circuit, gates=tuple(gates))


def gate_counts(circuit: Circuit) -> GateCounts:
    counts: dict[GateKind, int] = {}
    for g in circuit.gates:
        counts[g.kind] = counts.get(g.kind, 0) + 1
    return GateCounts(counts=counts, total=len(circuit.gates))


# --- JSONL dataset format -------------------------------------------------
#
# One object per line, UTF-8, LF endings:
#   {"id": str, "family": str, "n": int,
#    "gates": [{"k": "H|S|RX|RY|RZ|CNOT", "q": [int,...], "a": float?}],
#    "labels": {"stab": 0|1|null, "m2": float|null,
#               "m2_src": "full|product|inherited|external"|null,
#               "cls_sre": 0|1|null},
#    "meta": {...}}
#
# Floats are written as shortest round-trip decimals (<= 17 significant
# digits), so parse(serialize(r)) == r bit-exactly.

_M2_SOURCES = ("full", "product", "inherited", "external")


def record_to_json(record: DatasetRecord) -> str:
    c = record.circuit
    gates = []
    for g in c.gates:
        entry: dict = {"k": g.kind.value, "q": list(g.qubits)}
        if g.angle is not None:
            entry["a"] = g.angle
        gates.append(entry)
    meta: dict = {}
    if c.meta.parent_id is not None:
        meta["parent_id"] = c.meta.parent_id
    if c.meta.clifford_depth is not None:
        meta["clifford_depth"] = c.meta.clifford_depth
    if c.meta.r_m is not None:
        meta["r_m"] = c.meta.r_m
    if c.meta.trotter is not None:
        t = c.meta.trotter
        meta["trotter"] = {"steps": t.steps, "theta": t.theta, "phi": t.phi, "j": t.j, "h": t.h}
    obj = {
        "id": c.meta.id,
        "family": c.meta.family,
        "n": c.n_qubits,
        "gates": gates,
        "labels": {
            "stab": record.stab,
            "m2": record.m2,
            "m2_src": record.m2_src,
            "cls_sre": record.cls_sre,
        },
        "meta": meta,
    }
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _field(obj: dict, key: str, lineno: int):
    if key not in obj:
        raise ParseError(f"line {lineno}: missing field {key!r}")
    return obj[key]


def record_from_json(line: str, lineno: int = 1) -> DatasetRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"line {lineno}: expected an object")
    n = _field(obj, "n", lineno)
    if not isinstance(n, int) or n < 1:
        raise ParseError(f"line {lineno}: field 'n' must be a positive integer")
    gates = []
    for i, entry in enumerate(_field(obj, "gates", lineno)):
        kind_name = _field(entry, "k", lineno)
        try:
            kind = GateKind(kind_name)
        except ValueError:
            raise ParseError(f"line {lineno}: gate {i}: unknown gate kind {kind_name!r}") from None
        if kind not in CIRCUIT_KINDS:
            raise ParseError(f"line {lineno}: gate {i}: kind {kind_name!r} not allowed")
        qubits = tuple(_field(entry, "q", lineno))
        angle = entry.get("a")
        if angle is not None:
            angle = float(angle)
        gates.append(Gate(kind, qubits, angle))
    family = obj.get("family")
    if family is not None and family not in FAMILIES:
        raise ParseError(f"line {lineno}: unknown family {family!r}")
    raw_meta = obj.get("meta") or {}
    trotter = None
    if "trotter" in raw_meta:
        t = raw_meta["trotter"]
        trotter = TrotterParams(
            steps=int(_field(t, "steps", lineno)),
            theta=float(_field(t, "theta", lineno)),
            phi=float(_field(t, "phi", lineno)),
            j=float(_field(t, "j", lineno)),
            h=float(_field(t, "h", lineno)),
        )
    meta = CircuitMeta(
        id=str(obj.get("id", "")),
        family=family,
        parent_id=raw_meta.get("parent_id"),
        clifford_depth=raw_meta.get("clifford_depth"),
        r_m=raw_meta.get("r_m"),
        trotter=trotter,
    )
    labels = obj.get("labels") or {}
    m2_src = labels.get("m2_src")
    if m2_src is not None and m2_src not in _M2_SOURCES:
        raise ParseError(f"line {lineno}: field 'm2_src' must be one of {_M2_SOURCES}")
    circuit = Circuit(n_qubits=n, gates=tuple(gates), meta=meta)
    violations = validate(circuit)
    if violations:
        raise ParseError(f"line {lineno}: {violations[0]}")
    m2 = labels.get("m2")
    return DatasetRecord(
        circuit=circuit,
        stab=labels.get("stab"),
        m2=float(m2) if m2 is not None else None,
        m2_src=m2_src,
        cls_sre=labels.get("cls_sre"),
    )


def serialize(records: Iterable[DatasetRecord], fh: IO[str]) -> int:
    """Write records as JSONL; returns the number of lines written."""
    count = 0
    for rec in records:
        fh.write(record_to_json(rec))
        fh.write("\n")
        count += 1
    return count


def parse(fh: IO[str]) -> Iterator[DatasetRecord]:
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        yield record_from_json(line, lineno)


def write_jsonl(path, records: Iterable[DatasetRecord]) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        return serialize(records, fh)


def read_jsonl(path) -> list[DatasetRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return list(parse(fh))
