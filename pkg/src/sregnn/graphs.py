"""Circuits as attributed DAGs plus the 152-dim global gate-count vector.

Nodes are gates plus one INPUT and one OUTPUT node per qubit; each wire is
the time-ordered chain INPUT -> gates -> OUTPUT, and a CNOT node sits on
both of its wires.  Node features concatenate a 7-way gate-type one-hot,
acted-qubit indicators, and (optionally) a 7-value hardware-calibration
block.  Rotation angles enter only through the global vector, discretized
into fifty bins per rotation axis.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Mapping, Optional, Sequence

import numpy as np

from .circuit import (
    Circuit,
    DatasetRecord,
    GateKind,
    ValidationError,
    canonicalize,
    require_valid,
)

# One-hot order follows the node-type vocabulary: input, output, CNOT, H,
# RX, RY, RZ.  S never reaches the encoder (canonicalized away).
NODE_TYPE_ORDER = (
    GateKind.INPUT,
    GateKind.OUTPUT,
    GateKind.CNOT,
    GateKind.H,
    GateKind.RX,
    GateKind.RY,
    GateKind.RZ,
)
_TYPE_INDEX = {kind: i for i, kind in enumerate(NODE_TYPE_ORDER)}

GLOBAL_DIM = 152
N_ANGLE_BINS = 50
_TWO_PI = 2.0 * math.pi
# Global vector layout: [0]=CNOT, [1]=H, then 50 bins each for RX, RY, RZ.
_GLOBAL_BASE = {GateKind.RX: 2, GateKind.RY: 52, GateKind.RZ: 102}


@dataclass(frozen=True)
class FeatureLayout:
    d_gate: int = 7
    d_qubit: int = 25
    d_hw: int = 0
    d_angle: int = 0

    @property
    def d(self) -> int:
        return self.d_gate + self.d_qubit + self.d_hw + self.d_angle


@dataclass(frozen=True)
class QubitCalibration:
    t1: float  # seconds
    t2: float  # seconds
    readout_err: float


@dataclass(frozen=True)
class CalibrationTable:
    qubits: tuple[QubitCalibration, ...]
    gate_errors: Mapping[GateKind, float]

    def __post_init__(self):
        for i, q in enumerate(self.qubits):
            if q.t1 <= 0 or q.t2 <= 0:
                raise ValidationError(f"qubit {i}: t1/t2 must be positive")
            if not 0.0 <= q.readout_err <= 1.0:
                raise ValidationError(f"qubit {i}: readout error outside [0,1]")
        for kind, err in self.gate_errors.items():
            if not 0.0 <= err <= 1.0:
                raise ValidationError(f"{kind.value}: gate error outside [0,1]")

    @property
    def max_t1(self) -> float:
        return max(q.t1 for q in self.qubits)

    @classmethod
    def from_dict(cls, obj: dict) -> "CalibrationTable":
        qubits = tuple(
            QubitCalibration(
                t1=float(q["t1_us"]) * 1e-6,
                t2=float(q["t2_us"]) * 1e-6,
                readout_err=float(q["readout"]),
            )
            for q in obj["qubits"]
        )
        errors = {GateKind(k): float(v) for k, v in obj.get("gate_errors", {}).items()}
        return cls(qubits=qubits, gate_errors=errors)

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class CircuitGraph:
    node_features: np.ndarray  # (N, d)
    edges: np.ndarray  # (E, 2) int32 (src, dst), sorted by (dst, src)
    global_features: np.ndarray  # (152,)
    layout: FeatureLayout
    n_qubits: int


@dataclass(frozen=True)
class DagNode:
    kind: GateKind
    qubits: tuple[int, ...]
    angle: Optional[float] = None


def build_dag(circuit: Circuit) -> tuple[list[DagNode], list[tuple[int, int]]]:
    """Wire-chained DAG; node ids are INPUTs, gates in order, then OUTPUTs."""
    require_valid(circuit)
    for i, g in enumerate(circuit.gates):
        if g.kind is GateKind.S:
            raise ValidationError(f"gate {i}: S must be canonicalized before encoding")
    n = circuit.n_qubits
    nodes = [DagNode(GateKind.INPUT, (q,)) for q in range(n)]
    edges: list[tuple[int, int]] = []
    last = list(range(n))  # most recent node on each wire
    for g in circuit.gates:
        node_id = len(nodes)
        nodes.append(DagNode(g.kind, g.qubits, g.angle))
        for q in g.qubits:
            edges.append((last[q], node_id))
            last[q] = node_id
    for q in range(n):
        node_id = len(nodes)
        nodes.append(DagNode(GateKind.OUTPUT, (q,)))
        edges.append((last[q], node_id))
    return nodes, edges


def angle_bin(theta: float) -> int:
    """Bin index in [0, 50) after normalizing theta to [0, 2 pi).

    Floor rule: exact bin boundaries land in the upper bin; the clamp
    catches the float corner where a tiny negative angle wraps to 2 pi.
    """
    if not math.isfinite(theta):
        raise ValidationError(f"non-finite angle {theta!r}")
    t = theta % _TWO_PI
    return min(int(t * N_ANGLE_BINS / _TWO_PI), N_ANGLE_BINS - 1)


def global_features(circuit: Circuit) -> np.ndarray:
    """152-vector of raw gate counts; entries sum to the gate count."""
    vec = np.zeros(GLOBAL_DIM)
    for i, g in enumerate(circuit.gates):
        if g.kind is GateKind.CNOT:
            vec[0] += 1.0
        elif g.kind is GateKind.H:
            vec[1] += 1.0
        elif g.kind in _GLOBAL_BASE:
            vec[_GLOBAL_BASE[g.kind] + angle_bin(g.angle)] += 1.0
        else:
            raise ValidationError(f"gate {i}: {g.kind.value} not encodable")
    return vec


def _hw_block(node: DagNode, calibration: CalibrationTable) -> list[float]:
    scale = calibration.max_t1
    triples = []
    for q in node.qubits[:2]:
        if q >= len(calibration.qubits):
            raise ValidationError(f"no calibration entry for qubit {q}")
        cal = calibration.qubits[q]
        triples.extend([cal.t1 / scale, cal.t2 / scale, cal.readout_err])
    while len(triples) < 6:
        triples.extend([0.0, 0.0, 0.0])
    if node.kind in (GateKind.INPUT, GateKind.OUTPUT):
        gate_err = 0.0
    else:
        if node.kind not in calibration.gate_errors:
            raise ValidationError(f"no gate error for {node.kind.value}")
        gate_err = calibration.gate_errors[node.kind]
    return triples + [gate_err]


def node_features(node: DagNode, d_q: int,
                  calibration: Optional[CalibrationTable] = None,
                  include_angle_onehot: bool = False) -> np.ndarray:
    """[gate one-hot (7)] + [qubit indicators (d_q)] + optional blocks."""
    for q in node.qubits:
        if q >= d_q:
            raise ValidationError(f"qubit {q} does not fit d_q={d_q}")
    parts = [np.zeros(len(NODE_TYPE_ORDER)), np.zeros(d_q)]
    parts[0][_TYPE_INDEX[node.kind]] = 1.0
    parts[1][list(node.qubits)] = 1.0
    if calibration is not None:
        parts.append(np.array(_hw_block(node, calibration)))
    if include_angle_onehot:
        onehot = np.zeros(N_ANGLE_BINS)
        if node.angle is not None:
            onehot[angle_bin(node.angle)] = 1.0
        parts.append(onehot)
    return np.concatenate(parts)


def encode(circuit: Circuit, d_q: int,
           calibration: Optional[CalibrationTable] = None,
           include_angle_onehot: bool = False) -> CircuitGraph:
    """Assemble DAG, node features, and global features for one circuit."""
    if circuit.n_qubits > d_q:
        raise ValidationError(f"circuit has {circuit.n_qubits} qubits, d_q={d_q}")
    nodes, edge_list = build_dag(circuit)
    layout = FeatureLayout(
        d_qubit=d_q,
        d_hw=7 if calibration is not None else 0,
        d_angle=N_ANGLE_BINS if include_angle_onehot else 0,
    )
    feats = np.zeros((len(nodes), layout.d))
    for i, node in enumerate(nodes):
        feats[i] = node_features(node, d_q, calibration, include_angle_onehot)
    edges = np.array(sorted(edge_list, key=lambda e: (e[1], e[0])), dtype=np.int32)
    edges = edges.reshape(-1, 2)
    return CircuitGraph(
        node_features=feats,
        edges=edges,
        global_features=global_features(circuit),
        layout=layout,
        n_qubits=circuit.n_qubits,
    )


# --- encoded-record container and binary cache ------------------------------


@dataclass
class EncodedRecord:
    rec_id: str
    graph: CircuitGraph
    n_qubits: int
    gate_count: int
    stab: Optional[int] = None
    m2: Optional[float] = None
    cls_sre: Optional[int] = None
    clifford_depth: Optional[int] = None
    trotter_steps: Optional[int] = None

    def axis_value(self, axis: str) -> float:
        if axis == "qubits":
            return float(self.n_qubits)
        if axis == "gate_count":
            return float(self.gate_count)
        if axis == "trotter_steps":
            if self.trotter_steps is None:
                raise ValidationError(f"record {self.rec_id!r} has no trotter metadata")
            return float(self.trotter_steps)
        raise ValidationError(f"unknown split axis {axis!r}")


def encode_record(record: DatasetRecord, d_q: int,
                  calibration: Optional[CalibrationTable] = None,
                  include_angle_onehot: bool = False) -> EncodedRecord:
    """Encode one dataset record, rewriting any S gates to RZ(pi/2) first."""
    c = canonicalize(record.circuit)
    return EncodedRecord(
        rec_id=c.meta.id,
        graph=encode(c, d_q, calibration, include_angle_onehot),
        n_qubits=c.n_qubits,
        gate_count=len(c.gates),
        stab=record.stab,
        m2=record.m2,
        cls_sre=record.cls_sre,
        clifford_depth=c.meta.clifford_depth,
        trotter_steps=c.meta.trotter.steps if c.meta.trotter else None,
    )


def encode_records(records: Sequence[DatasetRecord], d_q: int,
                   calibration: Optional[CalibrationTable] = None,
                   include_angle_onehot: bool = False) -> list[EncodedRecord]:
    return [encode_record(r, d_q, calibration, include_angle_onehot) for r in records]


_CACHE_MAGIC = b"SREGNNE1"
_OPT_NONE = -(2**31)


def _write_opt(fh: BinaryIO, value: Optional[int]) -> None:
    fh.write(struct.pack("<i", _OPT_NONE if value is None else int(value)))


def _read_opt(fh: BinaryIO) -> Optional[int]:
    (v,) = struct.unpack("<i", fh.read(4))
    return None if v == _OPT_NONE else v


def save_encoded(path, records: Sequence[EncodedRecord]) -> None:
    """Binary graph cache: magic, layout header, then per-record blocks.

    All scalars little-endian; matrices are contiguous float64/int32 dumps.
    """
    if not records:
        raise ValueError("refusing to write an empty cache")
    layout = records[0].graph.layout
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<IHHHH", len(records), layout.d_gate, layout.d_qubit,
                             layout.d_hw, layout.d_angle))
        for rec in records:
            if rec.graph.layout != layout:
                raise ValueError("all records in a cache must share one layout")
            rid = rec.rec_id.encode("utf-8")
            g = rec.graph
            fh.write(struct.pack("<H", len(rid)))
            fh.write(rid)
            fh.write(struct.pack("<IIHI", g.node_features.shape[0], g.edges.shape[0],
                                 rec.n_qubits, rec.gate_count))
            _write_opt(fh, rec.stab)
            _write_opt(fh, rec.cls_sre)
            _write_opt(fh, rec.clifford_depth)
            _write_opt(fh, rec.trotter_steps)
            has_m2 = rec.m2 is not None
            fh.write(struct.pack("<Bd", int(has_m2), rec.m2 if has_m2 else 0.0))
            fh.write(np.ascontiguousarray(g.node_features, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(g.edges, dtype="<i4").tobytes())
            fh.write(np.ascontiguousarray(g.global_features, dtype="<f8").tobytes())


def load_encoded(path) -> list[EncodedRecord]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CACHE_MAGIC:
            raise ValueError(f"{path}: not an encoded-graph cache (magic {magic!r})")
        count, d_gate, d_qubit, d_hw, d_angle = struct.unpack("<IHHHH", fh.read(12))
        layout = FeatureLayout(d_gate=d_gate, d_qubit=d_qubit, d_hw=d_hw, d_angle=d_angle)
        out = []
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            rec_id = fh.read(id_len).decode("utf-8")
            n_nodes, n_edges, n_qubits, gate_count = struct.unpack("<IIHI", fh.read(14))
            stab = _read_opt(fh)
            cls_sre = _read_opt(fh)
            depth = _read_opt(fh)
            steps = _read_opt(fh)
            has_m2, m2 = struct.unpack("<Bd", fh.read(9))
            feats = np.frombuffer(fh.read(8 * n_nodes * layout.d), dtype="<f8")
            feats = feats.reshape(n_nodes, layout.d).copy()
            edges = np.frombuffer(fh.read(4 * n_edges * 2), dtype="<i4").reshape(n_edges, 2).copy()
            glob = np.frombuffer(fh.read(8 * GLOBAL_DIM), dtype="<f8").copy()
            graph = CircuitGraph(node_features=feats, edges=edges, global_features=glob,
                                 layout=layout, n_qubits=n_qubits)
            out.append(EncodedRecord(
                rec_id=rec_id, graph=graph, n_qubits=n_qubits, gate_count=gate_count,
                stab=stab, m2=m2 if has_m2 else None, cls_sre=cls_sre,
                clifford_depth=depth, trotter_steps=steps,
            ))
        return out
