"""Seed-reproducible generation of the five labeled circuit families.

Every record's RNG is derived as sha256(master_seed, family, cell, index),
so regenerating any cell, in any order, on any thread count, yields
byte-identical records.  Families:

  PS   product states: single-qubit rotations only, balanced stab/magic
  CS   each PS parent extended by cumulative Clifford tails of depth 1..25
  ES   each PS parent injected with 1..20 randomly placed CNOTs
  RQC  unstructured circuits over {CNOT, RX, RY, RZ}
  TIM  first-order Trotterized transverse-field Ising dynamics
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .circuit import (
    Circuit,
    CircuitMeta,
    DatasetRecord,
    Gate,
    GateKind,
    TrotterParams,
)
from .sim import run
from .sre import FULL_ENUM_CAP, sre_full, sre_product

_TWO_PI = 2.0 * math.pi
_CLIFFORD_ANGLES = (
    math.pi / 2,
    -math.pi / 2,
    math.pi,
    -math.pi,
    3 * math.pi / 2,
    -3 * math.pi / 2,
)
_ROTATION_AXES = (GateKind.RX, GateKind.RY, GateKind.RZ)


@dataclass(frozen=True)
class GenConfig:
    master_seed: int = 7
    qubits: tuple[int, ...] = (2, 3, 4, 5, 6)
    per_cell: int = 100
    gate_count_range: tuple[int, int] = (10, 100)
    r_m_range: tuple[float, float] = (0.3, 1.0)
    cs_max_depth: int = 25
    cs_independent_tails: bool = False
    es_cnot_range: tuple[int, int] = (1, 20)
    rqc_gate_range: tuple[int, int] = (0, 100)
    tim_steps_range: tuple[int, int] = (1, 5)
    tim_theta_range: tuple[float, float] = (0.0, math.pi)
    tim_phi_range: tuple[float, float] = (0.0, math.pi)
    full_cap: int = FULL_ENUM_CAP

    def __post_init__(self):
        if not self.qubits:
            raise ValueError("qubits must be nonempty")
        if self.per_cell <= 0:
            raise ValueError("per_cell must be positive")
        for name in ("gate_count_range", "r_m_range", "es_cnot_range",
                     "rqc_gate_range", "tim_steps_range", "tim_theta_range",
                     "tim_phi_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {(lo, hi)}")


@dataclass(frozen=True)
class ThresholdSplit:
    threshold_m2: float
    count_low: int
    count_high: int


def record_rng(master_seed: int, family: str, cell: str, index: int) -> np.random.Generator:
    """Order-independent per-record generator."""
    key = f"{master_seed}:{family}:{cell}:{index}".encode()
    seed = int.from_bytes(hashlib.sha256(key).digest()[:8], "little")
    return np.random.Generator(np.random.PCG64(seed))


def _is_clifford_angle(theta: float, tol: float = 1e-12) -> bool:
    r = math.fmod(theta, math.pi / 2)
    if r < 0:
        r += math.pi / 2
    return r < tol or math.pi / 2 - r < tol


def _draw_clifford_element(rng: np.random.Generator, qubit: int) -> list[Gate]:
    """One uniform draw from S_S, already rewritten to rotation gates.

    Indices 0..17 are the axis/angle grid, 18 is H (two rotations), 19 is S.
    """
    pick = int(rng.integers(20))
    if pick < 18:
        axis = _ROTATION_AXES[pick // 6]
        return [Gate(axis, (qubit,), _CLIFFORD_ANGLES[pick % 6])]
    if pick == 18:
        return [Gate.rz(qubit, math.pi), Gate.ry(qubit, math.pi / 2)]
    return [Gate.rz(qubit, math.pi / 2)]


def _draw_magic_gate(rng: np.random.Generator, qubit: int) -> Gate:
    axis = _ROTATION_AXES[int(rng.integers(3))]
    while True:
        theta = float(rng.uniform(0.0, _TWO_PI))
        if not _is_clifford_angle(theta):
            return Gate(axis, (qubit,), theta)


def _ps_gates(n: int, label: int, r_m: float, total: int, rng: np.random.Generator
              ) -> tuple[list[Gate], int]:
    """Exactly ``total`` stored rotation gates; returns (gates, magic count).

    An H draw stores two rotations; with one slot left it is redrawn so the
    stored gate count stays pinned to the sampled total.
    """
    gates: list[Gate] = []
    magic = 0
    while len(gates) < total:
        qubit = int(rng.integers(n))
        if label == 1 and rng.random() < r_m:
            gates.append(_draw_magic_gate(rng, qubit))
            magic += 1
            continue
        while True:
            drawn = _draw_clifford_element(rng, qubit)
            if len(gates) + len(drawn) <= total:
                gates.extend(drawn)
                break
    return gates, magic


def gen_ps_circuit(n: int, label: int, rng: np.random.Generator,
                   config: GenConfig = GenConfig(), rec_id: str = "") -> DatasetRecord:
    """One product-state record; label 0 = stabilizer, 1 = magic.

    Magic circuits are resampled until m2 is strictly positive: a lone
    non-Clifford RZ acting on a Z-eigenstate wire injects no magic, so one
    magic gate alone does not guarantee a magic state.
    """
    lo, hi = config.gate_count_range
    total = int(rng.integers(lo, hi + 1))
    while True:
        r_m = float(rng.uniform(*config.r_m_range)) if label == 1 else None
        gates, magic = _ps_gates(n, label, r_m or 0.0, total, rng)
        meta = CircuitMeta(id=rec_id, family="PS", r_m=r_m)
        circuit = Circuit(n_qubits=n, gates=tuple(gates), meta=meta)
        m2 = sre_product(circuit)
        if label == 0:
            assert m2 < 1e-9, f"stabilizer circuit with m2={m2}"
            return DatasetRecord(circuit=circuit, stab=0, m2=m2, m2_src="product")
        if magic > 0 and m2 > 1e-12:
            return DatasetRecord(circuit=circuit, stab=1, m2=m2, m2_src="product")


def _draw_cnot_pair(rng: np.random.Generator, n: int) -> tuple[int, int]:
    control = int(rng.integers(n))
    target = int(rng.integers(n - 1))
    if target >= control:
        target += 1
    return control, target


def _clifford_tail(rng: np.random.Generator, n: int, depth: int) -> list[Gate]:
    kinds = 3 if n >= 2 else 2  # CNOT excluded on one qubit
    tail = []
    for _ in range(depth):
        pick = int(rng.integers(kinds))
        if pick == 0:
            tail.append(Gate.h(int(rng.integers(n))))
        elif pick == 1:
            tail.append(Gate.s(int(rng.integers(n))))
        else:
            tail.append(Gate.cnot(*_draw_cnot_pair(rng, n)))
    return tail


def derive_cs(parent: DatasetRecord, rng: np.random.Generator,
              config: GenConfig = GenConfig()) -> list[DatasetRecord]:
    """25 Clifford-evolved records; record k appends the first k tail gates.

    One cumulative tail per parent by default (outputs are prefixes of one
    another); ``cs_independent_tails`` draws a fresh tail per depth instead.
    """
    c = parent.circuit
    depth = config.cs_max_depth
    out = []
    tail = _clifford_tail(rng, c.n_qubits, depth)
    for k in range(1, depth + 1):
        if config.cs_independent_tails and k > 1:
            tail = _clifford_tail(rng, c.n_qubits, depth)
        meta = replace(
            c.meta,
            id=f"cs-d{k:02d}-{c.meta.id}",
            family="CS",
            parent_id=c.meta.id,
            clifford_depth=k,
        )
        child = Circuit(n_qubits=c.n_qubits, gates=c.gates + tuple(tail[:k]), meta=meta)
        out.append(
            DatasetRecord(
                circuit=child,
                stab=parent.stab,
                m2=parent.m2,
                m2_src="inherited" if parent.m2 is not None else None,
                cls_sre=parent.cls_sre,
            )
        )
    return out


def derive_es(parent: DatasetRecord, rng: np.random.Generator,
              config: GenConfig = GenConfig()) -> DatasetRecord:
    """Inject 1..20 CNOTs at random positions; controls need a prior gate."""
    c = parent.circuit
    n = c.n_qubits
    if n < 2:
        raise ValueError("ES derivation needs n >= 2")
    gates = list(c.gates)
    lo, hi = config.es_cnot_range
    for _ in range(int(rng.integers(lo, hi + 1))):
        placed = False
        for _pos_try in range(200):
            pos = int(rng.integers(len(gates) + 1))
            touched = {q for g in gates[:pos] for q in g.qubits}
            if not touched:
                continue
            for _pair_try in range(1000):
                control, target = _draw_cnot_pair(rng, n)
                if control in touched:
                    gates.insert(pos, Gate.cnot(control, target))
                    placed = True
                    break
            if placed:
                break
        if not placed:
            raise RuntimeError(f"no eligible CNOT placement found for {c.meta.id}")
    meta = replace(c.meta, id=f"es-{c.meta.id}", family="ES", parent_id=c.meta.id)
    child = Circuit(n_qubits=n, gates=tuple(gates), meta=meta)
    m2 = m2_src = None
    if n <= config.full_cap:
        m2 = sre_full(run(child), cap=config.full_cap)
        m2_src = "full"
    return DatasetRecord(circuit=child, stab=parent.stab, m2=m2, m2_src=m2_src)


def gen_rqc(n: int, rng: np.random.Generator, config: GenConfig = GenConfig(),
            rec_id: str = "") -> DatasetRecord:
    """Unstructured circuit over {CNOT, RX, RY, RZ}, exact m2 label."""
    if n < 2:
        raise ValueError("RQC needs n >= 2")
    lo, hi = config.rqc_gate_range
    gates = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        pick = int(rng.integers(4))
        if pick == 0:
            gates.append(Gate.cnot(*_draw_cnot_pair(rng, n)))
        else:
            axis = _ROTATION_AXES[pick - 1]
            qubit = int(rng.integers(n))
            gates.append(Gate(axis, (qubit,), float(rng.uniform(0.0, _TWO_PI))))
    circuit = Circuit(n_qubits=n, gates=tuple(gates), meta=CircuitMeta(id=rec_id, family="RQC"))
    m2 = sre_full(run(circuit), cap=config.full_cap)
    return DatasetRecord(circuit=circuit, m2=m2, m2_src="full")


def gen_tim(n: int, steps: int, theta: float, phi: float, rec_id: str = "") -> Circuit:
    """First-order Trotter circuit: per step, ZZ blocks then RX on every qubit.

    The ZZ interaction exp(-i theta Z_i Z_{i+1}) is CNOT - RZ(2 theta) -
    CNOT on each neighbor pair; the field term is RX(2 phi) per qubit.
    Total gate count is steps * (3(n-1) + n).
    """
    if n < 2:
        raise ValueError("TIM needs n >= 2")
    gates = []
    for _ in range(steps):
        for i in range(n - 1):
            gates.append(Gate.cnot(i, i + 1))
            gates.append(Gate.rz(i + 1, 2.0 * theta))
            gates.append(Gate.cnot(i, i + 1))
        for q in range(n):
            gates.append(Gate.rx(q, 2.0 * phi))
    meta = CircuitMeta(
        id=rec_id,
        family="TIM",
        trotter=TrotterParams(steps=steps, theta=theta, phi=phi, j=theta, h=phi),
    )
    return Circuit(n_qubits=n, gates=tuple(gates), meta=meta)


def gen_tim_record(n: int, rng: np.random.Generator, config: GenConfig = GenConfig(),
                   rec_id: str = "") -> DatasetRecord:
    lo, hi = config.tim_steps_range
    steps = int(rng.integers(lo, hi + 1))
    theta = float(rng.uniform(*config.tim_theta_range))
    phi = float(rng.uniform(*config.tim_phi_range))
    circuit = gen_tim(n, steps, theta, phi, rec_id=rec_id)
    m2 = sre_full(run(circuit), cap=config.full_cap)
    return DatasetRecord(circuit=circuit, m2=m2, m2_src="full")


def sre_threshold_labels(records: Sequence[DatasetRecord]
                         ) -> tuple[ThresholdSplit, list[DatasetRecord]]:
    """Median-threshold low/high labels over the magic records.

    Stabilizer records are dropped first; every survivor needs an m2 value.
    Records exactly at the threshold go to the low class, which keeps the
    two classes balanced within one record for distinct central values.
    """
    kept = [r for r in records if r.stab != 0]
    if not kept:
        raise ValueError("no records left after removing stabilizer circuits")
    for r in kept:
        if r.m2 is None:
            raise ValueError(f"record {r.circuit.meta.id!r} has no m2 value")
    values = np.array([r.m2 for r in kept])
    threshold = float(np.median(values))
    if np.all(values == values[0]):
        warnings.warn("degenerate m2 distribution: all values equal the threshold")
    labeled = [replace(r, cls_sre=int(r.m2 > threshold)) for r in kept]
    high = sum(r.cls_sre for r in labeled)
    split = ThresholdSplit(threshold_m2=threshold, count_low=len(labeled) - high,
                           count_high=high)
    if abs(split.count_low - split.count_high) > 1:
        warnings.warn(
            f"threshold classes unbalanced: {split.count_low} low vs {split.count_high} high"
        )
    return split, labeled


# --- whole-dataset assembly -------------------------------------------------


def generate_ps_cell(config: GenConfig, n: int, label: int) -> list[DatasetRecord]:
    cell = f"q{n}:l{label}"
    out = []
    for i in range(config.per_cell):
        rng = record_rng(config.master_seed, "PS", cell, i)
        rec_id = f"ps-q{n}-l{label}-{i:05d}"
        out.append(gen_ps_circuit(n, label, rng, config, rec_id=rec_id))
    return out


def generate_ps_dataset(config: GenConfig) -> list[DatasetRecord]:
    out = []
    for n in config.qubits:
        for label in (0, 1):
            out.extend(generate_ps_cell(config, n, label))
    return out


def derive_cs_dataset(parents: Iterable[DatasetRecord], config: GenConfig) -> list[DatasetRecord]:
    out = []
    for parent in parents:
        rng = record_rng(config.master_seed, "CS", parent.circuit.meta.id, 0)
        out.extend(derive_cs(parent, rng, config))
    return out


def derive_es_dataset(parents: Iterable[DatasetRecord], config: GenConfig) -> list[DatasetRecord]:
    out = []
    for parent in parents:
        if parent.circuit.n_qubits < 2:
            continue
        rng = record_rng(config.master_seed, "ES", parent.circuit.meta.id, 0)
        out.append(derive_es(parent, rng, config))
    return out


def generate_rqc_dataset(config: GenConfig) -> list[DatasetRecord]:
    out = []
    for n in config.qubits:
        for i in range(config.per_cell):
            rng = record_rng(config.master_seed, "RQC", f"q{n}", i)
            out.append(gen_rqc(n, rng, config, rec_id=f"rqc-q{n}-{i:05d}"))
    return out


def generate_tim_dataset(config: GenConfig) -> list[DatasetRecord]:
    out = []
    for n in config.qubits:
        for i in range(config.per_cell):
            rng = record_rng(config.master_seed, "TIM", f"q{n}", i)
            out.append(gen_tim_record(n, rng, config, rec_id=f"tim-q{n}-{i:05d}"))
    return out


def generate_family(family: str, config: GenConfig,
                    parents: Optional[Sequence[DatasetRecord]] = None) -> list[DatasetRecord]:
    if family == "PS":
        return generate_ps_dataset(config)
    if family == "RQC":
        return generate_rqc_dataset(config)
    if family == "TIM":
        return generate_tim_dataset(config)
    if family in ("CS", "ES"):
        if parents is None:
            raise ValueError(f"family {family} needs parent PS records")
        derive = derive_cs_dataset if family == "CS" else derive_es_dataset
        return derive(parents, config)
    raise ValueError(f"unknown family {family!r}")


def dataset_manifest(family: str, config: GenConfig, records: Sequence[DatasetRecord],
                     threshold: Optional[ThresholdSplit] = None) -> dict:
    counts: dict[str, int] = {}
    by_qubit: dict[int, list[float]] = {}
    for rec in records:
        n = rec.circuit.n_qubits
        cell = f"q{n}" if rec.stab is None else f"q{n}:l{rec.stab}"
        counts[cell] = counts.get(cell, 0) + 1
        if rec.m2 is not None:
            by_qubit.setdefault(n, []).append(rec.m2)
    stats = {
        str(n): {
            "min": float(np.min(v)),
            "median": float(np.median(v)),
            "max": float(np.max(v)),
            "labeled": len(v),
        }
        for n, v in sorted(by_qubit.items())
    }
    manifest = {
        "format_version": 1,
        "family": family,
        "master_seed": config.master_seed,
        "config": asdict(config),
        "kernel_backend": kernels.BACKEND,
        "n_records": len(records),
        "counts_per_cell": dict(sorted(counts.items())),
        "m2_stats_per_qubit": stats,
    }
    if threshold is not None:
        manifest["threshold_m2"] = threshold.threshold_m2
        manifest["threshold_counts"] = {
            "low": threshold.count_low,
            "high": threshold.count_high,
        }
    return manifest
