import io
import math

import numpy as np
import pytest

from sregnn.circuit import GateKind, serialize, validate
from sregnn.datasets import (
    GenConfig,
    dataset_manifest,
    derive_cs,
    derive_es,
    gen_ps_circuit,
    gen_rqc,
    gen_tim,
    gen_tim_record,
    generate_ps_cell,
    generate_ps_dataset,
    generate_rqc_dataset,
    generate_tim_dataset,
    derive_cs_dataset,
    derive_es_dataset,
    record_rng,
    sre_threshold_labels,
)
from sregnn.sim import run
from sregnn.sre import sre_full, sre_max, sre_product

CFG = GenConfig(master_seed=11, qubits=(2, 3), per_cell=5)


def _dump(records):
    buf = io.StringIO()
    serialize(records, buf)
    return buf.getvalue()


class TestPsGeneration:
    def test_stabilizer_label_sound(self):
        for i in range(20):
            rec = gen_ps_circuit(3, 0, record_rng(0, "PS", "q3:l0", i), CFG)
            assert rec.stab == 0 and rec.m2 < 1e-9
            assert validate(rec.circuit) == []

    def test_magic_label_sound_and_in_range(self):
        lo, hi = CFG.gate_count_range
        for i in range(20):
            rec = gen_ps_circuit(3, 1, record_rng(0, "PS", "q3:l1", i), CFG)
            assert rec.stab == 1 and rec.m2 > 0
            assert lo <= len(rec.circuit.gates) <= hi
            assert rec.circuit.meta.r_m is not None

    def test_rotations_only(self):
        for label in (0, 1):
            rec = gen_ps_circuit(4, label, record_rng(3, "PS", f"q4:l{label}", 0), CFG)
            kinds = {g.kind for g in rec.circuit.gates}
            assert kinds <= {GateKind.RX, GateKind.RY, GateKind.RZ}

    def test_determinism(self):
        a = gen_ps_circuit(2, 1, record_rng(9, "PS", "q2:l1", 4), CFG)
        b = gen_ps_circuit(2, 1, record_rng(9, "PS", "q2:l1", 4), CFG)
        assert a == b

    def test_gate_count_pinned_even_with_h_draws(self):
        # H draws expand to two rotations; stored count stays the sampled G
        lo, hi = CFG.gate_count_range
        for i in range(50):
            rec = gen_ps_circuit(2, 0, record_rng(1, "PS", "q2:l0", i), CFG)
            assert lo <= len(rec.circuit.gates) <= hi

    def test_product_m2_matches_full_enumeration(self):
        for i in range(10):
            rec = gen_ps_circuit(3, 1, record_rng(7, "PS", "q3:l1", i), CFG)
            assert rec.m2 == pytest.approx(sre_full(run(rec.circuit)), abs=1e-9)


class TestCsDerivation:
    def _parent(self, n=3, label=1, i=0):
        rec = gen_ps_circuit(n, label, record_rng(5, "PS", f"q{n}:l{label}", i), CFG)
        return rec

    def test_25_records_with_cumulative_depths(self):
        parent = self._parent()
        out = derive_cs(parent, record_rng(5, "CS", parent.circuit.meta.id, 0), CFG)
        assert len(out) == 25
        parent_len = len(parent.circuit.gates)
        for k, rec in enumerate(out, start=1):
            assert rec.circuit.meta.clifford_depth == k
            assert len(rec.circuit.gates) == parent_len + k
            assert rec.circuit.meta.parent_id == parent.circuit.meta.id
            assert validate(rec.circuit) == []

    def test_prefix_structure(self):
        parent = self._parent()
        out = derive_cs(parent, record_rng(5, "CS", parent.circuit.meta.id, 0), CFG)
        full = out[-1].circuit.gates
        for k, rec in enumerate(out, start=1):
            assert rec.circuit.gates == full[: len(parent.circuit.gates) + k]

    def test_labels_inherited_and_clifford_invariant(self):
        parent = self._parent()
        out = derive_cs(parent, record_rng(5, "CS", parent.circuit.meta.id, 0), CFG)
        for rec in out[:5]:
            assert rec.stab == parent.stab
            assert rec.m2 == parent.m2 and rec.m2_src == "inherited"
            # the inherited value really is invariant
            assert sre_full(run(rec.circuit)) == pytest.approx(parent.m2, abs=1e-9)

    def test_tail_alphabet(self):
        parent = self._parent()
        out = derive_cs(parent, record_rng(5, "CS", parent.circuit.meta.id, 0), CFG)
        tail = out[-1].circuit.gates[len(parent.circuit.gates):]
        assert {g.kind for g in tail} <= {GateKind.H, GateKind.S, GateKind.CNOT}

    def test_single_qubit_tail_excludes_cnot(self):
        parent = gen_ps_circuit(1, 1, record_rng(5, "PS", "q1:l1", 0), CFG)
        out = derive_cs(parent, record_rng(5, "CS", "p", 0), CFG)
        tail = out[-1].circuit.gates[len(parent.circuit.gates):]
        assert {g.kind for g in tail} <= {GateKind.H, GateKind.S}

    def test_independent_tails_flag(self):
        parent = self._parent()
        cfg = GenConfig(master_seed=11, qubits=(2, 3), per_cell=5, cs_independent_tails=True)
        out = derive_cs(parent, record_rng(5, "CS", "p", 0), cfg)
        parent_len = len(parent.circuit.gates)
        prefixes = {rec.circuit.gates[parent_len : parent_len + 1] for rec in out}
        assert len(prefixes) > 1  # depth-1 prefixes differ across depths


class TestEsDerivation:
    def _parent(self, n=3, label=0):
        return gen_ps_circuit(n, label, record_rng(6, "PS", f"q{n}:l{label}", 0), CFG)

    def test_cnot_injection_counts(self):
        parent = self._parent()
        rec = derive_es(parent, record_rng(6, "ES", "p", 0), CFG)
        added = len(rec.circuit.gates) - len(parent.circuit.gates)
        assert 1 <= added <= 20
        cnots = [g for g in rec.circuit.gates if g.kind is GateKind.CNOT]
        assert len(cnots) == added

    def test_controls_have_prior_gate(self):
        parent = self._parent()
        rec = derive_es(parent, record_rng(6, "ES", "p", 0), CFG)
        seen: set[int] = set()
        for g in rec.circuit.gates:
            if g.kind is GateKind.CNOT:
                assert g.qubits[0] in seen
            seen.update(g.qubits)

    def test_stabilizer_parent_stays_stabilizer(self):
        parent = self._parent(label=0)
        rec = derive_es(parent, record_rng(6, "ES", "p", 0), CFG)
        assert rec.stab == 0
        assert rec.m2 is not None and rec.m2 < 1e-9 and rec.m2_src == "full"

    def test_m2_absent_above_cap(self):
        cfg = GenConfig(master_seed=11, qubits=(2,), per_cell=1, full_cap=2)
        parent = self._parent(n=3)
        rec = derive_es(parent, record_rng(6, "ES", "p", 0), cfg)
        assert rec.m2 is None and rec.m2_src is None
        assert rec.stab == parent.stab


class TestRqc:
    def test_empty_circuit_possible_and_zero(self):
        cfg = GenConfig(master_seed=11, qubits=(2,), per_cell=1, rqc_gate_range=(0, 0))
        rec = gen_rqc(2, record_rng(11, "RQC", "q2", 0), cfg)
        assert len(rec.circuit.gates) == 0
        assert rec.m2 == 0.0

    def test_records_labeled_and_bounded(self):
        for i in range(10):
            rec = gen_rqc(3, record_rng(11, "RQC", "q3", i), CFG)
            assert rec.m2 is not None and rec.m2_src == "full"
            assert 0 <= rec.m2 <= sre_max(3) + 1e-9
            assert validate(rec.circuit) == []

    def test_gate_alphabet(self):
        rec = gen_rqc(4, record_rng(11, "RQC", "q4", 3), CFG)
        assert {g.kind for g in rec.circuit.gates} <= {
            GateKind.CNOT, GateKind.RX, GateKind.RY, GateKind.RZ,
        }

    def test_m2_rises_then_saturates_below_max(self):
        # mean m2 of deep circuits approaches but respects the bound
        cfg = GenConfig(master_seed=2, qubits=(3,), per_cell=1, rqc_gate_range=(60, 100))
        deep = [gen_rqc(3, record_rng(2, "RQC", "q3", i), cfg).m2 for i in range(25)]
        cfg_shallow = GenConfig(master_seed=2, qubits=(3,), per_cell=1, rqc_gate_range=(1, 8))
        shallow = [gen_rqc(3, record_rng(3, "RQC", "q3", i), cfg_shallow).m2 for i in range(25)]
        assert np.mean(deep) > np.mean(shallow)
        assert max(deep) <= sre_max(3) + 1e-9


class TestTim:
    def test_structure_n2_one_step(self):
        theta, phi = 0.3, 0.8
        c = gen_tim(2, 1, theta, phi)
        kinds = [g.kind for g in c.gates]
        assert kinds == [GateKind.CNOT, GateKind.RZ, GateKind.CNOT, GateKind.RX, GateKind.RX]
        assert c.gates[1].qubits == (1,) and c.gates[1].angle == pytest.approx(2 * theta)
        assert c.gates[3].angle == pytest.approx(2 * phi)
        assert c.gates[0].qubits == (0, 1)

    def test_gate_count_formula(self):
        # steps*(3(n-1)+n): 5 steps of 15 interaction + 6 field gates
        c = gen_tim(6, 5, 0.1, 0.2)
        assert len(c.gates) == 5 * (3 * 5 + 6) == 105
        c = gen_tim(2, 1, 0.1, 0.2)
        assert len(c.gates) == 1 * (3 * 1 + 2) == 5

    def test_clifford_angles_give_zero_m2(self):
        c = gen_tim(3, 2, math.pi / 4, math.pi / 4)  # rotations become pi/2
        assert sre_full(run(c)) == pytest.approx(0.0, abs=1e-9)

    def test_record_metadata(self):
        rec = gen_tim_record(3, record_rng(4, "TIM", "q3", 0), CFG)
        t = rec.circuit.meta.trotter
        assert t is not None and 1 <= t.steps <= 5
        assert t.j == t.theta and t.h == t.phi
        assert rec.m2 is not None


class TestThresholdLabels:
    def test_even_count_midpoint(self):
        from sregnn.circuit import Circuit, CircuitMeta, DatasetRecord

        records = [
            DatasetRecord(
                circuit=Circuit(1, (), CircuitMeta(id=f"r{i}", family="PS")),
                stab=1,
                m2=v,
                m2_src="product",
            )
            for i, v in enumerate([0.1, 0.5, 0.9, 1.3])
        ]
        split, labeled = sre_threshold_labels(records)
        assert split.threshold_m2 == pytest.approx(0.7)
        assert [r.cls_sre for r in labeled] == [0, 0, 1, 1]
        assert (split.count_low, split.count_high) == (2, 2)

    def test_stabilizers_removed_first(self):
        records = generate_ps_cell(CFG, 2, 0) + generate_ps_cell(CFG, 2, 1)
        split, labeled = sre_threshold_labels(records)
        assert all(r.stab == 1 for r in labeled)
        assert abs(split.count_low - split.count_high) <= 1

    def test_degenerate_all_equal_warns(self):
        from sregnn.circuit import Circuit, CircuitMeta, DatasetRecord

        records = [
            DatasetRecord(
                circuit=Circuit(1, (), CircuitMeta(id=f"r{i}", family="PS")),
                stab=1,
                m2=0.5,
                m2_src="product",
            )
            for i in range(4)
        ]
        with pytest.warns(UserWarning, match="degenerate"):
            split, labeled = sre_threshold_labels(records)
        assert all(r.cls_sre == 0 for r in labeled)

    def test_balance_on_generated_data(self):
        records = generate_ps_dataset(CFG)
        split, labeled = sre_threshold_labels(records)
        assert abs(split.count_low - split.count_high) <= 1


class TestDeterminismAndManifest:
    def test_full_dataset_bytes_reproducible(self):
        a = _dump(generate_ps_dataset(CFG))
        b = _dump(generate_ps_dataset(CFG))
        assert a == b

    def test_cell_regeneration_matches_slice(self):
        full = generate_ps_dataset(CFG)
        cell = generate_ps_cell(CFG, 3, 1)
        subset = [r for r in full if r.circuit.n_qubits == 3 and r.stab == 1]
        assert _dump(cell) == _dump(subset)

    def test_derived_families_order_independent(self):
        parents = generate_ps_cell(CFG, 2, 1)
        all_cs = derive_cs_dataset(parents, CFG)
        one = derive_cs_dataset([parents[3]], CFG)
        assert _dump(all_cs[3 * 25 : 4 * 25]) == _dump(one)
        all_es = derive_es_dataset(parents, CFG)
        one_es = derive_es_dataset([parents[2]], CFG)
        assert _dump([all_es[2]]) == _dump(one_es)

    def test_rqc_tim_reproducible(self):
        assert _dump(generate_rqc_dataset(CFG)) == _dump(generate_rqc_dataset(CFG))
        assert _dump(generate_tim_dataset(CFG)) == _dump(generate_tim_dataset(CFG))

    def test_manifest_contents(self):
        records = generate_ps_dataset(CFG)
        manifest = dataset_manifest("PS", CFG, records)
        assert manifest["family"] == "PS"
        assert manifest["n_records"] == len(records)
        assert manifest["counts_per_cell"]["q2:l0"] == CFG.per_cell
        assert set(manifest["m2_stats_per_qubit"]) == {"2", "3"}
        for stats in manifest["m2_stats_per_qubit"].values():
            assert stats["min"] <= stats["median"] <= stats["max"]

    def test_label_soundness_across_families(self):
        parents = generate_ps_dataset(CFG)
        cs = derive_cs_dataset(parents[:4], CFG)
        es = derive_es_dataset(parents[:4], CFG)
        for rec in parents + cs + es:
            if rec.m2 is None:
                continue
            assert rec.m2 <= sre_max(rec.circuit.n_qubits) + 1e-9
            if rec.stab == 0:
                assert rec.m2 < 1e-9
            if rec.stab == 1 and rec.circuit.meta.family == "PS":
                assert rec.m2 > 0

    def test_config_validation(self):
        with pytest.raises(ValueError, match="per_cell"):
            GenConfig(per_cell=0)
        with pytest.raises(ValueError, match="qubits"):
            GenConfig(qubits=())
        with pytest.raises(ValueError, match="empty"):
            GenConfig(gate_count_range=(5, 2))
