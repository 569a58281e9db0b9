"""Training loops, splits, metrics, and the evaluation protocols.

Covers the three task modes (stabilizer classification, threshold
classification, m2 regression), ratio and extrapolation splits, per-depth
accuracy curves, misclassification-vs-m2 binning, repeated seeded runs,
and the graph-branch ablation comparison.  Every reported number is
recomputable from the persisted predictions CSV.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .graphs import CircuitGraph, EncodedRecord
from .nn import (
    CLASSIFICATION,
    REGRESSION,
    GraphBatch,
    ModelConfig,
    ModelParams,
    adam_init,
    adam_step,
    build_graph_batch,
    forward,
    init_params,
    loss_and_grads,
    set_normalization,
    sigmoid,
)

TASKS = ("stab", "sre-class", "sre-reg")


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "random_ratio"  # or "extrapolation"
    ratio: float = 0.7
    axis: Optional[str] = None  # qubits | gate_count | trotter_steps
    train_bounds: Optional[tuple[float, float]] = None
    test_bounds: Optional[tuple[float, float]] = None
    stratify_by_label: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random_ratio", "extrapolation"):
            raise SplitError(f"unknown split kind {self.kind!r}")
        if self.kind == "random_ratio" and not 0.0 < self.ratio < 1.0:
            raise SplitError(f"ratio must be in (0,1), got {self.ratio}")
        if self.kind == "extrapolation":
            if self.axis is None or self.train_bounds is None or self.test_bounds is None:
                raise SplitError("extrapolation split needs axis and both bounds")
            lo_tr, hi_tr = self.train_bounds
            lo_te, hi_te = self.test_bounds
            if max(lo_tr, lo_te) <= min(hi_tr, hi_te):
                raise SplitError("extrapolation bounds overlap")


@dataclass(frozen=True)
class TrainConfig:
    task: str
    epochs: Optional[int] = None  # default: 100 classification, 200 regression
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 20
    # Train-time qubit-relabeling augmentation.  Labels are provably
    # invariant under wire permutation, and a relabeling only permutes the
    # qubit-indicator feature columns, so this multiplies the effective
    # sample count on small corpora.  Off by default; incompatible with
    # hardware-calibrated encodings, where wires are not interchangeable.
    augment_qubit_permutations: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")

    @property
    def mode(self) -> str:
        return REGRESSION if self.task == "sre-reg" else CLASSIFICATION

    @property
    def epoch_budget(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 200 if self.task == "sre-reg" else 100


@dataclass
class Metrics:
    task: str
    n: int
    loss: float
    accuracy: Optional[float] = None
    acc_class0: Optional[float] = None
    acc_class1: Optional[float] = None
    mse: Optional[float] = None

    def as_row(self) -> dict:
        return {
            "task": self.task,
            "n": self.n,
            "loss": self.loss,
            "accuracy": self.accuracy,
            "acc_class0": self.acc_class0,
            "acc_class1": self.acc_class1,
            "mse": self.mse,
        }


@dataclass
class RunAggregate:
    seeds: list[int]
    runs: list[Metrics]
    mean: dict[str, float]
    std: dict[str, float]


def target_of(record: EncodedRecord, task: str) -> float:
    if task == "stab":
        value = record.stab
    elif task == "sre-class":
        value = record.cls_sre
    else:
        value = record.m2
    if value is None:
        raise ValueError(f"record {record.rec_id!r} lacks the {task!r} label")
    return float(value)


def targets_of(records: Sequence[EncodedRecord], task: str) -> np.ndarray:
    return np.array([target_of(r, task) for r in records])


def split(records: Sequence[EncodedRecord], spec: SplitSpec,
          task: str = "stab") -> tuple[list[EncodedRecord], list[EncodedRecord]]:
    """Deterministic train/test split; extrapolation partitions by axis value."""
    if not records:
        raise SplitError("cannot split an empty record list")
    if spec.kind == "extrapolation":
        lo_tr, hi_tr = spec.train_bounds
        lo_te, hi_te = spec.test_bounds
        train = [r for r in records if lo_tr <= r.axis_value(spec.axis) <= hi_tr]
        test = [r for r in records if lo_te <= r.axis_value(spec.axis) <= hi_te]
        if not train:
            raise SplitError(f"no records in train bounds {spec.train_bounds} on {spec.axis}")
        if not test:
            raise SplitError(f"no records in test bounds {spec.test_bounds} on {spec.axis}")
        train_vals = {r.axis_value(spec.axis) for r in train}
        test_vals = {r.axis_value(spec.axis) for r in test}
        assert not train_vals & test_vals, "leaky extrapolation split"
        return train, test
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    if spec.stratify_by_label:
        groups: dict[float, list[EncodedRecord]] = {}
        for r in records:
            groups.setdefault(target_of(r, task), []).append(r)
        if len(groups) < 2:
            raise SplitError("stratified split needs both labels present")
        train: list[EncodedRecord] = []
        test: list[EncodedRecord] = []
        for key in sorted(groups):
            perm = rng.permutation(len(groups[key]))
            cut = int(round(spec.ratio * len(perm)))
            train.extend(groups[key][i] for i in perm[:cut])
            test.extend(groups[key][i] for i in perm[cut:])
    else:
        perm = rng.permutation(len(records))
        cut = int(round(spec.ratio * len(records)))
        train = [records[i] for i in perm[:cut]]
        test = [records[i] for i in perm[cut:]]
    if not train or not test:
        raise SplitError(f"ratio {spec.ratio} left an empty side for {len(records)} records")
    return train, test


def predict(params: ModelParams, records: Sequence[EncodedRecord],
            batch_size: int = 256) -> np.ndarray:
    """Raw model outputs (logits or m2 estimates), in record order."""
    outputs = []
    for i in range(0, len(records), batch_size):
        batch = build_graph_batch(records[i : i + batch_size])
        out, _ = forward(params, batch)
        outputs.append(out)
    return np.concatenate(outputs) if outputs else np.zeros(0)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i : i + batch_size]


def _permute_qubit_block(record: EncodedRecord, rng: np.random.Generator) -> EncodedRecord:
    """Relabel wires by permuting the qubit-indicator feature columns."""
    layout = record.graph.layout
    if layout.d_hw:
        raise ValueError("qubit-permutation augmentation requires calibration-free encoding")
    n = record.n_qubits
    if n < 2:
        return record
    perm = rng.permutation(n)
    feats = record.graph.node_features.copy()
    feats[:, layout.d_gate + perm] = record.graph.node_features[
        :, layout.d_gate : layout.d_gate + n
    ]
    graph = CircuitGraph(
        node_features=feats,
        edges=record.graph.edges,
        global_features=record.graph.global_features,
        layout=layout,
        n_qubits=record.graph.n_qubits,
    )
    return replace(record, graph=graph)


def train(records: Sequence[EncodedRecord], model_config: ModelConfig,
          train_config: TrainConfig,
          log: Optional[Callable[[str], None]] = None) -> tuple[ModelParams, dict]:
    """Seeded mini-batch Adam with best-validation checkpointing.

    Global-feature standardization statistics come from the full training
    side (including the carved-out validation fraction) and travel with the
    returned parameters.
    """
    if model_config.mode != train_config.mode:
        raise ValueError(
            f"model mode {model_config.mode!r} does not fit task {train_config.task!r}"
        )
    records = list(records)
    targets = targets_of(records, train_config.task)
    rng = np.random.Generator(np.random.PCG64(train_config.seed))
    params = init_params(model_config, seed=train_config.seed)
    set_normalization(params, np.stack([r.graph.global_features for r in records]))
    n_val = int(round(train_config.val_fraction * len(records)))
    perm = rng.permutation(len(records))
    val_idx, fit_idx = perm[:n_val], perm[n_val:]
    if fit_idx.size == 0:
        raise ValueError("validation fraction leaves no training records")
    fit_records = [records[i] for i in fit_idx]
    fit_targets = targets[fit_idx]
    val_batch = None
    if n_val:
        val_batch = build_graph_batch([records[i] for i in val_idx])
        val_targets = targets[val_idx]
    optimizer = adam_init(params, lr=train_config.lr)
    history: dict = {"train_loss": [], "val_loss": [], "best_epoch": 0}
    classification = model_config.mode == CLASSIFICATION
    if classification:
        history["val_accuracy"] = []
    # Selection score: regression minimizes validation loss; classification
    # maximizes validation accuracy (loss as tie-break), since BCE can keep
    # rising from overconfident errors while the decision rule still improves.
    best_score = (-math.inf, -math.inf)
    best_params = params.clone()
    stale = 0
    for epoch in range(train_config.epoch_budget):
        losses = []
        for idx in _epoch_batches(len(fit_records), train_config.batch_size, rng):
            chosen = [fit_records[i] for i in idx]
            if train_config.augment_qubit_permutations:
                chosen = [_permute_qubit_block(r, rng) for r in chosen]
            batch = build_graph_batch(chosen)
            loss, grads, _ = loss_and_grads(params, batch, fit_targets[idx])
            if not math.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch} (loss={loss})")
            adam_step(params, grads, optimizer)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        if val_batch is not None:
            out, _ = forward(params, val_batch)
            val_loss, _ = _eval_loss(out, val_targets, model_config)
        else:
            val_loss = train_loss
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        if classification:
            if val_batch is not None:
                val_acc = float(np.mean(((sigmoid(out) > 0.5)).astype(float) == val_targets))
            else:
                val_acc = -val_loss
            history["val_accuracy"].append(val_acc)
            score = (val_acc, -val_loss)
        else:
            score = (-val_loss, 0.0)
        if score > best_score:
            best_score = score
            best_params = params.clone()
            history["best_epoch"] = epoch
            stale = 0
        else:
            stale += 1
        if log:
            log(f"epoch {epoch:4d} train {train_loss:.6f} val {val_loss:.6f}")
        if stale > train_config.patience:
            break
    history["epochs_run"] = len(history["train_loss"])
    return best_params, history


def _eval_loss(outputs: np.ndarray, targets: np.ndarray, cfg: ModelConfig):
    from .nn import _loss_grad  # internal reuse; loss only

    loss, _ = _loss_grad(outputs, targets, cfg)
    return loss, outputs


def evaluate(params: ModelParams, records: Sequence[EncodedRecord], task: str,
             outputs: Optional[np.ndarray] = None) -> tuple[Metrics, np.ndarray]:
    """Metrics plus raw outputs; classification thresholds the sigmoid at 0.5."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    targets = targets_of(records, task)
    if outputs is None:
        outputs = predict(params, records)
    if task == "sre-reg":
        err = outputs - targets
        mse = float(np.mean(err**2))
        from .nn import huber_loss

        return (
            Metrics(task=task, n=len(records), loss=huber_loss(outputs, targets,
                    params.config.huber_delta), mse=mse),
            outputs,
        )
    from .nn import bce_loss

    preds = (sigmoid(outputs) > 0.5).astype(float)
    correct = preds == targets
    acc = float(np.mean(correct))
    per_class = {}
    for cls in (0.0, 1.0):
        mask = targets == cls
        per_class[cls] = float(np.mean(correct[mask])) if mask.any() else None
    return (
        Metrics(
            task=task,
            n=len(records),
            loss=bce_loss(outputs, targets),
            accuracy=acc,
            acc_class0=per_class[0.0],
            acc_class1=per_class[1.0],
        ),
        outputs,
    )


def constant_mean_baseline(train_targets: np.ndarray, eval_targets: np.ndarray) -> float:
    """MSE of predicting the training mean everywhere."""
    mean = float(np.mean(train_targets))
    return float(np.mean((eval_targets - mean) ** 2))


def majority_class_baseline(train_targets: np.ndarray, eval_targets: np.ndarray) -> float:
    """Accuracy of predicting the training majority class everywhere."""
    majority = 1.0 if np.mean(train_targets) >= 0.5 else 0.0
    return float(np.mean(eval_targets == majority))


def clifford_depth_curve(params: ModelParams, records: Sequence[EncodedRecord],
                         task: str = "stab") -> list[dict]:
    """Per-class accuracy grouped by Clifford depth; one row per (depth, class)."""
    for r in records:
        if r.clifford_depth is None:
            raise ValueError(f"record {r.rec_id!r} has no clifford_depth")
    outputs = predict(params, records)
    preds = (sigmoid(outputs) > 0.5).astype(float)
    targets = targets_of(records, task)
    depths = np.array([r.clifford_depth for r in records])
    rows = []
    for depth in sorted(set(depths.tolist())):
        sel = depths == depth
        for cls in (0, 1):
            mask = sel & (targets == cls)
            count = int(mask.sum())
            acc = float(np.mean(preds[mask] == cls)) if count else None
            rows.append({"depth": int(depth), "class": cls, "accuracy": acc, "count": count})
    return rows


@dataclass
class BinAnalysis:
    edges: np.ndarray  # (bins+1,)
    counts: np.ndarray  # records per bin
    miscounts: np.ndarray  # misclassified per bin
    ratios: list[Optional[float]]  # None for empty bins
    median_all: float
    median_misclassified: Optional[float]


def m2_bin_analysis(params: ModelParams, records: Sequence[EncodedRecord],
                    task: str, bins: int = 30,
                    value_range: Optional[tuple[float, float]] = (0.0, 0.24),
                    density: bool = True) -> BinAnalysis:
    """Misclassification ratio across m2 bins.

    ``density`` bins m2/n (magic-labeled records only, the rest sit at 0);
    otherwise absolute m2 is binned.  ``value_range=None`` spans the data.
    """
    kept = []
    for r in records:
        if r.m2 is None:
            raise ValueError(f"record {r.rec_id!r} has no m2")
        if density and not target_of(r, task):
            continue
        kept.append(r)
    if not kept:
        raise ValueError("no records to bin")
    values = np.array([r.m2 / r.n_qubits if density else r.m2 for r in kept])
    outputs = predict(params, kept)
    preds = (sigmoid(outputs) > 0.5).astype(float)
    wrong = preds != targets_of(kept, task)
    if value_range is None:
        value_range = (float(values.min()), float(np.nextafter(values.max(), np.inf)))
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    which = np.clip(np.digitize(values, edges) - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    miscounts = np.bincount(which, weights=wrong.astype(float), minlength=bins).astype(int)
    ratios = [
        (int(m) / int(c)) if c else None for m, c in zip(miscounts, counts)
    ]
    median_mis = float(np.median(values[wrong])) if wrong.any() else None
    return BinAnalysis(
        edges=edges,
        counts=counts,
        miscounts=miscounts,
        ratios=ratios,
        median_all=float(np.median(values)),
        median_misclassified=median_mis,
    )


def run_repeated(run_fn: Callable[[int], Metrics], n_runs: int = 10,
                 base_seed: int = 0) -> RunAggregate:
    """Execute ``run_fn`` with seeds base_seed..base_seed+n_runs-1 and aggregate."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seeds = [base_seed + i for i in range(n_runs)]
    runs = []
    for seed in seeds:
        try:
            runs.append(run_fn(seed))
        except Exception as exc:
            raise RuntimeError(f"run with seed {seed} failed: {exc}") from exc
    keys = [k for k, v in runs[0].as_row().items() if isinstance(v, (int, float)) and v is not None]
    mean = {}
    std = {}
    for key in keys:
        vals = np.array([run.as_row()[key] for run in runs], dtype=float)
        mean[key] = float(vals.mean())
        std[key] = float(vals.std())
    return RunAggregate(seeds=seeds, runs=runs, mean=mean, std=std)


@dataclass
class AblationResult:
    variant: str
    train_metrics: Metrics
    test_metrics: Metrics
    extrapolation_metrics: Optional[Metrics]


def ablation_suite(records: Sequence[EncodedRecord], model_config: ModelConfig,
                   train_config: TrainConfig, split_spec: SplitSpec,
                   extrapolation_records: Optional[Sequence[EncodedRecord]] = None
                   ) -> dict[str, AblationResult]:
    """Train the full model and the graph-ablated variant on identical splits."""
    results = {}
    for variant in ("full", "ablated"):
        cfg = replace(model_config, ablate_graph=(variant == "ablated"))
        train_recs, test_recs = split(records, split_spec, task=train_config.task)
        params, _ = train(train_recs, cfg, train_config)
        train_m, _ = evaluate(params, train_recs, train_config.task)
        test_m, _ = evaluate(params, test_recs, train_config.task)
        extra_m = None
        if extrapolation_records is not None:
            extra_m, _ = evaluate(params, extrapolation_records, train_config.task)
        results[variant] = AblationResult(
            variant=variant,
            train_metrics=train_m,
            test_metrics=test_m,
            extrapolation_metrics=extra_m,
        )
    return results


# --- report writers -----------------------------------------------------------


def write_metrics_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ValueError("no metric rows to write")
    keys = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def write_predictions_csv(path, records: Sequence[EncodedRecord],
                          targets: np.ndarray, outputs: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "prediction"])
        for rec, label, pred in zip(records, targets, outputs):
            writer.writerow([rec.rec_id, repr(float(label)), repr(float(pred))])


def write_curve_csv(path, rows: Sequence[dict]) -> None:
    write_metrics_csv(path, rows)
