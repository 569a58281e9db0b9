"""Command-line interface.

Subcommands: gen, encode, train, eval, curve, repeat, ablate.  Options can
come from a JSON or TOML config file (--config); explicit flags override
file values.  Exit codes: 0 success, 2 validation/configuration error,
3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .circuit import ParseError, ValidationError, read_jsonl, write_jsonl
from .datasets import (
    GenConfig,
    dataset_manifest,
    generate_family,
    generate_ps_cell,
    sre_threshold_labels,
)
from .graphs import CalibrationTable, encode_records, load_encoded, save_encoded
from .harness import (
    SplitSpec,
    TrainConfig,
    clifford_depth_curve,
    constant_mean_baseline,
    evaluate,
    m2_bin_analysis,
    majority_class_baseline,
    run_repeated,
    split,
    targets_of,
    train,
    write_metrics_csv,
    write_predictions_csv,
)
from .nn import ModelConfig, load_checkpoint, save_checkpoint
from .sre import UnlabelableError


class ConfigError(ValueError):
    pass


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text.decode("utf-8"))


def _parse_qubits(spec: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in spec.split(","):
        if "-" in part[1:]:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError(f"empty qubit spec {spec!r}")
    return tuple(out)


def _merge(file_cfg: dict, key: str, flag_value):
    return flag_value if flag_value is not None else file_cfg.get(key)


# --- gen ----------------------------------------------------------------------


def _cmd_gen(args: argparse.Namespace) -> int:
    cfg_file = _load_config_file(args.config) if args.config else {}
    family = _merge(cfg_file, "family", args.family)
    if family is None:
        raise ConfigError("gen: --family is required")
    family = family.upper()
    out = _merge(cfg_file, "out", args.out)
    if out is None:
        raise ConfigError("gen: --out is required")
    gen_kwargs = dict(cfg_file.get("gen", {}))
    if args.qubits is not None:
        gen_kwargs["qubits"] = _parse_qubits(args.qubits)
    elif "qubits" in gen_kwargs:
        gen_kwargs["qubits"] = tuple(gen_kwargs["qubits"])
    if args.per_cell is not None:
        gen_kwargs["per_cell"] = args.per_cell
    if args.seed is not None:
        gen_kwargs["master_seed"] = args.seed
    for key in ("gate_count_range", "r_m_range", "es_cnot_range", "rqc_gate_range",
                "tim_steps_range", "tim_theta_range", "tim_phi_range"):
        if key in gen_kwargs:
            gen_kwargs[key] = tuple(gen_kwargs[key])
    config = GenConfig(**gen_kwargs)
    parents = None
    if family in ("CS", "ES"):
        parent_path = _merge(cfg_file, "parents", args.parents)
        if parent_path is None:
            raise ConfigError(f"gen: family {family} needs --parents")
        parents = read_jsonl(parent_path)
    if args.only_cell:
        if family != "PS":
            raise ConfigError("--only-cell is supported for PS generation only")
        n_str, label_str = args.only_cell.split(":")
        records = generate_ps_cell(config, int(n_str.lstrip("q")), int(label_str.lstrip("l")))
    else:
        records = generate_family(family, config, parents=parents)
    threshold = None
    if args.threshold_labels:
        threshold, records = sre_threshold_labels(records)
    write_jsonl(out, records)
    manifest = dataset_manifest(family, config, records, threshold)
    manifest_path = _merge(cfg_file, "manifest", args.manifest) or f"{out}.manifest.json"
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} records to {out} (manifest: {manifest_path})")
    return 0


# --- encode -------------------------------------------------------------------


def _cmd_encode(args: argparse.Namespace) -> int:
    records = read_jsonl(args.dataset)
    if not records:
        raise ConfigError(f"{args.dataset}: no records")
    d_q = args.d_q or max(r.circuit.n_qubits for r in records)
    calibration = CalibrationTable.load(args.calibration) if args.calibration else None
    encoded = encode_records(records, d_q=d_q, calibration=calibration)
    save_encoded(args.out, encoded)
    d = encoded[0].graph.layout.d
    print(f"encoded {len(encoded)} records (node dim {d}, d_q {d_q}) to {args.out}")
    return 0


# --- train / eval ---------------------------------------------------------------


def _load_records_encoded(path: str, d_q: Optional[int],
                          calibration_path: Optional[str], task: str,
                          threshold_out: Optional[dict] = None):
    """JSONL is encoded on the fly; a binary cache is loaded as-is."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == b"SREGNNE1":
        return load_encoded(path)
    records = read_jsonl(path)
    if task == "sre-class" and all(r.cls_sre is None for r in records):
        split_info, records = sre_threshold_labels(records)
        if threshold_out is not None:
            threshold_out["threshold_m2"] = split_info.threshold_m2
    calibration = CalibrationTable.load(calibration_path) if calibration_path else None
    d_q = d_q or max(r.circuit.n_qubits for r in records)
    return encode_records(records, d_q=d_q, calibration=calibration)


def _split_spec_from(cfg: dict, seed_override: Optional[int] = None) -> SplitSpec:
    kwargs = dict(cfg)
    for key in ("train_bounds", "test_bounds"):
        if kwargs.get(key) is not None:
            kwargs[key] = tuple(kwargs[key])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return SplitSpec(**kwargs)


def _model_config_from(cfg: dict, node_dim: int, mode: str) -> ModelConfig:
    kwargs = dict(cfg)
    for key in ("tc_widths", "global_widths", "head_widths"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    kwargs.setdefault("node_dim", node_dim)
    kwargs.setdefault("mode", mode)
    return ModelConfig(**kwargs)


def _run_training(cfg: dict, out_dir: Path, seed: Optional[int] = None,
                  ablate: Optional[bool] = None, verbose: bool = False) -> dict:
    task = cfg.get("task")
    if task is None:
        raise ConfigError("train: 'task' is required")
    threshold_info: dict = {}
    encoded = _load_records_encoded(
        cfg["dataset"], cfg.get("d_q"), cfg.get("calibration"), task, threshold_info
    )
    train_kwargs = dict(cfg.get("train", {}))
    if seed is not None:
        train_kwargs["seed"] = seed
    train_cfg = TrainConfig(task=task, **train_kwargs)
    split_spec = _split_spec_from(cfg.get("split", {"kind": "random_ratio"}))
    model_cfg = _model_config_from(cfg.get("model", {}),
                                   node_dim=encoded[0].graph.layout.d,
                                   mode=train_cfg.mode)
    if ablate is not None:
        model_cfg = replace(model_cfg, ablate_graph=ablate)
    train_recs, test_recs = split(encoded, split_spec, task=task)
    log = print if verbose else None
    params, history = train(train_recs, model_cfg, train_cfg, log=log)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_metrics, _ = evaluate(params, train_recs, task)
    test_metrics, test_out = evaluate(params, test_recs, task)
    rows = [
        {"split": "train", **train_metrics.as_row()},
        {"split": "test", **test_metrics.as_row()},
    ]
    test_targets = targets_of(test_recs, task)
    train_targets = targets_of(train_recs, task)
    baseline: dict = {}
    if task == "sre-reg":
        baseline["constant_mean_mse"] = constant_mean_baseline(train_targets, test_targets)
    else:
        baseline["majority_class_accuracy"] = majority_class_baseline(
            train_targets, test_targets
        )
    save_checkpoint(
        out_dir / "checkpoint.bin",
        params,
        extra={"task": task, "seed": train_cfg.seed, **threshold_info},
    )
    write_metrics_csv(out_dir / "metrics.csv", rows)
    write_predictions_csv(out_dir / "predictions_test.csv", test_recs, test_targets, test_out)
    manifest = {
        "config": cfg,
        "task": task,
        "seed": train_cfg.seed,
        "epochs_run": history["epochs_run"],
        "best_epoch": history["best_epoch"],
        "kernel_backend": kernels.BACKEND,
        "model": {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in asdict(model_cfg).items()},
        "baselines": baseline,
        **threshold_info,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                           encoding="utf-8")
    (out_dir / "history.json").write_text(json.dumps(history) + "\n", encoding="utf-8")
    return {"train": train_metrics, "test": test_metrics, "baseline": baseline}


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config) if args.config else {}
    for key in ("dataset", "task", "d_q"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            cfg[key] = value
    if args.seed is not None:
        cfg.setdefault("train", {})["seed"] = args.seed
    if args.epochs is not None:
        cfg.setdefault("train", {})["epochs"] = args.epochs
    result = _run_training(cfg, Path(args.out_dir), verbose=args.verbose)
    print(f"train: {result['train'].as_row()}")
    print(f"test:  {result['test'].as_row()}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    params, _, extra = load_checkpoint(args.checkpoint)
    task = args.task or extra.get("task")
    if task is None:
        raise ConfigError("eval: --task is required (not recorded in checkpoint)")
    encoded = _load_records_encoded(args.dataset, args.d_q, args.calibration, task)
    metrics, outputs = evaluate(params, encoded, task)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "metrics.csv", [metrics.as_row()])
    write_predictions_csv(out_dir / "predictions.csv", encoded,
                          targets_of(encoded, task), outputs)
    print(metrics.as_row())
    return 0


# --- curve ----------------------------------------------------------------------


def _cmd_curve(args: argparse.Namespace) -> int:
    params, _, extra = load_checkpoint(args.checkpoint)
    task = args.task or extra.get("task") or "stab"
    encoded = _load_records_encoded(args.dataset, args.d_q, None, task)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode == "clifford-depth":
        rows = clifford_depth_curve(params, encoded, task=task)
        write_metrics_csv(out_dir / "clifford_depth_curve.csv", rows)
        print(f"wrote {len(rows)} rows to {out_dir / 'clifford_depth_curve.csv'}")
    else:
        value_range = None
        if args.range:
            lo, hi = args.range.split(",")
            value_range = (float(lo), float(hi))
        elif not args.absolute:
            value_range = (0.0, 0.24)
        analysis = m2_bin_analysis(params, encoded, task=task, bins=args.bins,
                                   value_range=value_range, density=not args.absolute)
        rows = [
            {
                "bin_lo": analysis.edges[i],
                "bin_hi": analysis.edges[i + 1],
                "count": int(analysis.counts[i]),
                "misclassified": int(analysis.miscounts[i]),
                "ratio": analysis.ratios[i],
            }
            for i in range(len(analysis.counts))
        ]
        write_metrics_csv(out_dir / "m2_bins.csv", rows)
        print(
            f"median m2 (all/misclassified): {analysis.median_all:.4f}/"
            f"{analysis.median_misclassified}"
        )
    return 0


# --- repeat / ablate --------------------------------------------------------------


def _cmd_repeat(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    out_dir = Path(args.out_dir)
    base_seed = cfg.get("train", {}).get("seed", 0)

    def one_run(seed: int):
        result = _run_training(cfg, out_dir / f"run-{seed}", seed=seed)
        return result["test"]

    aggregate = run_repeated(one_run, n_runs=args.n, base_seed=base_seed)
    rows = [
        {"seed": seed, **metrics.as_row()}
        for seed, metrics in zip(aggregate.seeds, aggregate.runs)
    ]
    rows.append({"seed": "mean", **{k: aggregate.mean.get(k) for k in rows[0] if k != "seed"}})
    rows.append({"seed": "std", **{k: aggregate.std.get(k) for k in rows[0] if k != "seed"}})
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "aggregate.csv", rows)
    print(f"{args.n} runs: mean={aggregate.mean} std={aggregate.std}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    out_dir = Path(args.out_dir)
    rows = []
    for variant, ablate in (("full", False), ("ablated", True)):
        result = _run_training(cfg, out_dir / variant, ablate=ablate)
        rows.append({"variant": variant, "split": "train", **result["train"].as_row()})
        rows.append({"variant": variant, "split": "test", **result["test"].as_row()})
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_dir / "ablation.csv", rows)
    print(f"wrote {out_dir / 'ablation.csv'}")
    return 0


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sregnn",
                                     description="circuit nonstabilizerness toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled circuit dataset")
    p.add_argument("--config")
    p.add_argument("--family", help="PS | CS | ES | RQC | TIM")
    p.add_argument("--qubits", help="e.g. 2-6 or 2,4,18")
    p.add_argument("--per-cell", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--parents", help="parent PS dataset for CS/ES")
    p.add_argument("--only-cell", help="regenerate one PS cell, e.g. q4:l1")
    p.add_argument("--threshold-labels", action="store_true",
                   help="drop stabilizer records and add median-threshold labels")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("encode", help="encode circuits into the binary graph cache")
    p.add_argument("--dataset", required=True)
    p.add_argument("--d-q", type=int, help="qubit-indicator width (default: max n)")
    p.add_argument("--calibration", help="hardware calibration JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON or TOML run config")
    p.add_argument("--dataset")
    p.add_argument("--task", choices=("stab", "sre-class", "sre-reg"))
    p.add_argument("--d-q", dest="d_q", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", choices=("stab", "sre-class", "sre-reg"))
    p.add_argument("--d-q", dest="d_q", type=int)
    p.add_argument("--calibration")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("curve", help="accuracy curves and bin analyses")
    p.add_argument("--mode", choices=("clifford-depth", "m2-bins"), required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", choices=("stab", "sre-class"))
    p.add_argument("--d-q", dest="d_q", type=int)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--range", help="lo,hi bin range")
    p.add_argument("--absolute", action="store_true",
                   help="bin absolute m2 instead of m2/n")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_curve)

    p = sub.add_parser("repeat", help="repeat a training config over seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_repeat)

    p = sub.add_parser("ablate", help="train full and graph-ablated variants")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_ablate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValidationError, ParseError, UnlabelableError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
