"""Command implementations: run, compare, analyze.

Each command returns a process exit code:
0 ok, 1 usage/config error, 2 divergence-flagged completion, 3 contract failure.
"""

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from src.config import config as settings
from src.errors import ConfigError, TimSimError
from src.kernels import fold_sum
from src.rlcore import (
    ContributionHistogram,
    Estimator,
    LossConfig,
    SeqAgg,
    assemble_loss,
    centered_contribution,
    k1,
    k3,
    ratio_triple,
    seq_score,
)
from src.rollout import delta_stats, read_trace, records_to_batch
from src.trainer import TrainConfig, run_experiment
from src.expcli.schema import (
    RunManifest,
    build_train_config,
    cell_config_data,
    config_hash,
    dump_config_yaml,
    load_matrix,
    load_train_config,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_CONTRACT = 3

TAU_TOK_SWEEP = (1.0, 1.25, 1.5, 2.0, 4.0, 8.0, math.inf)
TAU_SEQ_SWEEP = (1e-4, 1e-3, 1e-2, 1e-1, math.inf)

OUTPUT_NAMES = {
    "manifest": "manifest.json",
    "metrics": "metrics.csv",
    "checkpoint": "checkpoint.npz",
    "config": "config.yaml",
    "trace": "trace.jsonl",
}


def resolve_out_dir(out_dir: Optional[Union[str, Path]]) -> Path:
    """``out_dir`` or the TIMSIM_OUT_DIR default."""
    return Path(out_dir) if out_dir else Path(settings.OUT_DIR)


def execute_run(
    cfg: TrainConfig,
    out_dir: Path,
    trace: bool = False,
    workers: int = 1,
    progress: Optional[bool] = None,
):
    """Write config, manifest, metrics, checkpoint (and trace) for one run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    names = {k: v for k, v in OUTPUT_NAMES.items() if trace or k != "trace"}
    paths = {k: out_dir / v for k, v in names.items()}
    digest = config_hash(cfg)

    dump_config_yaml(cfg, paths["config"])
    RunManifest.for_config(cfg, outputs=names).write(paths["manifest"])
    return run_experiment(
        cfg,
        metrics_path=paths["metrics"],
        checkpoint_path=paths["checkpoint"],
        trace_path=paths.get("trace"),
        manifest_hash=digest,
        workers=workers,
        progress=progress,
    )


def cmd_run(
    config_path: Union[str, Path],
    out_dir: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    trace: bool = False,
) -> int:
    """Run one experiment from a config file."""
    try:
        cfg = load_train_config(config_path, overrides, seed)
    except ConfigError as exc:
        logger.error(f"[ERROR] Invalid config {config_path}: {exc}")
        return EXIT_CONFIG

    out = resolve_out_dir(out_dir)
    result = execute_run(cfg, out, trace=trace, workers=threads or settings.THREADS)
    if result.diverged:
        logger.warning(f"[ERROR] Run diverged at step {result.records[-1].step}; outputs in {out}")
        return EXIT_DIVERGED
    logger.info(f"[OK] Outputs written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def _execute_cell(job: Tuple[str, int, Dict[str, Any], str]) -> Dict[str, Any]:
    """Run one matrix cell; module-level so it can be sent to worker processes."""
    label, seed, data, cell_dir = job
    try:
        cfg = build_train_config(data)
        result = execute_run(cfg, Path(cell_dir), progress=False)
    except ConfigError as exc:
        return {"label": label, "seed": seed, "error": f"config: {exc}", "records": []}
    except Exception as exc:  # recorded per cell; other cells keep running
        return {"label": label, "seed": seed, "error": f"{type(exc).__name__}: {exc}", "records": []}
    return {
        "label": label,
        "seed": seed,
        "error": "",
        "records": [r.to_row() for r in result.records],
        "peak_grad_norm": max(
            (r.max_grad_norm for r in result.records if r.mini_steps and not math.isnan(r.max_grad_norm)),
            default=math.nan,
        ),
        "diverged": result.diverged,
        "rollout_profile": cfg.rollout_profile.describe()["name"],
        "train_profile": cfg.train_profile.describe()["name"],
        "variant": cfg.loss.variant.value,
    }


def smooth_curve(values: pd.Series, window: int) -> pd.Series:
    """Centred rolling mean, shrinking at the ends."""
    return values.rolling(window, center=True, min_periods=1).mean()


def collapse_step(
    steps: pd.Series, smoothed: pd.Series, ratio: float, floor: float
) -> Optional[int]:
    """First step where the smoothed reward drops below ``ratio`` x its running max."""
    running_max = smoothed.cummax()
    hit = (running_max >= floor) & (smoothed < ratio * running_max)
    if not hit.any():
        return None
    return int(steps[hit.idxmax()])


def summarize_cell(outcome: Dict[str, Any], window: int, ratio: float, floor: float) -> Dict[str, Any]:
    """Summary-row fields for one finished cell."""
    frame = pd.DataFrame(outcome["records"])
    train = frame[frame["step"] > 0].reset_index(drop=True)
    row: Dict[str, Any] = {
        "steps_completed": int(train["step"].max()) if len(train) else 0,
        "diverged": bool(outcome.get("diverged", False)),
    }
    rewards = train["train_reward"].astype(float)
    smoothed = smooth_curve(rewards, window) if len(train) else rewards
    row["final_train_reward"] = float(rewards.tail(window).mean()) if len(train) else math.nan
    row["best_train_reward"] = float(smoothed.max()) if len(train) else math.nan

    evals = frame["eval_reward"].astype(float).dropna()
    row["final_eval_reward"] = float(evals.iloc[-1]) if len(evals) else math.nan
    row["best_eval_reward"] = float(evals.max()) if len(evals) else math.nan

    collapse = collapse_step(train["step"], smoothed, ratio, floor) if len(train) else None
    if row["diverged"]:
        div_step = int(frame.loc[frame["diverged"].astype(bool), "step"].min())
        collapse = div_step if collapse is None else min(collapse, div_step)
    row["collapse_step"] = collapse
    row["peak_grad_norm"] = float(outcome.get("peak_grad_norm", math.nan))
    return row


def reference_gap(
    cell: Dict[str, Any], reference: Dict[str, Any], window: int
) -> float:
    """Mean |gap| between smoothed train-reward curves over their common steps."""
    a = pd.DataFrame(cell["records"])
    b = pd.DataFrame(reference["records"])
    a = a[a["step"] > 0].set_index("step")["train_reward"].astype(float)
    b = b[b["step"] > 0].set_index("step")["train_reward"].astype(float)
    common = a.index.intersection(b.index)
    if len(common) == 0:
        return math.nan
    sa = smooth_curve(a.loc[common].reset_index(drop=True), window)
    sb = smooth_curve(b.loc[common].reset_index(drop=True), window)
    return float((sa - sb).abs().mean())


def cmd_compare(
    matrix_path: Union[str, Path],
    out_dir: Optional[Union[str, Path]] = None,
    threads: Optional[int] = None,
) -> int:
    """Run every (cell, seed) of a matrix and write ``summary.csv``."""
    try:
        matrix = load_matrix(matrix_path)
    except ConfigError as exc:
        logger.error(f"[ERROR] Invalid matrix {matrix_path}: {exc}")
        return EXIT_CONFIG

    out = resolve_out_dir(out_dir)
    jobs = [
        (cell.label, seed, cell_config_data(matrix, cell, seed), str(out / "cells" / cell.label / f"seed{seed}"))
        for cell in matrix.cells
        for seed in matrix.seeds
    ]
    workers = max(1, threads or settings.THREADS)

    logger.info("=" * 60)
    logger.info(f"Comparing {len(matrix.cells)} cells x {len(matrix.seeds)} seeds = {len(jobs)} runs")
    logger.info("=" * 60)
    start = time.time()

    if workers == 1:
        outcomes = [_execute_cell(job) for job in tqdm(jobs, desc="Cells", disable=not settings.PROGRESS)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(
                tqdm(pool.map(_execute_cell, jobs), total=len(jobs), desc="Cells", disable=not settings.PROGRESS)
            )

    by_key = {(o["label"], o["seed"]): o for o in outcomes}
    rows = []
    for o in outcomes:
        row = {
            "label": o["label"],
            "seed": o["seed"],
            "rollout_profile": o.get("rollout_profile", ""),
            "train_profile": o.get("train_profile", ""),
            "variant": o.get("variant", ""),
        }
        if o["records"]:
            row.update(summarize_cell(o, matrix.smooth_window, matrix.collapse_ratio, matrix.collapse_floor))
            ref = by_key.get((matrix.reference, o["seed"])) if matrix.reference else None
            row["reference_gap"] = (
                reference_gap(o, ref, matrix.smooth_window) if ref and ref["records"] else math.nan
            )
            logger.info(f"[OK] {o['label']} seed={o['seed']}: final={row['final_train_reward']:.3f}")
        else:
            logger.error(f"[ERROR] {o['label']} seed={o['seed']}: {o['error']}")
        row["error"] = o["error"]
        rows.append(row)

    out.mkdir(parents=True, exist_ok=True)
    summary_path = out / "summary.csv"
    pd.DataFrame(rows).to_csv(summary_path, index=False)
    logger.info(f"Summary written to {summary_path} in {time.time() - start:.2f}s")
    return EXIT_OK if all(o["records"] for o in outcomes) else EXIT_CONFIG


# ---------------------------------------------------------------------------
# analyze


def _mean(values: np.ndarray) -> float:
    return fold_sum(values) / values.size if values.size else 0.0


def _key(tau: float) -> str:
    return "inf" if math.isinf(tau) else repr(tau)


def _ratio_columns(batch) -> Dict[str, np.ndarray]:
    cur, old, rollout = [], [], []
    for traj in batch.trajectories:
        cur.append(traj.field_array("logp_cur", "analyze"))
        old.append(traj.field_array("logp_old_train", "analyze"))
        rollout.append(traj.field_array("logp_rollout", "analyze"))
    triples = [ratio_triple(c, o, r) for c, o, r in zip(cur, old, rollout)]
    return {
        "train": [t.r_train for t in triples],
        "rollout": [t.r_rollout for t in triples],
        "corr": [t.r_corr for t in triples],
    }


def threshold_sweeps(batch) -> Dict[str, Any]:
    """Would-be TIS truncation and SRS rejection rates over threshold grids."""
    ratios = _ratio_columns(batch)
    corr_flat = np.concatenate(ratios["corr"]) if ratios["corr"] else np.zeros(0)
    tis = {_key(t): _mean((corr_flat > t).astype(np.float64)) for t in TAU_TOK_SWEEP}

    srs: Dict[str, Any] = {}
    for signal, per_traj in (("corr_ratio", ratios["corr"]), ("rollout_ppo_ratio", ratios["rollout"])):
        for estimator in (Estimator.K1, Estimator.K3):
            for agg in (SeqAgg.SUM, SeqAgg.MEAN):
                scores = np.asarray([seq_score(q, estimator, agg) for q in per_traj])
                srs[f"{signal}/{estimator.value}/{agg.value}"] = {
                    _key(t): _mean((~(scores <= t)).astype(np.float64)) for t in TAU_SEQ_SWEEP
                }
    return {"tis_truncation_rate": tis, "srs_rejection_rate": srs}


def analyze_trace(trace_path: Union[str, Path]) -> Dict[str, Any]:
    """Offline mismatch analysis of a trace file.

    Per-step estimator means, clip fractions and rejection rates come from
    re-running ``assemble_loss`` on the logged log-probabilities with the
    trace's loss config; no forward pass or parameters are needed.
    """
    data = read_trace(trace_path)
    loss_cfg = LossConfig(**data.meta["loss"]) if "loss" in data.meta else LossConfig()
    all_batch = records_to_batch(data.records)

    per_step = []
    for step in data.steps():
        batch = records_to_batch([r for r in data.records if int(r["step"]) == step])
        deltas = delta_stats(batch)
        summary = assemble_loss(batch, loss_cfg)
        per_step.append(
            {
                "step": step,
                "delta_mean_abs": deltas.mean_abs,
                "delta_max_abs": deltas.max_abs,
                "k1_mean": summary.k1_mean,
                "k3_mean": summary.k3_mean,
                "clip_fraction": summary.clip_fraction,
                "rejection_rate": summary.rejection_rate,
                "tis_truncation_rate": summary.tis_truncation_rate,
            }
        )

    report: Dict[str, Any] = {"meta": data.meta, "trajectories": len(all_batch)}
    if len(all_batch) == 0:
        report["per_step"] = []
        return report

    deltas = delta_stats(all_batch)
    flips = [f for r in data.records for f in r["top1_flip"] if f is not None]
    adv = np.concatenate(all_batch.column("advantage", "analyze"))
    ratios = _ratio_columns(all_batch)

    estimators = {}
    histograms = {}
    for name, per_traj in ratios.items():
        flat = np.concatenate(per_traj)
        estimators[name] = {"k1_mean": _mean(k1(flat)), "k3_mean": _mean(k3(flat))}
        if name != "corr":
            histograms[name] = ContributionHistogram.build(centered_contribution(flat, adv), adv).as_dict()

    frame = pd.DataFrame(per_step)
    report.update(
        {
            "delta": {
                "mean_abs": deltas.mean_abs,
                "max_abs": deltas.max_abs,
                "token_count": deltas.token_count,
                "top1_flip_rate": _mean(np.asarray(flips, dtype=np.float64)),
            },
            "estimators": estimators,
            "variant_estimators": {
                "k1_mean": float(frame["k1_mean"].mean()),
                "k3_mean": float(frame["k3_mean"].mean()),
            },
            "contribution_histograms": histograms,
            "sweeps": threshold_sweeps(all_batch),
            "per_step": frame.to_dict(orient="records"),
        }
    )
    return report


def cmd_analyze(trace_path: Union[str, Path], out_path: Optional[Union[str, Path]] = None) -> int:
    """Write ``analysis.json`` for a trace (next to it unless ``out_path`` is given)."""
    try:
        report = analyze_trace(trace_path)
    except (TimSimError, ValidationError, FileNotFoundError) as exc:
        logger.error(f"[ERROR] Cannot analyze {trace_path}: {exc}")
        return EXIT_CONFIG

    out = Path(out_path) if out_path else Path(trace_path).with_name("analysis.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"[OK] Analysis written to {out}")
    return EXIT_OK
