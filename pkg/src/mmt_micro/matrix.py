"""Experiment matrix: systems x seeds on one dataset, with decoding,
scoring, pairwise significance tests, and a consolidated report.

Runs are isolated directories and the matrix is idempotent: completed runs
(their metrics file exists) are skipped, partial runs resume from their
last checkpoint. Independent runs may execute in parallel processes;
``MMT_MICRO_THREADS`` caps the worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import TrainConfig, format_config, parse_config
from .data.text import preprocess_text, read_lines, write_lines
from .errors import ConfigError
from .figures import save_score_bars, save_training_curves
from .metrics import (
    EvalReport,
    approx_randomization,
    bleu_corpus,
    grounding_accuracy,
    report_runs,
    report_tsv,
)
from .pipeline import run_training, translate_lines
from .tensor import Rng

DEFAULT_SYSTEMS = ("baseline", "ma", "fa")
DEFAULT_SEEDS = (1, 2, 3, 4)
THREADS_ENV = "MMT_MICRO_THREADS"


def matrix_threads(requested: int | None = None) -> int:
    cap = os.environ.get(THREADS_ENV)
    threads = requested if requested is not None else (os.cpu_count() or 1)
    if cap is not None:
        try:
            threads = min(threads, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from exc
    return max(1, threads)


@dataclass
class MatrixResult:
    report: EvalReport
    out_dir: Path
    run_dirs: dict[tuple[str, int], Path]
    accuracies: dict[str, list[float]]


def _run_one(args: tuple) -> dict:
    """Train, decode, and score one (system, seed) cell; worker-safe."""
    data_dir, run_dir, config_text, beam, length_norm = args
    data_dir, run_dir = Path(data_dir), Path(run_dir)
    metrics_path = run_dir / "test.metrics"
    if metrics_path.exists():
        return json.loads(metrics_path.read_text())

    cfg = parse_config(config_text)
    outcome = run_training(data_dir, run_dir, cfg, resume=True)

    src_lines = read_lines(data_dir / "test.src")
    features = data_dir / "features.test.mmf"
    hyp_lines = translate_lines(
        [run_dir], src_lines,
        features_path=features if cfg.arch in ("ma", "fa") and features.exists() else None,
        beam=beam, max_len=cfg.max_len, length_norm=length_norm,
    )
    write_lines(run_dir / "test.hyp", hyp_lines)

    refs = [preprocess_text(l) for l in read_lines(data_dir / "test.tgt")]
    result = {
        "system": cfg.arch,
        "seed": cfg.seed,
        "metric": "bleu",
        "value": bleu_corpus(hyp_lines, refs),
        "best_dev": outcome.best_metric,
        "run_dir": str(run_dir),
    }
    colors_path = data_dir / "colors.txt"
    if colors_path.exists():
        result["grounding_accuracy"] = grounding_accuracy(hyp_lines, refs, read_lines(colors_path))
    if cfg.arch in ("ma", "fa"):
        # rescore the best checkpoint on dev, probing visual-attention
        # pre-activation magnitudes
        from .pipeline import evaluate_split, load_dataset, load_model

        model, *_ = load_model(run_dir, "best")
        ds = load_dataset(data_dir, model.cfg)
        stats: dict = {}
        dev_bleu, _ = evaluate_split(model, ds, "dev", batch_size=cfg.batch_size, stats=stats)
        result["dev_bleu"] = dev_bleu
        pre = stats.get("vis_pre_tanh_abs")
        if pre:
            result["vis_pre_tanh_abs"] = float(sum(pre) / len(pre))
    metrics_path.write_text(json.dumps(result) + "\n")
    return result


def run_cells(jobs: list[tuple], threads: int | None = None) -> list[dict]:
    """Execute (data_dir, run_dir, config_text, beam, length_norm) cells,
    possibly in parallel processes; completed cells are skipped."""
    workers = matrix_threads(threads)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


def run_matrix(
    data_dir: str | Path,
    out_dir: str | Path,
    base_cfg: TrainConfig | None = None,
    systems=DEFAULT_SYSTEMS,
    seeds=DEFAULT_SEEDS,
    beam: int = 6,
    length_norm: float = 0.6,
    trials: int = 10000,
    threads: int | None = None,
) -> MatrixResult:
    """Train every (system, seed) cell, then aggregate scores, pairwise
    significance over pooled test outputs, the TSV report, and figures."""
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_cfg = base_cfg or TrainConfig()
    for system in systems:
        if system not in DEFAULT_SYSTEMS:
            raise ConfigError(f"unknown system {system!r}")

    jobs = []
    run_dirs: dict[tuple[str, int], Path] = {}
    for system in systems:
        for seed in seeds:
            run_dir = out_dir / system / f"seed{seed}"
            run_dirs[(system, int(seed))] = run_dir
            cfg = base_cfg.replace(arch=system, seed=int(seed))
            jobs.append((str(data_dir), str(run_dir), format_config(cfg), beam, length_norm))

    results = run_cells(jobs, threads=threads)

    scores: dict[str, list[float]] = {s: [] for s in systems}
    accuracies: dict[str, list[float]] = {s: [] for s in systems}
    for r in results:
        scores[r["system"]].append(r["value"])
        if "grounding_accuracy" in r:
            accuracies[r["system"]].append(r["grounding_accuracy"])
    report = report_runs(scores)

    refs = [preprocess_text(l) for l in read_lines(data_dir / "test.tgt")]
    pooled = {
        system: [
            line
            for seed in seeds
            for line in read_lines(run_dirs[(system, int(seed))] / "test.hyp")
        ]
        for system in systems
    }
    pooled_refs = refs * len(seeds)
    for i, a in enumerate(systems):
        for b in systems[i + 1 :]:
            report.pairwise_p[(a, b)] = approx_randomization(
                pooled[a], pooled[b], pooled_refs, trials=trials, rng=Rng(0)
            )

    (out_dir / "report.tsv").write_text(report_tsv(report))
    save_score_bars(report, out_dir / "report.png")
    curves = {}
    for (system, seed), run_dir in run_dirs.items():
        rows = [json.loads(l) for l in read_lines(run_dir / "metrics.jsonl")]
        curves[f"{system}/s{seed}"] = rows
    save_training_curves(curves, out_dir / "curves.png")

    return MatrixResult(report=report, out_dir=out_dir, run_dirs=run_dirs, accuracies=accuracies)
