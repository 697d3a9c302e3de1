"""Experiment driver: single runs, hyper-parameter sweeps, per-turn curves.

Everything here is deterministic in (dataset seed, spec): per-turn RNG
streams are keyed by (seed, game, turn), so worker count and scheduling
order never change the emitted bytes.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import functools
import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .agents import Transcript, play_game, save_transcripts
from .decoding import DecodingConfig
from .errors import ConfigurationError, EmptyCollectionError
from .grammar_lm import GrammarLm
from .metrics import (
    FrequencyTable,
    MetricReport,
    aggregate_over_seeds,
    build_reference_table,
    metric_report,
    render_comparison_csv,
    render_comparison_text,
)
from .world import Dataset, atomic_write

P_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.91, 0.95)
TOPK_GRID = (5, 10, 20)
DEFAULT_SEEDS = (1, 2, 3, 4, 5)

# published full-scale reference values; context only, the synthetic world
# is not expected to reproduce them (learned models, real images, humans)
REFERENCE_CONTEXT = (
    "reference values from the original full-scale study (trained models,",
    "real images; shown for orientation, not comparable in absolute terms):",
    "  confirm_it   accuracy 51.39   chair_i 15.09   chair_s 33.00",
    "  beam(B=3)    accuracy 47.05   chair_i 13.60   chair_s 30.43",
    "  nucleus(p=0.3) accuracy 45.13",
    "  pure_sampling accuracy 41.45  chair_i 20.40   chair_s 58.61",
    "  human guess accuracy: 72.5 / 68.0 / 67.5 / 59.5",
)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of strategy configurations crossed with seeds."""

    nucleus_grid: tuple[float, ...] = P_GRID
    typical_grid: tuple[float, ...] = P_GRID
    topk_grid: tuple[int, ...] = TOPK_GRID
    beam_size: int = 3
    include_greedy: bool = True
    include_pure: bool = True
    include_confirm_it: bool = True
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    turns: int = 5

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seed list must be non-empty")
        if not (self.nucleus_grid and self.typical_grid and self.topk_grid):
            raise ConfigurationError("sweep grids must be non-empty")
        if self.turns < 1:
            raise ConfigurationError("turns must be >= 1")
        if self.beam_size < 1:
            raise ConfigurationError("beam_size must be >= 1")

    def configs(self) -> list[DecodingConfig]:
        """Seedless configuration templates, in stable emission order."""
        out = []
        if self.include_greedy:
            out.append(DecodingConfig("greedy"))
        out.append(DecodingConfig("beam", beam_size=self.beam_size))
        if self.include_confirm_it:
            out.append(DecodingConfig("confirm_it", beam_size=self.beam_size))
        if self.include_pure:
            out.append(DecodingConfig("pure_sampling"))
        out.extend(DecodingConfig("nucleus", p=p) for p in self.nucleus_grid)
        out.extend(DecodingConfig("typical", tau=t) for t in self.typical_grid)
        out.extend(DecodingConfig("top_k", k=k) for k in self.topk_grid)
        return out


@functools.lru_cache(maxsize=2)
def default_reference_table(n_questions: int = 50_000) -> FrequencyTable:
    """The frozen rare-word reference corpus (default grammar, seed 42)."""
    return build_reference_table(n_questions=n_questions)


def config_slug(config: DecodingConfig) -> str:
    label = config.label()
    slug = "".join(c if c.isalnum() or c in "._" else "-" for c in label)
    while "--" in slug:
        slug = slug.replace("--", "-")
    return slug.strip("-")


# --- parallel game playing --------------------------------------------------

_WORKER: dict = {}


def _init_worker(lm: GrammarLm, games, turns: int, epsilon: float):
    _WORKER["lm"] = lm
    _WORKER["games"] = games
    _WORKER["turns"] = turns
    _WORKER["epsilon"] = epsilon


def _play_chunk(args) -> list[Transcript]:
    config, indices = args
    lm = _WORKER["lm"]
    games = _WORKER["games"]
    return [play_game(games[i], lm, config, turns=_WORKER["turns"],
                      epsilon=_WORKER["epsilon"]) for i in indices]


def play_dataset(dataset: Dataset, lm: GrammarLm, config: DecodingConfig,
                 turns: int = 5, epsilon: float = 0.0,
                 jobs: int = 1) -> list[Transcript]:
    """Play every game; transcript order follows the dataset regardless of jobs."""
    games = dataset.games
    if jobs <= 1 or len(games) < 32:
        return [play_game(g, lm, config, turns=turns, epsilon=epsilon)
                for g in games]
    chunks = [c for c in np.array_split(np.arange(len(games)), jobs * 4)
              if len(c)]
    with concurrent.futures.ProcessPoolExecutor(
            max_workers=jobs, initializer=_init_worker,
            initargs=(lm, games, turns, epsilon)) as pool:
        parts = list(pool.map(_play_chunk,
                              [(config, list(c)) for c in chunks]))
    return [t for part in parts for t in part]


def run_experiment(dataset: Dataset, lm: GrammarLm, config: DecodingConfig,
                   turns: int = 5, seed: Optional[int] = None,
                   freq_table: Optional[FrequencyTable] = None,
                   epsilon: float = 0.0, per_turn_T: Optional[int] = None,
                   out_dir: Optional[str] = None,
                   jobs: int = 1) -> tuple[list[Transcript], MetricReport]:
    """One (config, seed) run over the whole dataset, optionally persisted."""
    if seed is not None:
        config = dataclasses.replace(config, rng_seed=seed)
    if freq_table is None:
        freq_table = default_reference_table()
    transcripts = play_dataset(dataset, lm, config, turns=turns,
                               epsilon=epsilon, jobs=jobs)
    config_doc = config.to_dict()
    config_doc.pop("rng_seed")  # seed-mates must aggregate cleanly
    report = metric_report(transcripts, dataset, freq_table,
                           per_turn_T=per_turn_T, label=config.label(),
                           config=config_doc)
    if out_dir is not None:
        path = os.path.join(
            out_dir, f"{config_slug(config)}-seed{config.rng_seed}.jsonl")
        save_transcripts(transcripts, path)
    return transcripts, report


def run_seeded(dataset: Dataset, lm: GrammarLm, config: DecodingConfig,
               seeds: Sequence[int], turns: int = 5,
               freq_table: Optional[FrequencyTable] = None,
               epsilon: float = 0.0, per_turn_T: Optional[int] = None,
               out_dir: Optional[str] = None, jobs: int = 1) -> MetricReport:
    """Aggregate one configuration over seeds (mean and population std)."""
    reports = []
    for seed in seeds:
        _, report = run_experiment(
            dataset, lm, config, turns=turns, seed=seed,
            freq_table=freq_table, epsilon=epsilon, per_turn_T=per_turn_T,
            out_dir=out_dir, jobs=jobs)
        reports.append(report)
    return aggregate_over_seeds(reports)


# --- sweep -------------------------------------------------------------------


def run_sweep(dataset: Dataset, lm: GrammarLm, spec: SweepSpec,
              freq_table: Optional[FrequencyTable] = None,
              epsilon: float = 0.0, out_dir: Optional[str] = None,
              jobs: int = 1,
              save_transcripts_too: bool = False
              ) -> tuple[list[MetricReport], list[tuple[str, str]]]:
    """All grid configurations x seeds; one aggregated row per configuration.

    Failures of individual configurations are collected, not fatal; the
    completed rows are still emitted.
    """
    if freq_table is None:
        freq_table = default_reference_table()
    rows: list[MetricReport] = []
    failures: list[tuple[str, str]] = []
    transcript_dir = out_dir if save_transcripts_too else None
    for config in spec.configs():
        try:
            rows.append(run_seeded(
                dataset, lm, config, spec.seeds, turns=spec.turns,
                freq_table=freq_table, epsilon=epsilon,
                out_dir=transcript_dir, jobs=jobs))
        except Exception as exc:  # keep sweeping, report at the end
            failures.append((config.label(), f"{type(exc).__name__}: {exc}"))
    if out_dir is not None:
        write_sweep_outputs(rows, spec, out_dir)
        if failures:
            lines = [f"{label}: {msg}" for label, msg in failures]
            atomic_write(os.path.join(out_dir, "failures.txt"),
                         "\n".join(lines) + "\n")
    return rows, failures


def _curve_rows(rows: Sequence[MetricReport], strategy: str,
                param_name: str) -> list[str]:
    out = []
    for r in rows:
        if r.config is None or r.config.get("strategy") != strategy:
            continue
        value = r.config[param_name]
        out.append(",".join([
            f"{value:g}", f"{r.accuracy:.4f}", f"{r.accuracy_std:.4f}",
            f"{r.chair_i:.4f}", f"{r.chair_s:.4f}",
            f"{r.repetition_rate:.4f}"]))
    return out


CURVE_HEADER = ("param_value,accuracy_mean,accuracy_std,"
                "chair_i_mean,chair_s_mean,repetition_mean")


def write_curve_files(rows: Sequence[MetricReport], out_dir: str) -> list[str]:
    """One curve file per hyper-parameter family, rows in grid order."""
    paths = []
    for strategy, param in (("nucleus", "p"), ("typical", "tau"),
                            ("top_k", "k")):
        lines = _curve_rows(rows, strategy, param)
        if not lines:
            continue
        path = os.path.join(out_dir, f"{strategy}_curve.csv")
        atomic_write(path, CURVE_HEADER + "\n" + "\n".join(lines) + "\n")
        paths.append(path)
    return paths


def write_sweep_outputs(rows: Sequence[MetricReport], spec: SweepSpec,
                        out_dir: str) -> list[str]:
    paths = []
    ranked = sorted(rows, key=lambda r: (-r.accuracy, r.label))
    docs = [json.dumps(r.to_dict(), sort_keys=True) for r in rows]
    path = os.path.join(out_dir, "sweep_rows.jsonl")
    atomic_write(path, "".join(d + "\n" for d in docs))
    paths.append(path)
    path = os.path.join(out_dir, "sweep_table.csv")
    atomic_write(path, render_comparison_csv(ranked))
    paths.append(path)
    path = os.path.join(out_dir, "sweep_table.txt")
    atomic_write(path, render_comparison_text(ranked))
    paths.append(path)
    paths.extend(write_curve_files(rows, out_dir))
    return paths


# --- per-turn study ----------------------------------------------------------


def default_per_turn_configs() -> list[DecodingConfig]:
    return [
        DecodingConfig("nucleus", p=0.3),
        DecodingConfig("typical", tau=0.7),
        DecodingConfig("confirm_it"),
        DecodingConfig("pure_sampling"),
    ]


def per_turn_study(dataset: Dataset, lm: GrammarLm,
                   configs: Optional[Sequence[DecodingConfig]] = None,
                   T: int = 10, seeds: Sequence[int] = DEFAULT_SEEDS,
                   freq_table: Optional[FrequencyTable] = None,
                   epsilon: float = 0.0, out_dir: Optional[str] = None,
                   jobs: int = 1) -> list[MetricReport]:
    """Accuracy-after-each-turn curves for the given strategies."""
    if configs is None:
        configs = default_per_turn_configs()
    if not configs:
        raise ConfigurationError("per-turn study needs at least one strategy")
    rows = [run_seeded(dataset, lm, config, seeds, turns=T,
                       freq_table=freq_table, epsilon=epsilon,
                       per_turn_T=T, jobs=jobs)
            for config in configs]
    if out_dir is not None:
        write_per_turn_outputs(rows, out_dir)
    return rows


def write_per_turn_outputs(rows: Sequence[MetricReport],
                           out_dir: str) -> list[str]:
    lines = ["strategy,turn,accuracy_mean,accuracy_std"]
    for r in rows:
        for i, (mean, std) in enumerate(zip(r.per_turn, r.per_turn_std),
                                        start=1):
            lines.append(f"{r.label},{i},{mean:.4f},{std:.4f}")
    curve_path = os.path.join(out_dir, "per_turn_curves.csv")
    atomic_write(curve_path, "\n".join(lines) + "\n")
    rows_path = os.path.join(out_dir, "per_turn_rows.jsonl")
    atomic_write(rows_path, "".join(
        json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in rows))
    return [curve_path, rows_path]


# --- report emission ----------------------------------------------------------

REPORT_STYLES = ("table2", "sm_table4", "curves")


def emit_report(rows: Sequence[MetricReport], style: str,
                out_dir: str) -> list[str]:
    """Render metric rows in one of the canned shapes."""
    if style not in REPORT_STYLES:
        raise ConfigurationError(
            f"unknown report style {style!r}; expected one of {REPORT_STYLES}")
    if not rows:
        raise EmptyCollectionError("no metric rows to report")
    os.makedirs(out_dir, exist_ok=True)
    if style == "table2":
        ranked = sorted(rows, key=lambda r: (-r.accuracy, r.label))
        text = render_comparison_text(ranked)
        text += "\n" + "\n".join(REFERENCE_CONTEXT) + "\n"
        csv_path = os.path.join(out_dir, "comparison.csv")
        txt_path = os.path.join(out_dir, "comparison.txt")
        atomic_write(csv_path, render_comparison_csv(ranked))
        atomic_write(txt_path, text)
        return [csv_path, txt_path]
    if style == "sm_table4":
        csv_path = os.path.join(out_dir, "sweep_table.csv")
        txt_path = os.path.join(out_dir, "sweep_table.txt")
        ranked = sorted(rows, key=lambda r: (-r.accuracy, r.label))
        atomic_write(csv_path, render_comparison_csv(ranked))
        atomic_write(txt_path, render_comparison_text(ranked))
        return [csv_path, txt_path]
    paths = write_curve_files(rows, out_dir)
    if not paths:
        raise EmptyCollectionError(
            "no curve-family rows (nucleus/typical/top_k) among the inputs")
    return paths


def load_metric_rows(path: str) -> list[MetricReport]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(MetricReport.from_dict(json.loads(line)))
    return rows
