"""Command-line front end.

Every flag can also come from a JSON config file given with --config;
keys are the flag names with dashes replaced by underscores, and
explicit command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from .agents import load_transcripts
from .decoding import STRATEGIES, DecodingConfig
from .errors import ConfigurationError, GuesslabError
from .grammar_lm import default_grammar, load_grammar
from .harness import (
    SweepSpec,
    emit_report,
    load_metric_rows,
    per_turn_study,
    run_seeded,
    run_sweep,
    write_per_turn_outputs,
)
from .metrics import (
    aggregate_over_seeds,
    render_comparison_csv,
    render_comparison_text,
)
from .world import atomic_write, generate_dataset, load_dataset, save_dataset

# defaults applied after merging the config file under the CLI flags
_DEFAULTS = {
    "gen-data": {"grid": "3x4", "category_pool": 24},
    "play": {"turns": 5, "seeds": "1,2,3,4,5", "lambda_": 0.8,
             "epsilon": 0.0, "jobs": 1, "grammar": None,
             "beam": None, "k": None, "p": None, "tau": None},
    "sweep": {"turns": 5, "seeds": "1,2,3,4,5", "lambda_": 0.8,
              "epsilon": 0.0, "jobs": 1, "grammar": None,
              "save_transcripts": False},
    "per-turn": {"turns": 10, "seeds": "1,2,3,4,5", "lambda_": 0.8,
                 "epsilon": 0.0, "jobs": 1, "grammar": None},
    "report": {},
    "serve-annotation": {"annotators": 8, "quota": 25, "seed": 0,
                         "host": "127.0.0.1", "port": 8000,
                         "store": "annotations.jsonl", "ui_dir": None},
}

_REQUIRED = {
    "gen-data": ("seed", "n_games", "out"),
    "play": ("dataset", "strategy", "out_dir"),
    "sweep": ("dataset", "out_dir"),
    "per-turn": ("dataset", "out_dir"),
    "report": ("rows", "style", "out_dir"),
    "serve-annotation": ("transcripts", "dataset"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guesslab",
        description="decoding-strategy laboratory for a synthetic guessing game")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, dataset=True):
        p.add_argument("--config", help="JSON file mirroring the flags")
        if dataset:
            p.add_argument("--dataset", help="games JSONL file")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p, dataset=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-games", type=int)
    p.add_argument("--grid", help="ROWSxCOLS, e.g. 3x4")
    p.add_argument("--category-pool", type=int)
    p.add_argument("--out", help="output JSONL path")

    p = sub.add_parser("play", help="run one strategy over a dataset")
    common(p)
    p.add_argument("--strategy", choices=sorted(STRATEGIES))
    p.add_argument("--beam", type=int, help="beam size (beam, confirm_it)")
    p.add_argument("--k", type=int, help="top-k cutoff")
    p.add_argument("--p", type=float, help="nucleus mass")
    p.add_argument("--tau", type=float, help="typical-set mass")
    p.add_argument("--turns", type=int)
    p.add_argument("--seeds", help="comma-separated RNG seeds")
    p.add_argument("--lambda", dest="lambda_", type=float,
                   help="grounding weight of the question grammar")
    p.add_argument("--epsilon", type=float, help="guesser noise rate")
    p.add_argument("--grammar", help="grammar spec JSON (default built-in)")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("sweep", help="full hyper-parameter sweep")
    common(p)
    p.add_argument("--turns", type=int)
    p.add_argument("--seeds", help="comma-separated RNG seeds")
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--grammar")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int)
    p.add_argument("--save-transcripts", action="store_const", const=True,
                   help="also persist every transcript file")

    p = sub.add_parser("per-turn", help="accuracy-after-each-turn study")
    common(p)
    p.add_argument("--turns", type=int)
    p.add_argument("--seeds", help="comma-separated RNG seeds")
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--grammar")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("report", help="re-render saved metric rows")
    common(p, dataset=False)
    p.add_argument("--rows", nargs="+", help="rows.jsonl files")
    p.add_argument("--style", help="table2, sm_table4, or curves")
    p.add_argument("--out-dir")

    p = sub.add_parser("serve-annotation", help="run the annotation service")
    common(p)
    p.add_argument("--transcripts", nargs="+",
                   help="transcript JSONL files, one per strategy condition")
    p.add_argument("--annotators", type=int)
    p.add_argument("--quota", type=int, help="items per strategy per annotator")
    p.add_argument("--seed", type=int, help="assignment shuffle seed")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--store", help="append-only annotation JSONL")
    p.add_argument("--ui-dir", help="static UI bundle to serve at /")
    return parser


def _merge_options(args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags, with key validation."""
    command = args.command
    cli = {k: v for k, v in vars(args).items()
           if k not in ("command", "config")}
    merged = dict(_DEFAULTS[command])
    for key in cli:
        merged.setdefault(key, None)
    if args.config:
        with open(args.config) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config file is not JSON: {exc}")
        if not isinstance(doc, dict):
            raise ConfigurationError("config file must hold a JSON object")
        for key, value in doc.items():
            attr = "lambda_" if key == "lambda" else key.replace("-", "_")
            if attr not in merged:
                raise ConfigurationError(
                    f"config key {key!r} is not a flag of {command!r}")
            merged[attr] = value
    for key, value in cli.items():
        if value is not None:
            merged[key] = value
    missing = [k for k in _REQUIRED[command] if merged.get(k) in (None, [])]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ConfigurationError(f"{command} requires {flags}")
    return merged


def _parse_seeds(raw) -> tuple[int, ...]:
    if isinstance(raw, (list, tuple)):
        return tuple(int(s) for s in raw)
    try:
        seeds = tuple(int(part) for part in str(raw).split(",") if part.strip())
    except ValueError:
        raise ConfigurationError(f"bad seed list {raw!r}")
    if not seeds:
        raise ConfigurationError("seed list is empty")
    return seeds


def _parse_grid(raw) -> tuple[int, int]:
    try:
        rows, cols = str(raw).lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise ConfigurationError(f"bad grid {raw!r}; expected ROWSxCOLS")


def _build_lm(opts: dict):
    lam = float(opts["lambda_"])
    if opts.get("grammar"):
        return load_grammar(opts["grammar"], grounding_weight=lam)
    return default_grammar(grounding_weight=lam)


def _cmd_gen_data(opts: dict) -> int:
    dataset = generate_dataset(seed=int(opts["seed"]),
                               n_games=int(opts["n_games"]),
                               grid=_parse_grid(opts["grid"]),
                               category_pool_size=int(opts["category_pool"]))
    save_dataset(dataset, opts["out"])
    print(f"wrote {len(dataset.games)} games to {opts['out']}")
    return 0


def _cmd_play(opts: dict) -> int:
    dataset = load_dataset(opts["dataset"])
    lm = _build_lm(opts)
    config = DecodingConfig(
        strategy=opts["strategy"], beam_size=opts["beam"], k=opts["k"],
        p=opts["p"], tau=opts["tau"])
    seeds = _parse_seeds(opts["seeds"])
    out_dir = opts["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    row = run_seeded(dataset, lm, config, seeds, turns=int(opts["turns"]),
                     epsilon=float(opts["epsilon"]), out_dir=out_dir,
                     jobs=int(opts["jobs"]))
    atomic_write(os.path.join(out_dir, "rows.jsonl"),
                 json.dumps(row.to_dict(), sort_keys=True) + "\n")
    atomic_write(os.path.join(out_dir, "metrics.csv"),
                 render_comparison_csv([row]))
    text = render_comparison_text([row])
    atomic_write(os.path.join(out_dir, "metrics.txt"), text)
    print(text, end="")
    return 0


def _sweep_spec(opts: dict) -> SweepSpec:
    return SweepSpec(seeds=_parse_seeds(opts["seeds"]),
                     turns=int(opts["turns"]))


def _cmd_sweep(opts: dict) -> int:
    dataset = load_dataset(opts["dataset"])
    lm = _build_lm(opts)
    os.makedirs(opts["out_dir"], exist_ok=True)
    rows, failures = run_sweep(
        dataset, lm, _sweep_spec(opts), epsilon=float(opts["epsilon"]),
        out_dir=opts["out_dir"], jobs=int(opts["jobs"]),
        save_transcripts_too=bool(opts["save_transcripts"]))
    ranked = sorted(rows, key=lambda r: (-r.accuracy, r.label))
    print(render_comparison_text(ranked), end="")
    for label, message in failures:
        print(f"FAILED {label}: {message}", file=sys.stderr)
    return 1 if failures else 0


def _cmd_per_turn(opts: dict) -> int:
    dataset = load_dataset(opts["dataset"])
    lm = _build_lm(opts)
    os.makedirs(opts["out_dir"], exist_ok=True)
    rows = per_turn_study(dataset, lm, T=int(opts["turns"]),
                          seeds=_parse_seeds(opts["seeds"]),
                          epsilon=float(opts["epsilon"]),
                          out_dir=opts["out_dir"], jobs=int(opts["jobs"]))
    for r in rows:
        curve = " ".join(f"{v:.1f}" for v in r.per_turn)
        print(f"{r.label}: {curve}")
    return 0


def _cmd_report(opts: dict) -> int:
    rows = []
    for path in opts["rows"]:
        rows.extend(load_metric_rows(path))
    paths = emit_report(rows, opts["style"], opts["out_dir"])
    for path in paths:
        print(f"wrote {path}")
    return 0


def _cmd_serve_annotation(opts: dict) -> int:
    import uvicorn

    from .annotation_service import AnnotationService, build_app

    dataset = load_dataset(opts["dataset"])
    transcripts = []
    for path in opts["transcripts"]:
        transcripts.extend(load_transcripts(path))
    service = AnnotationService.from_transcripts(
        transcripts, dataset, n_annotators=int(opts["annotators"]),
        quota=int(opts["quota"]), seed=int(opts["seed"]),
        store_path=opts["store"])
    app = build_app(service, ui_dir=opts["ui_dir"])
    print(f"serving {service.describe()} on "
          f"http://{opts['host']}:{opts['port']}")
    uvicorn.run(app, host=opts["host"], port=int(opts["port"]),
                log_level="warning")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "play": _cmd_play,
    "sweep": _cmd_sweep,
    "per-turn": _cmd_per_turn,
    "report": _cmd_report,
    "serve-annotation": _cmd_serve_annotation,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _merge_options(args)
        return _COMMANDS[args.command](opts)
    except GuesslabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
