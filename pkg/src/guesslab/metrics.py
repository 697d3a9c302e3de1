"""Dialogue-quality metrics over transcript collections.

Covers task accuracy (overall and per turn), hallucination rates against
scene ground truth, exact-repetition rate, vocabulary breadth against a
frozen reference corpus, and mean/std aggregation across seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .agents import Transcript
from .errors import (
    AggregationError,
    EmptyCollectionError,
    FormatError,
    ValidationError,
)
from .grammar_lm import EOQ, GrammarLm, default_grammar
from .world import Dataset, Game, atomic_write, category_surface_forms, generate_dataset

RARE_THRESHOLD = 20


@dataclass(frozen=True)
class FrequencyTable:
    """Word frequencies of a reference corpus, with its generation recipe."""

    counts: dict[str, int]
    source_descriptor: str

    def __post_init__(self):
        if any(v < 0 for v in self.counts.values()):
            raise ValidationError("frequency counts must be non-negative")

    def count(self, word: str) -> int:
        return self.counts.get(word, 0)


def build_reference_table(n_questions: int = 50_000, seed: int = 42,
                          grounding_weight: float = 0.8,
                          lm: Optional[GrammarLm] = None,
                          n_scenes: int = 500) -> FrequencyTable:
    """Frozen reference corpus: questions sampled scene-by-scene, no history.

    Sampling a whole question from a fresh context is a single draw over
    instantiation weights (step conditionals telescope), so the corpus is
    drawn directly from the per-scene question distribution.
    """
    if lm is None:
        lm = default_grammar(grounding_weight=grounding_weight)
    dataset = generate_dataset(seed=seed, n_games=n_scenes)
    rng = np.random.default_rng(seed)
    counts: dict[str, int] = {}
    n_inst = len(lm.instantiations)
    weights_for: dict[int, np.ndarray] = {}
    for i in range(n_questions):
        scene = dataset.games[i % n_scenes].scene
        probs = weights_for.get(i % n_scenes)
        if probs is None:
            probs = lm.instantiation_probabilities(scene)
            weights_for[i % n_scenes] = probs
        idx = int(rng.choice(n_inst, p=probs))
        for word in lm.instantiations[idx].words:
            if word != EOQ:
                counts[word] = counts.get(word, 0) + 1
    descriptor = (f"pure-sampled questions n={n_questions} "
                  f"grammar_lambda={grounding_weight:g} dataset_seed={seed} "
                  f"rng_seed={seed} scenes={n_scenes} history=none")
    return FrequencyTable(counts=counts, source_descriptor=descriptor)


def save_frequency_table(table: FrequencyTable, path: str) -> None:
    doc = {"source_descriptor": table.source_descriptor,
           "counts": dict(sorted(table.counts.items()))}
    atomic_write(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_frequency_table(path: str) -> FrequencyTable:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if set(doc) != {"source_descriptor", "counts"}:
        raise FormatError(f"{path}: not a frequency table file")
    return FrequencyTable(counts={str(k): int(v) for k, v in doc["counts"].items()},
                          source_descriptor=doc["source_descriptor"])


@dataclass(frozen=True)
class MetricReport:
    """One run's metrics; after aggregation, means with stds and n_seeds."""

    label: str
    accuracy: float
    chair_i: float
    chair_s: float
    repetition_rate: float
    vocabulary_size: float
    rare_words: float
    per_turn: Optional[tuple[float, ...]] = None
    n_seeds: int = 1
    config: Optional[dict] = None  # strategy parameters, seed factored out
    accuracy_std: float = 0.0
    chair_i_std: float = 0.0
    chair_s_std: float = 0.0
    repetition_rate_std: float = 0.0
    vocabulary_size_std: float = 0.0
    rare_words_std: float = 0.0
    per_turn_std: Optional[tuple[float, ...]] = None

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "accuracy": self.accuracy,
            "chair_i": self.chair_i,
            "chair_s": self.chair_s,
            "repetition_rate": self.repetition_rate,
            "vocabulary_size": self.vocabulary_size,
            "rare_words": self.rare_words,
            "n_seeds": self.n_seeds,
            "accuracy_std": self.accuracy_std,
            "chair_i_std": self.chair_i_std,
            "chair_s_std": self.chair_s_std,
            "repetition_rate_std": self.repetition_rate_std,
            "vocabulary_size_std": self.vocabulary_size_std,
            "rare_words_std": self.rare_words_std,
        }
        if self.per_turn is not None:
            out["per_turn"] = list(self.per_turn)
        if self.per_turn_std is not None:
            out["per_turn_std"] = list(self.per_turn_std)
        if self.config is not None:
            out["config"] = self.config
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        kwargs = dict(doc)
        if "per_turn" in kwargs:
            kwargs["per_turn"] = tuple(kwargs["per_turn"])
        if "per_turn_std" in kwargs:
            kwargs["per_turn_std"] = tuple(kwargs["per_turn_std"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise FormatError(f"bad metric report record: {exc}") from None


# --- individual metrics ----------------------------------------------------


def task_accuracy(transcripts: Sequence[Transcript]) -> float:
    if not transcripts:
        raise EmptyCollectionError("no transcripts")
    wins = sum(1 for t in transcripts if t.success)
    return 100.0 * wins / len(transcripts)


def _argmax_candidate(posterior: Mapping[int, float]) -> int:
    return min(posterior.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def per_turn_accuracy(transcripts: Sequence[Transcript], T: int) -> tuple[float, ...]:
    """Accuracy of the running argmax guess after each of the first T turns."""
    if not transcripts:
        raise EmptyCollectionError("no transcripts")
    if T < 1:
        raise ValidationError("T must be >= 1")
    short = [t.game_id for t in transcripts if len(t.turns) < T]
    if short:
        raise ValidationError(
            f"{len(short)} transcript(s) have fewer than {T} turns "
            f"(first: {short[0]!r})")
    out = []
    for turn_index in range(T):
        hits = sum(
            1 for t in transcripts
            if _argmax_candidate(t.turns[turn_index].posterior) == t.target_id)
        out.append(100.0 * hits / len(transcripts))
    return tuple(out)


def prior_accuracy(transcripts: Sequence[Transcript]) -> float:
    """Turn-0 baseline: the uniform prior's argmax is the lowest candidate id."""
    if not transcripts:
        raise EmptyCollectionError("no transcripts")
    hits = sum(1 for t in transcripts
               if min(t.turns[0].posterior) == t.target_id)
    return 100.0 * hits / len(transcripts)


def extract_mentions(question_words: Sequence[str],
                     lexicon: Optional[Mapping[str, str]] = None) -> set[str]:
    """Category symbols whose surface forms occur among the question's words."""
    if lexicon is None:
        lexicon = category_surface_forms()
    return set(_mention_tokens(question_words, lexicon))


def _mention_tokens(question_words: Sequence[str],
                    lexicon: Mapping[str, str]) -> list[str]:
    return [lexicon[w] for w in question_words if w in lexicon]


def _games_by_id(games) -> dict[str, Game]:
    if isinstance(games, Dataset):
        games = games.games
    if isinstance(games, Mapping):
        return dict(games)
    return {g.game_id: g for g in games}


def chair_metrics(transcripts: Sequence[Transcript], games,
                  lexicon: Optional[Mapping[str, str]] = None,
                  pooled: bool = False) -> tuple[float, float]:
    """Hallucination rates: per-mention (chair_i) and per-dialogue (chair_s).

    A mention is hallucinated when its category is absent from the whole
    scene. chair_i averages each dialogue's hallucinated-mention fraction
    over dialogues that mention anything (pooled=True instead divides the
    global mention totals); chair_s is the share of dialogues with at
    least one hallucinated mention.
    """
    if not transcripts:
        raise EmptyCollectionError("no transcripts")
    if lexicon is None:
        lexicon = category_surface_forms()
    table = _games_by_id(games)
    ratios = []
    pooled_halluc = 0
    pooled_mentions = 0
    dialogues_hallucinating = 0
    for t in transcripts:
        game = table.get(t.game_id)
        if game is None:
            raise ValidationError(f"no game found for transcript {t.game_id!r}")
        scene_cats = game.scene.categories
        mentions: list[str] = []
        for turn in t.turns:
            mentions.extend(_mention_tokens(turn.question, lexicon))
        halluc = sum(1 for m in mentions if m not in scene_cats)
        if mentions:
            ratios.append(halluc / len(mentions))
        pooled_halluc += halluc
        pooled_mentions += len(mentions)
        if halluc:
            dialogues_hallucinating += 1
    if pooled:
        chair_i = (100.0 * pooled_halluc / pooled_mentions
                   if pooled_mentions else 0.0)
    else:
        chair_i = 100.0 * float(np.mean(ratios)) if ratios else 0.0
    chair_s = 100.0 * dialogues_hallucinating / len(transcripts)
    return chair_i, chair_s


def _stripped_questions(t: Transcript) -> list[tuple[str, ...]]:
    return [tuple(w for w in turn.question if w != EOQ) for turn in t.turns]


def repetition_rate(transcripts: Sequence[Transcript]) -> float:
    """Share of games asking the exact same question twice (EOQ ignored)."""
    if not transcripts:
        return 0.0
    repeated = 0
    for t in transcripts:
        questions = _stripped_questions(t)
        if len(set(questions)) < len(questions):
            repeated += 1
    return 100.0 * repeated / len(transcripts)


def vocabulary_stats(transcripts: Sequence[Transcript],
                     freq_table: FrequencyTable,
                     rare_threshold: int = RARE_THRESHOLD) -> tuple[int, int]:
    """(word types used, types rarer than the threshold in the reference corpus)."""
    types: set[str] = set()
    for t in transcripts:
        for turn in t.turns:
            types.update(w for w in turn.question if w != EOQ)
    rare = sum(1 for w in types if freq_table.count(w) < rare_threshold)
    return len(types), rare


def metric_report(transcripts: Sequence[Transcript], games,
                  freq_table: FrequencyTable,
                  per_turn_T: Optional[int] = None,
                  label: str = "", config: Optional[dict] = None,
                  pooled_chair: bool = False) -> MetricReport:
    """Bundle every metric for one run of transcripts."""
    chair_i, chair_s = chair_metrics(transcripts, games, pooled=pooled_chair)
    vocab, rare = vocabulary_stats(transcripts, freq_table)
    per_turn = (per_turn_accuracy(transcripts, per_turn_T)
                if per_turn_T else None)
    return MetricReport(
        label=label,
        accuracy=task_accuracy(transcripts),
        chair_i=chair_i,
        chair_s=chair_s,
        repetition_rate=repetition_rate(transcripts),
        vocabulary_size=vocab,
        rare_words=rare,
        per_turn=per_turn,
        config=config,
    )


# --- aggregation ------------------------------------------------------------

_SCALAR_FIELDS = ("accuracy", "chair_i", "chair_s", "repetition_rate",
                  "vocabulary_size", "rare_words")


def aggregate_over_seeds(reports: Sequence[MetricReport]) -> MetricReport:
    """Mean and population std of every metric across same-config runs."""
    if not reports:
        raise EmptyCollectionError("no reports to aggregate")
    first = reports[0]
    for r in reports[1:]:
        if r.config != first.config:
            raise AggregationError(
                f"cannot aggregate mixed configs: {r.config} vs {first.config}")
        if (r.per_turn is None) != (first.per_turn is None):
            raise AggregationError("cannot aggregate mixed per-turn shapes")
        if r.per_turn is not None and len(r.per_turn) != len(first.per_turn):
            raise AggregationError("cannot aggregate mixed per-turn lengths")
    values = {}
    for name in _SCALAR_FIELDS:
        column = np.array([getattr(r, name) for r in reports], dtype=float)
        values[name] = float(column.mean())
        values[name + "_std"] = float(column.std(ddof=0))
    per_turn = per_turn_std = None
    if first.per_turn is not None:
        matrix = np.array([r.per_turn for r in reports], dtype=float)
        per_turn = tuple(float(v) for v in matrix.mean(axis=0))
        per_turn_std = tuple(float(v) for v in matrix.std(axis=0, ddof=0))
    return MetricReport(label=first.label, per_turn=per_turn,
                        per_turn_std=per_turn_std, n_seeds=len(reports),
                        config=first.config, **values)


# --- comparison table rendering ---------------------------------------------

_COLUMNS = (("accuracy", "Accuracy"), ("chair_i", "CHAIR-i"),
            ("chair_s", "CHAIR-s"), ("repetition_rate", "Repetitions"),
            ("vocabulary_size", "Vocabulary"), ("rare_words", "Rare words"))


def render_comparison_csv(reports: Sequence[MetricReport]) -> str:
    header = ["label"]
    for name, _ in _COLUMNS:
        header += [f"{name}_mean", f"{name}_std"]
    lines = [",".join(header)]
    for r in reports:
        row = [r.label]
        for name, _ in _COLUMNS:
            row.append(f"{getattr(r, name):.4f}")
            row.append(f"{getattr(r, name + '_std'):.4f}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def render_comparison_text(reports: Sequence[MetricReport]) -> str:
    label_w = max([len(r.label) for r in reports] + [len("strategy")])
    headers = [title for _, title in _COLUMNS]
    widths = [max(len(h), 14) for h in headers]
    out = ["strategy".ljust(label_w) + "  " +
           "  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    out.append("-" * len(out[0]))
    for r in reports:
        cells = []
        for (name, _), w in zip(_COLUMNS, widths):
            mean = getattr(r, name)
            std = getattr(r, name + "_std")
            cells.append(f"{mean:.2f} ({std:.2f})".rjust(w))
        out.append(r.label.ljust(label_w) + "  " + "  ".join(cells))
    return "\n".join(out) + "\n"
