"""Weighted question-template automaton used as the Questioner language model.

Questions are template instantiations over a closed lexicon. Every
instantiation carries a weight mixing a scene-grounded term with a
scene-blind prior, so next-token conditionals are exact ratios of
subtree weight sums and the full question distribution can be
enumerated for oracle checks.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    FormatError,
    InvalidContinuationError,
    ParseError,
    SequenceCompleteError,
    TruncationError,
    ValidationError,
)
from .world import (
    ANIMALS,
    CATEGORIES,
    COLORS,
    COUNT_WORDS,
    ORDINAL_WORDS,
    ROWBANDS,
    SIDES,
    SIZES,
    Predicate,
    Scene,
    atomic_write,
    plural_of,
)

EOQ = "<eoq>"

_SLOT_RE = re.compile(r"<([a-z_]+)>")

# Slot fillers: (surface word, semantic value handed to the predicate).
SLOT_DOMAINS: dict[str, tuple[tuple[str, object], ...]] = {
    "category": tuple((c, c) for c in CATEGORIES),
    "category_plural": tuple((plural_of(c), c) for c in CATEGORIES),
    "color": tuple((c, c) for c in COLORS),
    "size": tuple((s, s) for s in SIZES),
    "side": tuple((s, s) for s in SIDES),
    "rowband": tuple((b, b) for b in ROWBANDS),
    "ordinal": tuple((w, i + 1) for i, w in enumerate(ORDINAL_WORDS)),
    "count": tuple((w, n) for n, w in sorted(COUNT_WORDS.items())),
}

GROUNDING_RULES = ("count", "count_sq", "presence", "const")

# Salience model: object-anchored templates weigh by how much of the scene
# satisfies them (squared for bare category/color mentions, the way salience
# concentrates on repeated objects); position/attribute binaries only need
# to be applicable. Prior weights lean toward category-bearing templates,
# which is where ungrounded (hallucinated) mass lives at lambda < 1, plus
# a boost for ordinals so position questions stay reachable once the
# salient category/color questions have been spent.
DEFAULT_TEMPLATES = {
    "templates": [
        {"id": "T_cat", "tokens_with_slots": "is it a <category> ?",
         "predicate": {"kind": "category", "value": "$category"},
         "grounded_weight_rule": "count_sq", "prior_weight": 24.0},
        {"id": "T_group", "tokens_with_slots": "is it one of the <category_plural> ?",
         "predicate": {"kind": "category", "value": "$category_plural"},
         "grounded_weight_rule": "count", "prior_weight": 3.0},
        {"id": "T_color", "tokens_with_slots": "is it <color> ?",
         "predicate": {"kind": "color", "value": "$color"},
         "grounded_weight_rule": "count_sq", "prior_weight": 3.0},
        {"id": "T_size", "tokens_with_slots": "is it <size> ?",
         "predicate": {"kind": "size", "value": "$size"},
         "grounded_weight_rule": "presence", "prior_weight": 0.5},
        {"id": "T_side", "tokens_with_slots": "is it on the <side> ?",
         "predicate": {"kind": "side", "value": "$side"},
         "grounded_weight_rule": "presence", "prior_weight": 0.5},
        {"id": "T_rowband", "tokens_with_slots": "is it in the <rowband> row ?",
         "predicate": {"kind": "rowband", "value": "$rowband"},
         "grounded_weight_rule": "presence", "prior_weight": 0.5},
        {"id": "T_ordinal", "tokens_with_slots": "is it the <ordinal> from the left ?",
         "predicate": {"kind": "ordinal", "value": "$ordinal"},
         "grounded_weight_rule": "presence", "prior_weight": 12.0},
        {"id": "T_prefix",
         "tokens_with_slots": "is it among the first <count> from the left ?",
         "predicate": {"kind": "ordinal_max", "value": "$count"},
         "grounded_weight_rule": "presence", "prior_weight": 0.5},
        {"id": "T_cat_color", "tokens_with_slots": "is it a <color> <category> ?",
         "predicate": {"kind": "and", "parts": [
             {"kind": "color", "value": "$color"},
             {"kind": "category", "value": "$category"}]},
         "grounded_weight_rule": "count", "prior_weight": 45.0},
        {"id": "T_animal", "tokens_with_slots": "is it an animal ?",
         "predicate": {"kind": "category_in", "values": sorted(ANIMALS)},
         "grounded_weight_rule": "count", "prior_weight": 0.5},
        {"id": "T_cat_side", "tokens_with_slots": "is it the <category> on the <side> ?",
         "predicate": {"kind": "and", "parts": [
             {"kind": "category", "value": "$category"},
             {"kind": "side", "value": "$side"}]},
         "grounded_weight_rule": "count", "prior_weight": 12.0},
        {"id": "T_near", "tokens_with_slots": "is it next to a <category> ?",
         "predicate": {"kind": "adjacent_category", "value": "$category"},
         "grounded_weight_rule": "count", "prior_weight": 9.0},
    ]
}

_TEMPLATE_FIELDS = {"id", "tokens_with_slots", "predicate",
                    "grounded_weight_rule", "prior_weight"}


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigurationError("vocabulary tokens must be unique")
        if EOQ not in self.tokens:
            raise ConfigurationError("vocabulary must contain the EOQ marker")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise ValidationError(f"unknown token {token!r}") from None

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    @property
    def eoq_id(self) -> int:
        return self._ids[EOQ]

    def encode(self, words: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.id_of(w) for w in words)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in ids)


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    """Probability vector over a vocabulary with its entropy cached."""

    probs: np.ndarray
    entropy_nats: float

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "TokenDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1:
            raise ValidationError("probs must be a flat vector")
        if np.any(probs < 0):
            raise ValidationError("probs must be nonnegative")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"probs sum to {total}, expected 1")
        probs = probs.copy()
        probs.flags.writeable = False
        return cls(probs=probs, entropy_nats=_entropy(probs))

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0.0)

    def __len__(self) -> int:
        return len(self.probs)


def _entropy(probs: np.ndarray) -> float:
    live = probs[probs > 0.0]
    return float(max(0.0, -(live * np.log(live)).sum()))


@dataclass(frozen=True)
class Instantiation:
    tokens: tuple[int, ...]
    words: tuple[str, ...]
    template_id: str
    predicate: Predicate
    rule: str
    prior: float


@dataclass(frozen=True)
class LmState:
    """Immutable decoding position: scene, dialogue so far, partial question.

    Carries a reference to its automaton so sequence-level operations can
    be written against states alone.
    """

    scene: Scene
    history: tuple[tuple[tuple[int, ...], str], ...]
    partial_tokens: tuple[int, ...]
    node: int
    lm: "GrammarLm" = field(repr=False, compare=False, default=None)

    @property
    def is_complete(self) -> bool:
        return self.node < 0

    @property
    def pending_question(self) -> tuple[int, ...]:
        if not self.is_complete:
            raise ValidationError("question still under construction")
        return self.partial_tokens


def _substitute(spec, binding: dict[str, object]):
    if isinstance(spec, str) and spec.startswith("$"):
        name = spec[1:]
        if name not in binding:
            raise ConfigurationError(f"predicate references unknown slot {name!r}")
        return binding[name]
    if isinstance(spec, dict):
        return {k: _substitute(v, binding) for k, v in spec.items()}
    if isinstance(spec, list):
        return [_substitute(v, binding) for v in spec]
    return spec


class GrammarLm:
    """Exactly analyzable question LM over weighted template instantiations.

    Instantiation weight is lambda * grounded + (1 - lambda) * prior,
    further scaled by history_penalty per previous ask of the same
    question. Next-token conditionals are ratios of weight sums over
    the trie of sorted token sequences, so stepwise products equal the
    question's overall probability by telescoping.
    """

    def __init__(self, template_docs: Sequence[dict],
                 grounding_weight: float = 0.8,
                 history_penalty: float = 0.5):
        if not 0.0 <= grounding_weight <= 1.0:
            raise ConfigurationError("grounding_weight must be in [0, 1]")
        if not 0.0 < history_penalty <= 1.0:
            raise ConfigurationError("history_penalty must be in (0, 1]")
        if not template_docs:
            raise ConfigurationError("at least one template is required")
        self.grounding_weight = float(grounding_weight)
        self.history_penalty = float(history_penalty)
        self._template_docs = tuple(_validate_template_doc(t) for t in template_docs)
        ids = [t["id"] for t in self._template_docs]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("template ids must be unique")

        self.vocabulary = _build_vocabulary(self._template_docs)
        self._insts = _expand_instantiations(self._template_docs, self.vocabulary)
        self._parse_table = {inst.tokens: inst for inst in self._insts}
        if len(self._parse_table) != len(self._insts):
            raise ConfigurationError("two instantiations share a token sequence")
        self._prior = np.array([inst.prior for inst in self._insts])
        self._trie = _Trie(self._insts)
        self._grounded_cache: dict[Scene, np.ndarray] = {}
        self._weight_cache: dict[tuple, np.ndarray] = {}

    # -- construction / serialization -----------------------------------

    @classmethod
    def from_spec(cls, doc: dict, **overrides) -> "GrammarLm":
        if not isinstance(doc, dict):
            raise FormatError("grammar document must be an object")
        allowed = {"templates", "grounding_weight", "history_penalty"}
        unknown = set(doc) - allowed
        if unknown:
            raise FormatError(f"unknown field(s) {sorted(unknown)} in grammar document")
        if "templates" not in doc:
            raise FormatError("grammar document lacks a templates list")
        kwargs = {"grounding_weight": doc.get("grounding_weight", 0.8),
                  "history_penalty": doc.get("history_penalty", 0.5)}
        kwargs.update(overrides)
        return cls(doc["templates"], **kwargs)

    def to_spec(self) -> dict:
        return {"templates": [dict(t) for t in self._template_docs],
                "grounding_weight": self.grounding_weight,
                "history_penalty": self.history_penalty}

    @property
    def instantiations(self) -> tuple[Instantiation, ...]:
        """All complete questions in sorted token order (read-only)."""
        return self._insts

    def instantiation_probabilities(
            self, scene: Scene,
            history: tuple[tuple[tuple[int, ...], str], ...] = ()) -> np.ndarray:
        """Exact question distribution aligned to `instantiations`."""
        sums = self._prefix_sums(scene, tuple(history))
        w = np.diff(sums)
        return w / w.sum()

    # -- state machine ----------------------------------------------------

    def start_state(self, scene: Scene,
                    history: Iterable[tuple[tuple[int, ...], str]] = ()) -> LmState:
        if not isinstance(scene, Scene):
            raise ValidationError("start_state needs a Scene")
        return LmState(scene=scene, history=tuple(history),
                       partial_tokens=(), node=self._trie.root, lm=self)

    def next_token_distribution(self, state: LmState) -> TokenDistribution:
        if state.is_complete:
            raise SequenceCompleteError("question already ended with EOQ")
        sums = self._prefix_sums(state.scene, state.history)
        lo, hi = self._trie.span(state.node)
        denom = sums[hi] - sums[lo]
        probs = np.zeros(len(self.vocabulary))
        for token_id, child in self._trie.children(state.node).items():
            clo, chi = self._trie.span(child)
            probs[token_id] = (sums[chi] - sums[clo]) / denom
        return TokenDistribution.from_probs(probs)

    def advance(self, state: LmState, token: int) -> LmState:
        if state.is_complete:
            raise SequenceCompleteError("question already ended with EOQ")
        children = self._trie.children(state.node)
        child = children.get(int(token))
        if child is None:
            raise InvalidContinuationError(
                f"token {self.vocabulary.token(token)!r} does not extend "
                f"{' '.join(self.vocabulary.decode(state.partial_tokens))!r}")
        sums = self._prefix_sums(state.scene, state.history)
        clo, chi = self._trie.span(child)
        if sums[chi] - sums[clo] <= 0.0:
            raise InvalidContinuationError(
                f"token {self.vocabulary.token(token)!r} has zero probability here")
        tokens = state.partial_tokens + (int(token),)
        if token == self.vocabulary.eoq_id:
            return LmState(scene=state.scene, history=state.history,
                           partial_tokens=tokens, node=-1, lm=self)
        return LmState(scene=state.scene, history=state.history,
                       partial_tokens=tokens, node=child, lm=self)

    def enumerate_questions(self, state: LmState,
                            max_len: int = 16) -> list[tuple[tuple[int, ...], float]]:
        """All positive-probability completions of `state` with exact probabilities.

        Sequences are the continuation tokens (ending in EOQ); for a fresh
        state they are whole questions. Sorted by probability descending,
        ties by ascending token ids.
        """
        if max_len < 1:
            raise ConfigurationError("max_len must be positive")
        if state.is_complete:
            raise SequenceCompleteError("question already ended with EOQ")
        sums = self._prefix_sums(state.scene, state.history)
        lo, hi = self._trie.span(state.node)
        depth = len(state.partial_tokens)
        denom = sums[hi] - sums[lo]
        longest = max(len(self._insts[i].tokens) for i in range(lo, hi)) - depth
        if longest > max_len:
            raise TruncationError(
                f"max_len {max_len} cannot reach EOQ; need {longest}")
        out = []
        for i in range(lo, hi):
            p = (sums[i + 1] - sums[i]) / denom
            if p > 0.0:
                out.append((self._insts[i].tokens[depth:], p))
        out.sort(key=lambda item: (-item[1], item[0]))
        return out

    def parse_question(self, tokens: Sequence[int]) -> tuple[Predicate, str]:
        seq = tuple(int(t) for t in tokens)
        if not seq or seq[-1] != self.vocabulary.eoq_id:
            seq = seq + (self.vocabulary.eoq_id,)
        inst = self._parse_table.get(seq)
        if inst is None:
            raise ParseError(
                f"not a complete question: "
                f"{' '.join(self.vocabulary.decode(seq))!r}")
        return inst.predicate, inst.template_id

    def question_words(self, tokens: Sequence[int]) -> str:
        return " ".join(self.vocabulary.decode(tokens))

    # -- weights ----------------------------------------------------------

    def _grounded_vector(self, scene: Scene) -> np.ndarray:
        g = self._grounded_cache.get(scene)
        if g is None:
            g = np.empty(len(self._insts))
            for i, inst in enumerate(self._insts):
                if inst.rule == "const":
                    g[i] = 1.0
                    continue
                count = sum(1 for obj in scene.objects
                            if inst.predicate.holds(obj, scene))
                if inst.rule == "count":
                    g[i] = float(count)
                elif inst.rule == "count_sq":
                    g[i] = float(count * count)
                else:
                    g[i] = float(count > 0)
            g.flags.writeable = False
            self._grounded_cache[scene] = g
        return g

    def _prefix_sums(self, scene: Scene,
                     history: tuple[tuple[tuple[int, ...], str], ...]) -> np.ndarray:
        eoq = self.vocabulary.eoq_id
        asked: dict[int, int] = {}
        for question, _answer in history:
            seq = tuple(question)
            if not seq or seq[-1] != eoq:
                seq = seq + (eoq,)
            if seq not in self._parse_table:
                continue
            idx = self._trie.leaf_index(seq)
            asked[idx] = asked.get(idx, 0) + 1
        key = (scene, tuple(sorted(asked.items())))
        sums = self._weight_cache.get(key)
        if sums is None:
            lam = self.grounding_weight
            if lam > 0.0:
                w = lam * self._grounded_vector(scene) + (1.0 - lam) * self._prior
            else:
                w = self._prior.copy()
            for idx, times in asked.items():
                w[idx] *= self.history_penalty ** times
            sums = np.concatenate(([0.0], np.cumsum(w)))
            sums.flags.writeable = False
            if len(self._weight_cache) > 4096:
                self._weight_cache.clear()
            self._weight_cache[key] = sums
        return sums


class _Trie:
    """Prefix tree over the sorted instantiation token sequences.

    Each node covers a contiguous slice [lo, hi) of the sorted list, so
    subtree weight is a prefix-sum difference.
    """

    def __init__(self, insts: Sequence[Instantiation]):
        seqs = [inst.tokens for inst in insts]
        if any(seqs[i] >= seqs[i + 1] for i in range(len(seqs) - 1)):
            raise ConfigurationError("instantiations must be sorted and distinct")
        self._spans: list[tuple[int, int]] = []
        self._children: list[dict[int, int]] = []
        self._leaf: dict[tuple[int, ...], int] = {}
        self.root = self._build(seqs, 0, len(seqs), 0)

    def _build(self, seqs: list[tuple[int, ...]], lo: int, hi: int,
               depth: int) -> int:
        node = len(self._spans)
        self._spans.append((lo, hi))
        self._children.append({})
        i = lo
        while i < hi:
            if len(seqs[i]) == depth:
                # complete sequence ends here; EOQ is always the final
                # token so this only happens past an EOQ edge
                self._leaf[seqs[i]] = i
                i += 1
                continue
            tok = seqs[i][depth]
            j = i
            while j < hi and len(seqs[j]) > depth and seqs[j][depth] == tok:
                j += 1
            self._children[node][tok] = self._build(seqs, i, j, depth + 1)
            i = j
        return node

    def span(self, node: int) -> tuple[int, int]:
        return self._spans[node]

    def children(self, node: int) -> dict[int, int]:
        return self._children[node]

    def leaf_index(self, seq: tuple[int, ...]) -> int:
        return self._leaf[seq]


def _validate_template_doc(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise FormatError("template entry must be an object")
    unknown = set(doc) - _TEMPLATE_FIELDS
    if unknown:
        raise FormatError(f"unknown field(s) {sorted(unknown)} in template")
    missing = _TEMPLATE_FIELDS - set(doc)
    if missing:
        raise FormatError(f"missing field(s) {sorted(missing)} in template")
    if doc["grounded_weight_rule"] not in GROUNDING_RULES:
        raise ConfigurationError(
            f"unknown grounded_weight_rule {doc['grounded_weight_rule']!r}")
    if not (isinstance(doc["prior_weight"], (int, float))
            and doc["prior_weight"] > 0):
        raise ConfigurationError("prior_weight must be positive")
    return doc


def _pattern_parts(pattern: str) -> list[tuple[str, str]]:
    """Split a pattern into ('word', token) and ('slot', name) parts."""
    parts = []
    for piece in pattern.split():
        m = _SLOT_RE.fullmatch(piece)
        if m:
            name = m.group(1)
            if name not in SLOT_DOMAINS:
                raise ConfigurationError(f"unknown slot {name!r} in pattern")
            parts.append(("slot", name))
        else:
            parts.append(("word", piece))
    if not parts:
        raise ConfigurationError("empty template pattern")
    return parts


def _build_vocabulary(template_docs: Sequence[dict]) -> Vocabulary:
    words = {EOQ}
    for doc in template_docs:
        for kind, value in _pattern_parts(doc["tokens_with_slots"]):
            if kind == "word":
                words.add(value)
            else:
                words.update(surface for surface, _ in SLOT_DOMAINS[value])
    return Vocabulary(tokens=tuple(sorted(words)))


def _expand_instantiations(template_docs: Sequence[dict],
                           vocab: Vocabulary) -> tuple[Instantiation, ...]:
    insts: list[Instantiation] = []
    for doc in template_docs:
        parts = _pattern_parts(doc["tokens_with_slots"])
        slot_names = []
        for kind, value in parts:
            if kind == "slot" and value not in slot_names:
                slot_names.append(value)
        domains = [SLOT_DOMAINS[name] for name in slot_names]
        combos = list(itertools.product(*domains)) if slot_names else [()]
        prior_each = doc["prior_weight"] / len(combos)
        for combo in combos:
            surface = {name: pair[0] for name, pair in zip(slot_names, combo)}
            binding = {name: pair[1] for name, pair in zip(slot_names, combo)}
            words = tuple(
                surface[value] if kind == "slot" else value
                for kind, value in parts) + (EOQ,)
            predicate = Predicate.from_spec(_substitute(doc["predicate"], binding))
            insts.append(Instantiation(
                tokens=vocab.encode(words), words=words,
                template_id=doc["id"], predicate=predicate,
                rule=doc["grounded_weight_rule"], prior=prior_each))
    insts.sort(key=lambda inst: inst.tokens)
    return tuple(insts)


def default_grammar(grounding_weight: float = 0.8,
                    history_penalty: float = 0.5) -> GrammarLm:
    return GrammarLm(DEFAULT_TEMPLATES["templates"],
                     grounding_weight=grounding_weight,
                     history_penalty=history_penalty)


def load_grammar(path: str, **overrides) -> GrammarLm:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return GrammarLm.from_spec(doc, **overrides)


def save_grammar(lm: GrammarLm, path: str) -> None:
    atomic_write(path, json.dumps(lm.to_spec(), indent=2, sort_keys=True) + "\n")
