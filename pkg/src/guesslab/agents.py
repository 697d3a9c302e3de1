"""Game-loop agents: truthful Oracle, Bayesian Guesser, turn protocol.

The Oracle parses each question and answers from the target's ground
truth; the Guesser keeps a posterior over candidates updated with a
symmetric-noise likelihood (noise 0 means hard filtering). A scripted
bisection questioner provides an informativeness ceiling for sanity
studies; the LM-driven strategies come from the decoding module.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .decoding import (
    DecodingConfig,
    ScoredSequence,
    decode_question,
    hypothesis_answer,
    turn_stream,
)
from .errors import FormatError, ParseError, ValidationError
from .grammar_lm import GrammarLm
from .world import Game, Predicate, Scene, atomic_write, object_predicates


class Answer(str, enum.Enum):
    YES = "yes"
    NO = "no"
    NA = "na"

    @classmethod
    def coerce(cls, value) -> "Answer":
        if isinstance(value, Answer):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"not an answer: {value!r}") from None


@dataclass(frozen=True)
class GuesserState:
    """Posterior over candidate ids with a symmetric answer-noise model."""

    posterior: dict[int, float]
    epsilon: float = 0.0
    was_reset: bool = False

    def __post_init__(self):
        if not self.posterior:
            raise ValidationError("posterior must cover at least one candidate")
        if not 0.0 <= self.epsilon < 0.5:
            raise ValidationError("epsilon must be in [0, 0.5)")
        total = sum(self.posterior.values())
        if abs(total - 1.0) > 1e-9 or min(self.posterior.values()) < 0.0:
            raise ValidationError("posterior must be a normalized distribution")

    @classmethod
    def uniform(cls, candidate_ids: Sequence[int],
                epsilon: float = 0.0) -> "GuesserState":
        ids = list(candidate_ids)
        return cls(posterior={int(c): 1.0 / len(ids) for c in ids},
                   epsilon=epsilon)

    def argmax_candidate(self) -> int:
        return min(self.posterior.items(), key=lambda kv: (-kv[1], kv[0]))[0]

    def updated(self, question_tokens: Sequence[int], answer,
                scene: Scene, lm: GrammarLm) -> "GuesserState":
        """Bayes step for one (question, answer) pair; na leaves it unchanged."""
        answer = Answer.coerce(answer)
        if answer is Answer.NA:
            return self
        try:
            predicate, _ = lm.parse_question(tuple(question_tokens))
        except ParseError:
            return self
        expect = answer is Answer.YES
        new = {}
        for cid, prior in self.posterior.items():
            match = predicate.holds(scene.object_by_id(cid), scene) == expect
            new[cid] = prior * ((1.0 - self.epsilon) if match else self.epsilon)
        total = sum(new.values())
        if total <= 0.0:
            n = len(new)
            return GuesserState(posterior={c: 1.0 / n for c in new},
                                epsilon=self.epsilon, was_reset=True)
        return GuesserState(posterior={c: v / total for c, v in new.items()},
                            epsilon=self.epsilon, was_reset=self.was_reset)


def guesser_update(guesser: GuesserState, question_tokens: Sequence[int],
                   answer, scene: Scene, lm: GrammarLm) -> GuesserState:
    return guesser.updated(question_tokens, answer, scene, lm)


def oracle_answer(game: Game, question_tokens: Sequence[int],
                  lm: GrammarLm) -> Answer:
    """Truthful answer about the true target; na for unparseable questions."""
    return Answer(hypothesis_answer(lm, game.scene, question_tokens,
                                    game.target_id))


def internal_oracle_answer(scene: Scene, question_tokens: Sequence[int],
                           hypothesis_id: int, lm: GrammarLm) -> Answer:
    """Same contract as the Oracle but pretends `hypothesis_id` is the target."""
    return Answer(hypothesis_answer(lm, scene, question_tokens, hypothesis_id))


@dataclass(frozen=True)
class Turn:
    question: tuple[str, ...]  # surface words, EOQ marker included
    answer: str
    posterior: dict[int, float]  # snapshot after the update


@dataclass(frozen=True)
class Transcript:
    game_id: str
    config: Optional[DecodingConfig]  # None for scripted questioners
    turns: tuple[Turn, ...]
    final_guess: int
    success: bool
    target_id: int

    @property
    def config_digest(self) -> str:
        if self.config is None:
            return "scripted_bisection"
        return self.config.digest()


Questioner = Callable[[object, GuesserState], ScoredSequence]


def play_game(game: Game, lm: GrammarLm, config: Optional[DecodingConfig],
              turns: int = 5, rng: Optional[np.random.Generator] = None,
              epsilon: float = 0.0,
              questioner: Optional[Questioner] = None) -> Transcript:
    """Run one full dialogue and return its transcript.

    Per-turn RNG streams are derived from (config.rng_seed, game_id,
    turn index) unless an explicit generator is supplied, so any game
    can be replayed in isolation.
    """
    if turns < 1:
        raise ValidationError("turns must be >= 1")
    if config is None and questioner is None:
        raise ValidationError("either a config or a questioner is required")
    guesser = GuesserState.uniform(game.candidate_ids, epsilon)
    history: tuple = ()
    turn_records = []
    for t in range(turns):
        state = lm.start_state(game.scene, history)
        if questioner is not None:
            seq = questioner(state, guesser)
        else:
            stream = rng if rng is not None else turn_stream(
                config.rng_seed, game.game_id, t)
            seq = decode_question(state, config, guesser=guesser, rng=stream)
        answer = oracle_answer(game, seq.tokens, lm)
        guesser = guesser.updated(seq.tokens, answer, game.scene, lm)
        history = history + ((seq.tokens, answer.value),)
        turn_records.append(Turn(
            question=lm.vocabulary.decode(seq.tokens),
            answer=answer.value,
            posterior=dict(guesser.posterior)))
    final_guess = guesser.argmax_candidate()
    return Transcript(game_id=game.game_id, config=config,
                      turns=tuple(turn_records), final_guess=final_guess,
                      success=final_guess == game.target_id,
                      target_id=game.target_id)


# --- scripted bisection questioner ---------------------------------------


def bisection_questioner(lm: GrammarLm) -> Questioner:
    """Questioner that halves the live candidate set each turn.

    Picks the scene predicate whose worst-case split of the current
    positive-posterior candidates is smallest, then asks the
    lexicographically first grammar question carrying that predicate.
    """
    by_predicate: dict[Predicate, tuple[int, ...]] = {}
    for inst in lm.instantiations:
        prev = by_predicate.get(inst.predicate)
        if prev is None or inst.tokens < prev:
            by_predicate[inst.predicate] = inst.tokens

    def choose(state, guesser: GuesserState) -> ScoredSequence:
        scene = state.scene
        live = [cid for cid, p in sorted(guesser.posterior.items())
                if p > 1e-12]
        best_tokens = None
        best_worst = None
        for predicate in object_predicates(scene):
            tokens = by_predicate.get(predicate)
            if tokens is None:
                continue
            n_yes = sum(1 for cid in live
                        if predicate.holds(scene.object_by_id(cid), scene))
            worst = max(n_yes, len(live) - n_yes)
            if worst == len(live) and len(live) > 1:
                continue  # non-splitting question, useless here
            if best_worst is None or worst < best_worst:
                best_tokens, best_worst = tokens, worst
        if best_tokens is None:
            # singleton support: confirm it via its ordinal question
            best_tokens = by_predicate[Predicate(
                "ordinal", _ordinal_of(scene, live[0]))]
        return ScoredSequence(tokens=best_tokens,
                              logprob=_sequence_logprob(state, best_tokens))

    return choose


def _ordinal_of(scene: Scene, cid: int) -> int:
    from .world import scene_ordinals
    return scene_ordinals(scene)[cid]


def _sequence_logprob(state, tokens: Sequence[int]) -> float:
    lm = state.lm
    logprob = 0.0
    for token in tokens:
        d = lm.next_token_distribution(state)
        p = float(d.probs[token])
        if p <= 0.0:
            return -math.inf
        logprob += math.log(p)
        state = lm.advance(state, token)
    return min(logprob, 0.0)


# --- transcript interchange -----------------------------------------------

_RECORD_FIELDS = {"game_id", "target_id", "config", "config_digest",
                  "turns", "final_guess", "success"}
_TURN_FIELDS = {"question", "answer", "posterior"}

SCRIPTED_CONFIG = {"strategy": "scripted_bisection"}


def transcript_to_dict(t: Transcript) -> dict:
    return {
        "game_id": t.game_id,
        "target_id": t.target_id,
        "config": dict(SCRIPTED_CONFIG) if t.config is None else t.config.to_dict(),
        "config_digest": t.config_digest,
        "turns": [
            {"question": list(turn.question), "answer": turn.answer,
             "posterior": {str(c): p for c, p in sorted(turn.posterior.items())}}
            for turn in t.turns
        ],
        "final_guess": t.final_guess,
        "success": t.success,
    }


def transcript_from_dict(doc: dict) -> Transcript:
    if not isinstance(doc, dict):
        raise FormatError("transcript record must be an object")
    unknown = set(doc) - _RECORD_FIELDS
    if unknown:
        raise FormatError(f"unknown field(s) {sorted(unknown)} in transcript")
    missing = _RECORD_FIELDS - set(doc)
    if missing:
        raise FormatError(f"missing field(s) {sorted(missing)} in transcript")
    config_doc = doc["config"]
    if config_doc == SCRIPTED_CONFIG:
        config = None
    else:
        config = DecodingConfig.from_dict(config_doc)
    turns = []
    for turn in doc["turns"]:
        extra = set(turn) - _TURN_FIELDS
        if extra:
            raise FormatError(
                f"unknown field(s) {sorted(extra)} in turn of "
                f"game {doc['game_id']!r}")
        turns.append(Turn(
            question=tuple(turn["question"]),
            answer=Answer.coerce(turn["answer"]).value,
            posterior={int(c): float(p) for c, p in turn["posterior"].items()}))
    t = Transcript(game_id=doc["game_id"], config=config, turns=tuple(turns),
                   final_guess=int(doc["final_guess"]),
                   success=bool(doc["success"]),
                   target_id=int(doc["target_id"]))
    if doc["config_digest"] != t.config_digest:
        raise FormatError(f"config digest mismatch in game {t.game_id!r}")
    return t


def serialize_transcripts(transcripts: Sequence[Transcript]) -> str:
    lines = [json.dumps(transcript_to_dict(t), sort_keys=True)
             for t in transcripts]
    return "".join(line + "\n" for line in lines)


def save_transcripts(transcripts: Sequence[Transcript], path: str) -> None:
    atomic_write(path, serialize_transcripts(transcripts))


def load_transcripts(path: str) -> list[Transcript]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc.msg}") from exc
            out.append(transcript_from_dict(doc))
    return out
