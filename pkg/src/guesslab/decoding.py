"""Decoding strategies over the question LM.

Two layers: distribution filters (top-k, nucleus, typical) that reshape a
single next-token distribution, and sequence drivers (greedy, beam,
Confirm-it re-ranking, stochastic loop) that produce whole questions.
All tie-breaking is deterministic so runs are bit-for-bit reproducible.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    TruncationError,
    ValidationError,
)
from .grammar_lm import GrammarLm, LmState, TokenDistribution
from .world import Scene

STRATEGIES = ("greedy", "beam", "confirm_it", "pure_sampling",
              "top_k", "nucleus", "typical")

# comparisons of probabilities use this absolute slack before tie-breaking
_EPS = 1e-12

DEFAULT_MAX_LEN = 16


@dataclass(frozen=True)
class DecodingConfig:
    """A fully specified strategy choice; parameters present iff used."""

    strategy: str
    beam_size: Optional[int] = None
    k: Optional[int] = None
    p: Optional[float] = None
    tau: Optional[float] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        needs_beam = self.strategy in ("beam", "confirm_it")
        if needs_beam:
            if self.beam_size is None:
                object.__setattr__(self, "beam_size", 3)
            if self.beam_size < 1:
                raise ConfigurationError("beam_size must be >= 1")
        elif self.beam_size is not None:
            raise ConfigurationError(
                f"beam_size does not apply to {self.strategy}")
        if self.strategy == "top_k":
            if self.k is None or self.k < 1:
                raise ConfigurationError("top_k requires k >= 1")
        elif self.k is not None:
            raise ConfigurationError(f"k does not apply to {self.strategy}")
        if self.strategy == "nucleus":
            if self.p is None or not 0.0 < self.p <= 1.0:
                raise ConfigurationError("nucleus requires p in (0, 1]")
        elif self.p is not None:
            raise ConfigurationError(f"p does not apply to {self.strategy}")
        if self.strategy == "typical":
            if self.tau is None or not 0.0 < self.tau <= 1.0:
                raise ConfigurationError("typical requires tau in (0, 1]")
        elif self.tau is not None:
            raise ConfigurationError(f"tau does not apply to {self.strategy}")
        try:
            seed = int(self.rng_seed)
        except (TypeError, ValueError):
            raise ConfigurationError("rng_seed must be a non-negative integer")
        if seed < 0:
            raise ConfigurationError("rng_seed must be a non-negative integer")
        object.__setattr__(self, "rng_seed", seed)

    @property
    def is_stochastic(self) -> bool:
        return self.strategy in ("pure_sampling", "top_k", "nucleus", "typical")

    def label(self) -> str:
        if self.strategy == "beam":
            return f"beam(B={self.beam_size})"
        if self.strategy == "confirm_it":
            return f"confirm_it(B={self.beam_size})"
        if self.strategy == "top_k":
            return f"top_k(k={self.k})"
        if self.strategy == "nucleus":
            return f"nucleus(p={self.p:g})"
        if self.strategy == "typical":
            return f"typical(tau={self.tau:g})"
        return self.strategy

    def to_dict(self) -> dict:
        out = {"strategy": self.strategy, "rng_seed": self.rng_seed}
        for name in ("beam_size", "k", "p", "tau"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "DecodingConfig":
        if not isinstance(doc, dict):
            raise ConfigurationError("config must be an object")
        allowed = {"strategy", "beam_size", "k", "p", "tau", "rng_seed"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigurationError(f"unknown config field(s) {sorted(unknown)}")
        return cls(**doc)

    def digest(self) -> str:
        """Identity of the configuration with the seed factored out."""
        doc = self.to_dict()
        doc.pop("rng_seed")
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ScoredSequence:
    tokens: tuple[int, ...]
    logprob: float

    def __post_init__(self):
        if self.logprob > 1e-9:
            raise ValidationError(f"logprob {self.logprob} must be <= 0")


def turn_stream(global_seed: int, game_id: str, turn_index: int) -> np.random.Generator:
    """Independent per-turn RNG stream; stable across scheduling order."""
    blob = f"{global_seed}|{game_id}|{turn_index}".encode()
    digest = hashlib.sha256(blob).digest()
    entropy = int.from_bytes(digest[:16], "big")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


# --- distribution filters -------------------------------------------------


def _renormalized(probs: np.ndarray, keep: np.ndarray) -> TokenDistribution:
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return TokenDistribution.from_probs(out / out.sum())


def _descending_order(probs: np.ndarray) -> np.ndarray:
    # stable sort on -p keeps ties in ascending token index order
    return np.argsort(-probs, kind="stable")


def topk_filter(d: TokenDistribution, k: int) -> TokenDistribution:
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    support = d.support()
    if k >= len(support):
        return TokenDistribution.from_probs(d.probs / d.probs.sum())
    order = _descending_order(d.probs)
    return _renormalized(d.probs, order[:k])


def nucleus_filter(d: TokenDistribution, p: float) -> TokenDistribution:
    if not 0.0 < p <= 1.0:
        raise ConfigurationError("p must be in (0, 1]")
    order = _descending_order(d.probs)
    order = order[d.probs[order] > 0.0]
    csum = np.cumsum(d.probs[order])
    cut = int(np.searchsorted(csum, p - _EPS, side="left"))
    cut = min(cut, len(order) - 1)
    return _renormalized(d.probs, order[: cut + 1])


def typical_filter(d: TokenDistribution, tau: float) -> TokenDistribution:
    if not 0.0 < tau <= 1.0:
        raise ConfigurationError("tau must be in (0, 1]")
    entropy = d.entropy_nats
    pos = np.flatnonzero(d.probs > 0.0)
    probs = d.probs[pos]
    scores = np.abs(-np.log(probs) - entropy)
    # ascending score snapped to the comparison slack; ties by higher
    # probability, then lower token index
    snapped = np.floor(scores / _EPS + 0.5)
    order = pos[np.lexsort((-probs, snapped))]
    csum = np.cumsum(d.probs[order])
    cut = int(np.searchsorted(csum, tau - _EPS, side="left"))
    cut = min(cut, len(order) - 1)
    return _renormalized(d.probs, order[: cut + 1])


def sample_token(d: TokenDistribution, rng: np.random.Generator) -> int:
    total = float(d.probs.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"distribution sums to {total}, expected 1")
    csum = np.cumsum(d.probs)
    u = float(rng.random())
    idx = int(np.searchsorted(csum, u, side="right"))
    if idx >= len(csum) or d.probs[idx] <= 0.0:
        idx = int(d.support()[-1])
    return idx


# --- sequence drivers -----------------------------------------------------


def hypothesis_answer(lm: GrammarLm, scene: Scene,
                      question_tokens: Sequence[int], candidate_id: int) -> str:
    """Truthful yes/no as if `candidate_id` were the target; na if unparseable."""
    try:
        predicate, _ = lm.parse_question(tuple(question_tokens))
    except Exception:
        return "na"
    obj = scene.object_by_id(candidate_id)
    return "yes" if predicate.holds(obj, scene) else "no"


def greedy_decode(state: LmState, max_len: int = DEFAULT_MAX_LEN) -> ScoredSequence:
    lm = state.lm
    start = len(state.partial_tokens)
    logprob = 0.0
    for _ in range(max_len):
        d = lm.next_token_distribution(state)
        token = int(np.argmax(d.probs))
        logprob += math.log(d.probs[token])
        state = lm.advance(state, token)
        if state.is_complete:
            return ScoredSequence(tokens=state.partial_tokens[start:],
                                  logprob=min(logprob, 0.0))
    raise TruncationError(f"no EOQ within {max_len} tokens")


def beam_decode(state: LmState, beam_size: int = 3,
                max_len: int = DEFAULT_MAX_LEN) -> list[ScoredSequence]:
    """Breadth-wise search; finished sequences compete with partials.

    Scoring uses true (unfiltered) step conditionals; ties are broken by
    ascending token sequence. Partials still alive at max_len are dropped;
    if nothing finished, the length budget was too small.
    """
    if beam_size < 1:
        raise ConfigurationError("beam_size must be >= 1")
    lm = state.lm
    # scores are probability products, not log sums: log() can collapse
    # probabilities that differ in the last ulp, which would make the
    # tie-break disagree with greedy's argmax at B=1 (16 steps of
    # conditionals never get small enough to underflow)
    beams = [(1.0, (), state)]  # (prob product, continuation tokens, state)
    for _ in range(max_len):
        if all(st.is_complete for _, _, st in beams):
            break
        pool = []
        for prob, tokens, st in beams:
            if st.is_complete:
                pool.append((prob, tokens, st))
                continue
            d = lm.next_token_distribution(st)
            for token in map(int, d.support()):
                nxt = lm.advance(st, token)
                pool.append((prob * d.probs[token], tokens + (token,), nxt))
        pool.sort(key=lambda b: (-b[0], b[1]))
        beams = pool[:beam_size]
    finished = [(prob, tokens) for prob, tokens, st in beams if st.is_complete]
    if not finished:
        raise TruncationError(f"no EOQ within {max_len} tokens")
    return [ScoredSequence(tokens=tokens, logprob=min(math.log(prob), 0.0))
            for prob, tokens in finished]


def confirmit_select(state: LmState, beam_size: int, guesser,
                     internal_oracle: Optional[Callable[[Sequence[int], int], str]] = None,
                     max_len: int = DEFAULT_MAX_LEN) -> ScoredSequence:
    """Re-rank beam candidates by how much they confirm the current hypothesis.

    The hypothesis h is the guesser's argmax candidate. Each candidate
    question is answered by an internal oracle as if h were the target,
    the posterior update is simulated, and the question maximizing the
    updated P(h) wins; ties prefer higher logprob, then ascending tokens.
    """
    lm = state.lm
    scene = state.scene
    if internal_oracle is None:
        internal_oracle = lambda toks, cid: hypothesis_answer(lm, scene, toks, cid)
    hypothesis = guesser.argmax_candidate()
    candidates = beam_decode(state, beam_size, max_len)
    best = None
    best_key = None
    for cand in candidates:
        answer = internal_oracle(cand.tokens, hypothesis)
        updated = guesser.updated(cand.tokens, answer, scene, lm)
        mass = updated.posterior[hypothesis]
        if best is None:
            best, best_key = cand, (mass, cand.logprob)
            continue
        d_mass = mass - best_key[0]
        if d_mass > _EPS:
            best, best_key = cand, (mass, cand.logprob)
        elif abs(d_mass) <= _EPS:
            d_lp = cand.logprob - best_key[1]
            if d_lp > _EPS or (abs(d_lp) <= _EPS and cand.tokens < best.tokens):
                best, best_key = cand, (mass, cand.logprob)
    return best


def decode_question(state: LmState, config: DecodingConfig, guesser=None,
                    rng: Optional[np.random.Generator] = None,
                    max_len: int = DEFAULT_MAX_LEN) -> ScoredSequence:
    """Produce one complete question under the configured strategy."""
    if config.strategy == "greedy":
        return greedy_decode(state, max_len)
    if config.strategy == "beam":
        return beam_decode(state, config.beam_size, max_len)[0]
    if config.strategy == "confirm_it":
        if guesser is None:
            raise ConfigurationError("confirm_it requires a guesser")
        return confirmit_select(state, config.beam_size, guesser, max_len=max_len)
    if rng is None:
        raise ConfigurationError(f"{config.strategy} requires an rng stream")
    lm = state.lm
    start = len(state.partial_tokens)
    logprob = 0.0
    for _ in range(max_len):
        d = lm.next_token_distribution(state)
        filtered = _apply_filter(d, config)
        token = sample_token(filtered, rng)
        logprob += math.log(d.probs[token])
        state = lm.advance(state, token)
        if state.is_complete:
            return ScoredSequence(tokens=state.partial_tokens[start:],
                                  logprob=min(logprob, 0.0))
    raise TruncationError(f"no EOQ within {max_len} tokens")


def _apply_filter(d: TokenDistribution, config: DecodingConfig) -> TokenDistribution:
    if config.strategy == "pure_sampling":
        return d
    if config.strategy == "top_k":
        return topk_filter(d, config.k)
    if config.strategy == "nucleus":
        return nucleus_filter(d, config.p)
    if config.strategy == "typical":
        return typical_filter(d, config.tau)
    raise ConfigurationError(f"{config.strategy} is not a filtering strategy")
