"""The weighted question automaton: exactness, mixing, serialization."""

import itertools

import numpy as np
import pytest

from guesslab import grammar_lm as gl
from guesslab.errors import (
    ConfigurationError,
    FormatError,
    InvalidContinuationError,
    ParseError,
    SequenceCompleteError,
    TruncationError,
    ValidationError,
)
from guesslab.grammar_lm import (
    EOQ,
    GrammarLm,
    TokenDistribution,
    default_grammar,
    load_grammar,
    save_grammar,
)
from guesslab.world import Scene, SceneObject, generate_dataset


def make_object(oid, category="dog", color="red", size="small", row=0, col=0):
    from guesslab.world import _make_bbox
    return SceneObject(id=oid, category=category, color=color, size=size,
                       row=row, col=col, bbox=_make_bbox(row, col, size))


def tiny_scene():
    return Scene(objects=(
        make_object(1, "dog", "red", "small", 0, 0),
        make_object(2, "dog", "blue", "large", 0, 1),
        make_object(3, "cat", "red", "small", 1, 2),
        make_object(4, "car", "gray", "large", 2, 3),
    ), grid=(3, 4))


def other_scene():
    return Scene(objects=(
        make_object(1, "boat", "white", "large", 2, 0),
        make_object(2, "kite", "green", "small", 0, 3),
        make_object(3, "boat", "black", "small", 1, 1),
        make_object(4, "cup", "brown", "large", 2, 2),
    ), grid=(3, 4))


TWO_QUESTION_DOCS = [
    {"id": "T_red", "tokens_with_slots": "is it red ?",
     "predicate": {"kind": "color", "value": "red"},
     "grounded_weight_rule": "count", "prior_weight": 1.0},
    {"id": "T_blue", "tokens_with_slots": "is it blue ?",
     "predicate": {"kind": "color", "value": "blue"},
     "grounded_weight_rule": "count", "prior_weight": 1.0},
]


def sequence_probability(lm, scene, tokens, history=()):
    """Multiply stepwise conditionals along a token sequence."""
    state = lm.start_state(scene, history)
    prob = 1.0
    for tok in tokens:
        dist = lm.next_token_distribution(state)
        prob *= dist.probs[tok]
        state = lm.advance(state, tok)
    assert state.is_complete
    return prob


class TestVocabulary:
    def test_sorted_unique_and_sized(self):
        lm = default_grammar()
        toks = lm.vocabulary.tokens
        assert list(toks) == sorted(toks)
        assert len(set(toks)) == len(toks)
        assert 80 <= len(toks) <= 120
        assert EOQ in toks
        assert "?" in toks

    def test_encode_decode_round_trip(self):
        lm = default_grammar()
        words = ("is", "it", "a", "dog", "?", EOQ)
        assert lm.vocabulary.decode(lm.vocabulary.encode(words)) == words

    def test_unknown_token_rejected(self):
        lm = default_grammar()
        with pytest.raises(ValidationError):
            lm.vocabulary.id_of("xylophone")


class TestTokenDistribution:
    def test_validation(self):
        with pytest.raises(ValidationError):
            TokenDistribution.from_probs(np.array([0.5, 0.4]))
        with pytest.raises(ValidationError):
            TokenDistribution.from_probs(np.array([1.5, -0.5]))
        with pytest.raises(ValidationError):
            TokenDistribution.from_probs(np.eye(2))

    def test_entropy_matches_definition(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            k = int(rng.integers(1, 12))
            p = rng.random(k) + 1e-9
            p /= p.sum()
            dist = TokenDistribution.from_probs(p)
            expected = -(p * np.log(p)).sum()
            assert abs(dist.entropy_nats - expected) < 1e-12

    def test_deterministic_distribution_has_zero_entropy(self):
        p = np.zeros(5)
        p[2] = 1.0
        dist = TokenDistribution.from_probs(p)
        assert dist.entropy_nats == 0.0
        assert list(dist.support()) == [2]


class TestExactness:
    def test_chain_rule_telescopes(self):
        lm = default_grammar()
        scene = tiny_scene()
        probs = lm.instantiation_probabilities(scene)
        for idx in range(0, len(lm.instantiations), 17):
            inst = lm.instantiations[idx]
            stepwise = sequence_probability(lm, scene, inst.tokens)
            assert abs(stepwise - probs[idx]) < 1e-9

    def test_chain_rule_with_history(self):
        lm = default_grammar()
        scene = tiny_scene()
        first = lm.instantiations[0].tokens
        history = ((first, "yes"),)
        probs = lm.instantiation_probabilities(scene, history)
        for idx in (0, 5, 101, 200):
            inst = lm.instantiations[idx]
            stepwise = sequence_probability(lm, scene, inst.tokens, history)
            assert abs(stepwise - probs[idx]) < 1e-9

    def test_enumeration_sums_to_one_and_is_sorted(self):
        lm = default_grammar()
        scene = tiny_scene()
        out = lm.enumerate_questions(lm.start_state(scene))
        total = sum(p for _, p in out)
        assert abs(total - 1.0) < 1e-8
        keys = [(-p, seq) for seq, p in out]
        assert keys == sorted(keys)

    def test_enumeration_consistent_with_stepwise(self):
        lm = default_grammar()
        scene = tiny_scene()
        out = lm.enumerate_questions(lm.start_state(scene))
        for seq, p in out[:5] + out[-3:]:
            assert abs(sequence_probability(lm, scene, seq) - p) < 1e-9

    def test_enumeration_from_partial_state(self):
        lm = default_grammar()
        scene = tiny_scene()
        state = lm.start_state(scene)
        state = lm.advance(state, lm.vocabulary.id_of("is"))
        state = lm.advance(state, lm.vocabulary.id_of("it"))
        out = lm.enumerate_questions(state)
        assert abs(sum(p for _, p in out) - 1.0) < 1e-8
        # continuations exclude the consumed prefix
        for seq, _ in out:
            assert lm.vocabulary.token(seq[-1]) == EOQ

    def test_truncation_error(self):
        lm = default_grammar()
        with pytest.raises(TruncationError):
            lm.enumerate_questions(lm.start_state(tiny_scene()), max_len=3)


class TestMixture:
    def test_two_question_mixture_weights(self):
        # grounded counts (2 red, 0 blue), priors (1, 1), lambda 0.5:
        # weights (0.5*2 + 0.5, 0.5*0 + 0.5) -> probabilities (0.75, 0.25)
        lm = GrammarLm(TWO_QUESTION_DOCS, grounding_weight=0.5)
        scene = Scene(objects=(
            make_object(1, "dog", "red", "small", 0, 0),
            make_object(2, "cat", "red", "large", 1, 1),
        ), grid=(3, 4))
        probs = lm.instantiation_probabilities(scene)
        by_words = {inst.words[2]: p for inst, p in zip(lm.instantiations, probs)}
        assert abs(by_words["red"] - 0.75) < 1e-12
        assert abs(by_words["blue"] - 0.25) < 1e-12

    def test_lambda_one_kills_ungrounded_mass(self):
        lm = default_grammar(grounding_weight=1.0)
        scene = tiny_scene()
        probs = lm.instantiation_probabilities(scene)
        for p, inst in zip(probs, lm.instantiations):
            grounded = any(inst.predicate.holds(o, scene) for o in scene.objects)
            if not grounded:
                assert p == 0.0

    def test_lambda_zero_is_scene_independent(self):
        lm = default_grammar(grounding_weight=0.0)
        pa = lm.instantiation_probabilities(tiny_scene())
        pb = lm.instantiation_probabilities(other_scene())
        np.testing.assert_allclose(pa, pb, atol=1e-15)

    def test_hallucination_mass_decreases_with_lambda(self):
        scene = tiny_scene()
        masses = []
        for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
            lm = default_grammar(grounding_weight=lam)
            probs = lm.instantiation_probabilities(scene)
            mass = sum(
                p for p, inst in zip(probs, lm.instantiations)
                if not any(inst.predicate.holds(o, scene) for o in scene.objects))
            masses.append(mass)
        assert all(a > b for a, b in zip(masses, masses[1:]))
        assert masses[-1] == 0.0

    def test_history_penalty_halves_repeat_weight(self):
        lm = GrammarLm(TWO_QUESTION_DOCS, grounding_weight=0.5,
                       history_penalty=0.5)
        scene = Scene(objects=(
            make_object(1, "dog", "red", "small", 0, 0),
            make_object(2, "cat", "red", "large", 1, 1),
        ), grid=(3, 4))
        red = next(i.tokens for i in lm.instantiations if i.words[2] == "red")
        # before: (1.5, 0.5); after asking red once: (0.75, 0.5)
        probs = lm.instantiation_probabilities(scene, ((red, "yes"),))
        by_words = {inst.words[2]: p for inst, p in zip(lm.instantiations, probs)}
        assert abs(by_words["red"] - 0.6) < 1e-12
        assert abs(by_words["blue"] - 0.4) < 1e-12
        # a second ask quarters it: (0.375, 0.5)
        probs2 = lm.instantiation_probabilities(
            scene, ((red, "yes"), (red, "yes")))
        by2 = {inst.words[2]: p for inst, p in zip(lm.instantiations, probs2)}
        assert abs(by2["red"] - 0.375 / 0.875) < 1e-12

    def test_unparseable_history_is_ignored(self):
        lm = default_grammar()
        scene = tiny_scene()
        base = lm.instantiation_probabilities(scene)
        noisy = lm.instantiation_probabilities(scene, (((999,), "yes"),))
        np.testing.assert_allclose(base, noisy, atol=1e-15)


class TestStateMachine:
    def test_advance_and_complete(self):
        lm = default_grammar()
        scene = tiny_scene()
        inst = lm.instantiations[0]
        state = lm.start_state(scene)
        for tok in inst.tokens:
            assert not state.is_complete
            state = lm.advance(state, tok)
        assert state.is_complete
        assert state.pending_question == inst.tokens

    def test_invalid_continuation(self):
        lm = default_grammar()
        state = lm.start_state(tiny_scene())
        with pytest.raises(InvalidContinuationError):
            lm.advance(state, lm.vocabulary.id_of("?"))

    def test_zero_probability_continuation_rejected(self):
        lm = default_grammar(grounding_weight=1.0)
        scene = tiny_scene()  # nothing is an airplane here
        state = lm.start_state(scene)
        for word in ("is", "it", "a"):
            state = lm.advance(state, lm.vocabulary.id_of(word))
        with pytest.raises(InvalidContinuationError):
            lm.advance(state, lm.vocabulary.id_of("airplane"))

    def test_complete_state_refuses_more(self):
        lm = default_grammar()
        state = lm.start_state(tiny_scene())
        for tok in lm.instantiations[0].tokens:
            state = lm.advance(state, tok)
        with pytest.raises(SequenceCompleteError):
            lm.advance(state, 0)
        with pytest.raises(SequenceCompleteError):
            lm.next_token_distribution(state)

    def test_pending_question_on_incomplete_state(self):
        lm = default_grammar()
        state = lm.start_state(tiny_scene())
        with pytest.raises(ValidationError):
            state.pending_question

    def test_conditionals_normalize_everywhere(self):
        lm = default_grammar()
        scene = tiny_scene()
        rng = np.random.default_rng(4)
        for _ in range(200):
            state = lm.start_state(scene)
            while not state.is_complete:
                dist = lm.next_token_distribution(state)
                assert abs(dist.probs.sum() - 1.0) < 1e-9
                support = dist.support()
                state = lm.advance(state, int(rng.choice(support)))

    def test_instantiations_sorted_by_tokens(self):
        lm = default_grammar()
        seqs = [inst.tokens for inst in lm.instantiations]
        assert seqs == sorted(seqs)


class TestParsing:
    def test_parse_with_and_without_eoq(self):
        lm = default_grammar()
        inst = lm.instantiations[10]
        for seq in (inst.tokens, inst.tokens[:-1]):
            predicate, template_id = lm.parse_question(seq)
            assert predicate == inst.predicate
            assert template_id == inst.template_id

    def test_parse_error(self):
        lm = default_grammar()
        bad = lm.vocabulary.encode(("is", "it", "a", "?"))
        with pytest.raises(ParseError):
            lm.parse_question(bad)

    def test_question_words(self):
        lm = default_grammar()
        words = lm.question_words(lm.vocabulary.encode(("is", "it", "red")))
        assert words == "is it red"


class TestSerialization:
    def test_round_trip_preserves_distribution(self, tmp_path):
        lm = default_grammar()
        path = tmp_path / "grammar.json"
        save_grammar(lm, str(path))
        lm2 = load_grammar(str(path))
        scene = tiny_scene()
        np.testing.assert_allclose(
            lm.instantiation_probabilities(scene),
            lm2.instantiation_probabilities(scene), atol=1e-15)
        assert lm.to_spec() == lm2.to_spec()

    def test_overrides_on_load(self, tmp_path):
        lm = default_grammar()
        path = tmp_path / "grammar.json"
        save_grammar(lm, str(path))
        lm2 = load_grammar(str(path), grounding_weight=1.0)
        assert lm2.grounding_weight == 1.0

    def test_unknown_document_field_rejected(self):
        with pytest.raises(FormatError):
            GrammarLm.from_spec({"templates": TWO_QUESTION_DOCS, "extra": 1})

    def test_missing_templates_rejected(self):
        with pytest.raises(FormatError):
            GrammarLm.from_spec({"grounding_weight": 0.5})

    def test_unknown_template_field_rejected(self):
        doc = dict(TWO_QUESTION_DOCS[0])
        doc["comment"] = "nope"
        with pytest.raises(FormatError):
            GrammarLm([doc])

    def test_bad_rule_and_prior_rejected(self):
        doc = dict(TWO_QUESTION_DOCS[0])
        doc["grounded_weight_rule"] = "cubed"
        with pytest.raises(ConfigurationError):
            GrammarLm([doc])
        doc = dict(TWO_QUESTION_DOCS[0])
        doc["prior_weight"] = 0.0
        with pytest.raises(ConfigurationError):
            GrammarLm([doc])

    def test_bad_mixing_parameters_rejected(self):
        with pytest.raises(ConfigurationError):
            GrammarLm(TWO_QUESTION_DOCS, grounding_weight=1.5)
        with pytest.raises(ConfigurationError):
            GrammarLm(TWO_QUESTION_DOCS, history_penalty=0.0)

    def test_duplicate_template_ids_rejected(self):
        with pytest.raises(ConfigurationError):
            GrammarLm([TWO_QUESTION_DOCS[0], TWO_QUESTION_DOCS[0]])

    def test_duplicate_surface_forms_rejected(self):
        docs = [TWO_QUESTION_DOCS[0],
                dict(TWO_QUESTION_DOCS[1],
                     tokens_with_slots="is it red ?", id="T_other")]
        with pytest.raises(ConfigurationError):
            GrammarLm(docs)


class TestAgainstBruteForce:
    def test_distribution_matches_weight_definition(self):
        """Recompute the question distribution from first principles."""
        lm = default_grammar()
        ds = generate_dataset(seed=13, n_games=5)
        for game in ds.games:
            scene = game.scene
            lam = lm.grounding_weight
            weights = []
            for inst in lm.instantiations:
                if inst.rule == "const":
                    g = 1.0
                else:
                    count = sum(1 for o in scene.objects
                                if inst.predicate.holds(o, scene))
                    g = {"count": float(count),
                         "count_sq": float(count * count),
                         "presence": float(count > 0)}[inst.rule]
                weights.append(lam * g + (1 - lam) * inst.prior)
            expected = np.array(weights) / sum(weights)
            got = lm.instantiation_probabilities(scene)
            np.testing.assert_allclose(got, expected, atol=1e-12)
