import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ontomatch.encoder import EncoderConfig, init_params
from ontomatch.kge import TransEEmbeddings
from ontomatch.matcher import (
    FLAG_LEXICAL,
    AlignmentSet,
    CandidateSet,
    MatchConfig,
    Mapping,
    ScoredPair,
    UntrainedModel,
    concept_features,
    cosine,
    fuse_score,
    ground_candidates,
    jaccard,
    match,
    parse_alignment_tsv,
    predict_candidates,
    select_mappings,
    top_k,
)
from ontomatch.ontology import Concept, build_ontology
from ontomatch.text import ConceptVocab, UnknownConcept, Vocab

TINY = EncoderConfig(layers=1, heads=1, dim=8, ffn_dim=16)


def optimal_total(scores: np.ndarray) -> float:
    """Brute-force maximum-weight one-to-one assignment (partial matchings allowed)."""
    n, m = scores.shape
    best = 0.0
    for k in range(min(n, m) + 1):
        for rows in itertools.combinations(range(n), k):
            for cols in itertools.permutations(range(m), k):
                best = max(best, sum(scores[r, c] for r, c in zip(rows, cols)))
    return best


def grid(scores: np.ndarray) -> list[ScoredPair]:
    return [ScoredPair(f"s#{i}", f"t#{j}", float(scores[i, j])) for i in range(scores.shape[0]) for j in range(scores.shape[1])]


@pytest.fixture
def pair():
    src = build_ontology("s", [Concept("a", ("heart attack",)), Concept("b", ("lung disease",))])
    tgt = build_ontology("t", [Concept("x", ("attack heart",)), Concept("y", ("kidney stone",))])
    return src, tgt


@pytest.fixture
def model(pair):
    src, tgt = pair
    vocab = Vocab(["heart", "attack", "lung", "disease", "kidney", "stone"])
    cv = ConceptVocab(src.global_ids() + tgt.global_ids())
    params = init_params(TINY, len(vocab), len(cv), seed=0)
    params.steps = 1
    return params, vocab, cv


class TestFuseScore:
    def test_hand_case(self):
        # u = (1, 0, 1), v = (0, 1, 1): cos = 1 / 2
        got = fuse_score(np.array([1.0, 0.0]), np.array([1.0]), np.array([0.0, 1.0]), np.array([1.0]))
        assert got == pytest.approx(0.5, abs=1e-12)

    def test_same_concept_is_one(self):
        f, e = np.array([0.3, -1.2, 2.0]), np.array([0.5, 0.5])
        assert fuse_score(f, e, f, e) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert fuse_score(np.array([1.0, 0.0]), np.array([0.0]), np.array([0.0, 1.0]), np.array([0.0])) == 0.0

    def test_zero_vector(self):
        assert cosine(np.zeros(3), np.ones(3)) == 0.0

    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    def test_scale_invariant_and_symmetric(self, seed, a):
        rng = np.random.default_rng(seed)
        f1, e1, f2, e2 = (rng.normal(size=4) for _ in range(4))
        base = fuse_score(f1, e1, f2, e2)
        assert fuse_score(a * f1, a * e1, f2, e2) == pytest.approx(base, abs=1e-12)
        assert fuse_score(f2, e2, f1, e1) == pytest.approx(base, abs=1e-12)
        assert -1.0 - 1e-12 <= base <= 1.0 + 1e-12


class TestSelection:
    def test_greedy_takes_highest_first(self):
        scores = np.array([[0.9, 0.8], [0.85, 0.1]])
        out = select_mappings(grid(scores))
        assert out.pairs() == {("s#0", "t#0"), ("s#1", "t#1")}

    def test_ties_break_by_ids(self):
        out = select_mappings([ScoredPair("s#1", "t#0", 0.5), ScoredPair("s#0", "t#0", 0.5)])
        assert out.pairs() == {("s#0", "t#0")}

    def test_threshold_and_clamp(self):
        out = select_mappings([ScoredPair("s#0", "t#0", -0.4), ScoredPair("s#1", "t#1", 0.3)], threshold=0.2)
        assert out.pairs() == {("s#1", "t#1")}
        clamped = select_mappings([ScoredPair("s#0", "t#0", -0.4)])
        assert clamped.mappings[0].score == 0.0

    def test_many_to_one_when_disabled(self):
        out = select_mappings([ScoredPair("s#0", "t#0", 0.9), ScoredPair("s#1", "t#0", 0.8)], one_to_one=False)
        assert len(out) == 2

    @given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
    def test_greedy_against_brute_force_assignment(self, seed, n, m):
        scores = np.random.default_rng(seed).random((n, m))
        out = select_mappings(grid(scores))
        total = sum(mp.score for mp in out)
        best = optimal_total(scores)
        assert total <= best + 1e-12
        assert total >= best / 2 - 1e-12  # greedy is a 1/2-approximation
        # maximal: no free pair remains
        used_s, used_t = {mp.source for mp in out}, {mp.target for mp in out}
        assert len(out) == min(n, m)
        assert len(used_s) == len(used_t) == len(out)

    def test_output_sorted(self):
        scores = np.random.default_rng(0).random((4, 4))
        keys = [(mp.source, mp.target) for mp in select_mappings(grid(scores))]
        assert keys == sorted(keys)


class TestAlignmentSet:
    def test_rejects_many_to_one(self):
        with pytest.raises(ValueError):
            AlignmentSet([Mapping("s#0", "t#0", 0.5), Mapping("s#1", "t#0", 0.5)])

    def test_score_range(self):
        with pytest.raises(ValueError):
            Mapping("s#0", "t#0", 1.5)

    def test_tsv_round_trip(self):
        a = AlignmentSet([Mapping("s#0", "t#1", 0.25, (FLAG_LEXICAL,)), Mapping("s#1", "t#0", 0.75)])
        text = a.to_tsv()
        assert text.splitlines()[0] == "s#0\tt#1\t=\t0.250000\tlexical_fallback"
        back = parse_alignment_tsv(text)
        assert back.mappings == a.mappings

    def test_json(self):
        import json

        body = json.loads(AlignmentSet([Mapping("s#0", "t#1", 0.25)], {"k": 5}).to_json())
        assert body["metadata"] == {"k": 5}
        assert body["mappings"][0]["target"] == "t#1"


class TestCandidates:
    def test_untrained_refused(self, model):
        params, vocab, cv = model
        params.steps = 0
        with pytest.raises(UntrainedModel):
            predict_candidates("s#a", "heart attack", params, vocab, cv)

    def test_top_k_order_and_ties(self):
        cv = ConceptVocab(["o#c", "o#a", "o#b"])
        cs = top_k("s", np.array([0.2, 0.4, 0.4]), cv, 2)
        assert [c for c, _ in cs.candidates] == ["o#a", "o#b"]

    def test_prediction_follows_concept_bias(self, model):
        params, vocab, cv = model
        params["concept.w"].data[:] = 0.0
        params["concept.b"].data[:] = np.arange(len(cv), dtype=float)
        cs = predict_candidates("s#a", "heart attack", params, vocab, cv, k=2)
        assert [c for c, _ in cs.candidates] == [cv.ids[-1], cv.ids[-2]]
        probs = [p for _, p in cs.candidates]
        assert probs[0] > probs[1]

    def test_grounding_filters_to_target(self, pair):
        _, tgt = pair
        cs = CandidateSet("s#a", [("s#b", 0.5), ("t#y", 0.3), ("t#x", 0.2)])
        assert ground_candidates(cs, tgt) == (["t#y", "t#x"], False)

    def test_lexical_fallback(self, pair):
        _, tgt = pair
        cs = CandidateSet("s#a", [("s#b", 0.9)])
        assert ground_candidates(cs, tgt, "heart attack") == (["t#x"], True)
        assert ground_candidates(cs, tgt) == ([], False)

    def test_jaccard(self):
        assert jaccard(["a", "b"], ["b", "c"]) == pytest.approx(1 / 3)
        assert jaccard([], []) == 0.0


class TestMatch:
    def test_end_to_end_flags_fallback(self, pair, model):
        src, tgt = pair
        params, vocab, cv = model
        params["concept.w"].data[:] = 0.0
        bias = np.full(len(cv), -10.0)
        bias[cv["t#x"]] = 10.0
        params["concept.b"].data[:] = bias
        out = match(src, tgt, params, vocab, cv, None, MatchConfig(k=1))
        assert {m.source for m in out} <= {"s#a", "s#b"}
        assert all(m.target.startswith("t#") for m in out)
        assert out.metadata["k"] == 1
        assert ("s#a", "t#x") in out.pairs() or ("s#b", "t#x") in out.pairs()

    def test_features_shape(self, model):
        params, vocab, _ = model
        assert concept_features(["heart", "lung disease"], params, vocab).shape == (2, TINY.dim)

    def test_unknown_concept_with_transe(self, pair, model):
        src, _ = pair
        params, vocab, cv = model
        other = build_ontology("t", [Concept("q", ("heart",))])
        emb = TransEEmbeddings(np.ones((len(cv), 4)), np.ones((4, 4)))
        with pytest.raises(UnknownConcept):
            match(src, other, params, vocab, cv, emb, MatchConfig(k=1))
