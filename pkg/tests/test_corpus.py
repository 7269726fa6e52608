import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_dag
from ontomatch.corpus import (
    MASK,
    CorpusConfig,
    InsufficientCandidates,
    build_corpus,
    dumps_corpus,
    gen_negative_path,
    gen_negative_triplets,
    mask_count,
    mask_path,
    mask_triplet,
    read_corpus,
    replacement_count,
    write_corpus,
)
from ontomatch.ontology import Concept, Path, PathNode, Polarity, Relation, Triplet, build_ontology, split_qualified
from ontomatch.text import tokenize


def closure(o):
    """Brute-force reflexive-transitive subclass closure as a set of (child, ancestor) local ids."""
    ids = sorted(o.concepts)
    index = {c: i for i, c in enumerate(ids)}
    reach = np.eye(len(ids), dtype=bool)
    for c in o.concepts.values():
        for p in c.subclass_of:
            reach[index[c.id], index[p]] = True
    for k in range(len(ids)):
        reach |= reach[:, [k]] & reach[[k], :]
    return {(ids[i], ids[j]) for i, j in zip(*np.nonzero(reach))}


def line_path(n, onto="x"):
    nodes = tuple(PathNode(f"{onto}#c{i}", f"l{i}") for i in range(n))
    return Path(nodes, (Relation.SubClassOf,) * (n - 1))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [{"neg_per_pos": 0}, {"long_path_replace_frac": 0.0}, {"long_path_replace_frac": 1.0}, {"mask_count_path": 0}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            CorpusConfig(**kwargs)


class TestMaskTriplet:
    def test_views(self):
        mt = mask_triplet(Triplet("h", Relation.SubClassOf, "t", "o#h", "o#t"))
        assert mt.view_a == ("h", Relation.SubClassOf, MASK)
        assert mt.view_b == (MASK, MASK, "t")
        assert mt.relation_masked_view == ("h", MASK, "t")
        assert mt.relation_label is Relation.SubClassOf

    def test_negative_is_norelation(self):
        mt = mask_triplet(Triplet("h", Relation.SubClassOf, "t", "o#h", "o#t", Polarity.Negative))
        assert mt.relation_label is Relation.NoRelation


class TestTripletNegatives:
    def test_ratio_exact_without_shortfall(self, onto100):
        corpus = build_corpus([onto100])
        assert corpus.triplet_shortfall == 0
        assert len(corpus.negative_triplets) == 2 * len(corpus.positive_triplets)

    def test_subclass_negatives_avoid_closure(self, onto100):
        reach = closure(onto100)
        negs = [t for t in build_corpus([onto100]).negative_triplets if t.relation is Relation.SubClassOf]
        assert negs
        for t in negs:
            pair = (split_qualified(t.head_id)[1], split_qualified(t.tail_id)[1])
            assert pair not in reach

    def test_synonym_negatives_share_no_token(self, onto100):
        negs = [t for t in build_corpus([onto100]).negative_triplets if t.relation is Relation.Synonym]
        assert negs
        for t in negs:
            assert not set(tokenize(t.head_text)) & set(tokenize(t.tail_text))
            assert t.head_id != t.tail_id

    def test_disjoint_negatives_avoid_disjoint_set(self, onto100):
        for t in build_corpus([onto100]).negative_triplets:
            if t.relation is Relation.DisjointWith:
                head = split_qualified(t.head_id)[1]
                assert split_qualified(t.tail_id)[1] not in onto100.concepts[head].disjoint_with

    def test_negatives_keep_head_and_relation(self, chain):
        t = next(t for t in build_corpus([chain]).positive_triplets if t.relation is Relation.SubClassOf)
        for neg in gen_negative_triplets(t, chain, CorpusConfig(), np.random.default_rng(0)):
            assert (neg.head_text, neg.relation, neg.polarity) == (t.head_text, t.relation, Polarity.Negative)

    def test_shortfall_reported(self):
        o = build_ontology("s", [Concept("A", ("a",)), Concept("B", ("b",), subclass_of=("A",))])
        corpus = build_corpus([o])
        # B's only non-ancestor is itself, so both negatives are missing
        assert corpus.triplet_shortfall == 2
        assert len(corpus.negative_triplets) == 2 * len(corpus.positive_triplets) - corpus.triplet_shortfall

    def test_rejects_negative_input(self, chain):
        t = Triplet("a", Relation.SubClassOf, "b", "chain#B", "chain#A", Polarity.Negative)
        with pytest.raises(ValueError):
            gen_negative_triplets(t, chain, CorpusConfig(), np.random.default_rng(0))


class TestPathNegatives:
    @pytest.mark.parametrize("length,expected", [(2, 1), (3, 1), (4, 1), (5, 1), (6, 2), (10, 2), (11, 3)])
    def test_replacement_count(self, length, expected):
        assert replacement_count(length, CorpusConfig()) == expected

    @pytest.mark.parametrize("length", [3, 5, 10])
    def test_hamming_distance_matches_rule(self, length):
        o = build_ontology("x", [Concept(f"c{i}", (f"l{i}",)) for i in range(30)])
        p = line_path(length)
        neg = gen_negative_path(p, o, CorpusConfig(), np.random.default_rng(length))
        want = 1 if length < 5 else math.ceil(0.2 * length)
        assert sum(a.id != b.id for a, b in zip(p.concepts, neg.concepts)) == want
        assert neg.relations == p.relations and neg.polarity is Polarity.Negative
        original = {n.id for n in p.concepts}
        for a, b in zip(p.concepts, neg.concepts):
            assert a.id == b.id or b.id not in original

    def test_corpus_paths_follow_rule(self, onto100):
        corpus = build_corpus([onto100])
        cfg = corpus.config
        assert corpus.path_shortfall == 0
        assert len(corpus.negative_paths) == 2 * len(corpus.positive_paths)
        for k, p in enumerate(corpus.positive_paths):
            for neg in corpus.negative_paths[2 * k : 2 * k + 2]:
                hamming = sum(a.id != b.id for a, b in zip(p.concepts, neg.concepts))
                rule = 1 if p.length < cfg.short_path_threshold else math.ceil(cfg.long_path_replace_frac * p.length)
                assert hamming == rule

    def test_insufficient_candidates(self):
        o = build_ontology("x", [Concept("c0", ("a",)), Concept("c1", ("b",), subclass_of=("c0",))])
        with pytest.raises(InsufficientCandidates):
            gen_negative_path(line_path(2), o, CorpusConfig(), np.random.default_rng(0))


class TestMasking:
    @pytest.mark.parametrize("length,expected", [(2, 1), (3, 1), (5, 2), (7, 2)])
    def test_mask_count(self, length, expected):
        assert mask_count(length, CorpusConfig()) == expected

    def test_mask_count_three(self):
        assert mask_count(7, CorpusConfig(mask_count_path=3)) == 3
        assert mask_count(4, CorpusConfig(mask_count_path=3)) == 1

    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    def test_mask_invariants(self, length, seed):
        p = line_path(length)
        m = mask_path(p, CorpusConfig(), np.random.default_rng(seed))
        assert len(m.masked_positions) == max(1, min(2, (length - 1) // 2, length - 1))
        assert len(set(m.masked_positions)) == len(m.masked_positions)
        if length > 2:
            assert 0 not in m.masked_positions
        assert m.target_concepts == tuple(p.concepts[i].id for i in m.masked_positions)

    def test_only_positive(self):
        p = line_path(3)
        neg = Path(p.concepts, p.relations, Polarity.Negative)
        with pytest.raises(ValueError):
            mask_path(neg, CorpusConfig(), np.random.default_rng(0))


class TestCorpus:
    def test_deterministic(self, onto100):
        assert dumps_corpus(build_corpus([onto100])) == dumps_corpus(build_corpus([onto100]))

    def test_seed_changes_negatives(self, onto100):
        a = build_corpus([onto100], CorpusConfig(seed=1))
        b = build_corpus([onto100], CorpusConfig(seed=2))
        assert a.negative_triplets != b.negative_triplets

    def test_round_trip(self, tmp_path, chain, abc):
        corpus = build_corpus([chain, abc])
        write_corpus(corpus, tmp_path / "c.ndjson")
        back = read_corpus(tmp_path / "c.ndjson")
        assert dumps_corpus(back) == dumps_corpus(corpus)
        assert back.positive_triplets == corpus.positive_triplets
        assert back.masked_paths == corpus.masked_paths

    def test_header_line(self, chain):
        import json

        header = json.loads(dumps_corpus(build_corpus([chain])).splitlines()[0])
        assert header["schema"] == "ontomatch.corpus" and header["version"] == 1

    @given(st.integers(0, 5000))
    def test_random_ontologies_keep_ratio(self, seed):
        o = random_dag(np.random.default_rng(seed), 25)
        c = build_corpus([o])
        assert len(c.negative_triplets) + c.triplet_shortfall == 2 * len(c.positive_triplets)
        assert len(c.negative_paths) + c.path_shortfall == 2 * len(c.positive_paths)
        assert len(c.masked_paths) == len(c.positive_paths)
