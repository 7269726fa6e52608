import numpy as np
import pytest

from ontomatch.evaluation import (
    ReferenceSet,
    compute_prf,
    dumps_reference,
    evaluate,
    load_reference,
    parse_reference_json,
    parse_reference_tsv,
)
from ontomatch.matcher import AlignmentSet, Mapping
from ontomatch.ontology import ParseError


def brute_prf(predicted: list, reference: list):
    """Counting oracle using F = 2|M and R| / (|M| + |R|)."""
    m, r = sorted(set(predicted)), sorted(set(reference))
    tp = sum(1 for x in m if x in r)
    p = tp / len(m) if m else 0.0
    rc = tp / len(r) if r else 0.0
    f = 2 * tp / (len(m) + len(r)) if tp else 0.0
    return p, rc, f


class TestPRF:
    def test_hand_case(self):
        pred = AlignmentSet([Mapping("s#1", "t#1", 0.9), Mapping("s#2", "t#3", 0.8)])
        ref = ReferenceSet.of([("s#1", "t#1"), ("s#2", "t#2")])
        p, r, f, flags = compute_prf(pred, ref)
        assert (p, r, f) == (0.5, 0.5, 0.5)
        assert flags == ()

    def test_brute_force_1000_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            universe = [(f"s#{i}", f"t#{j}") for i in range(5) for j in range(5)]
            pred = [universe[i] for i in rng.choice(25, int(rng.integers(0, 10)), replace=False)]
            ref = [universe[i] for i in rng.choice(25, int(rng.integers(0, 10)), replace=False)]
            got = compute_prf(pred, ReferenceSet.of(ref))
            np.testing.assert_allclose(got[:3], brute_prf(pred, ref), atol=1e-12)

    def test_empty_flags(self):
        assert compute_prf([], ReferenceSet.of([("a", "b")])).flags == ("empty_prediction",)
        assert compute_prf([("a", "b")], ReferenceSet.of([])).flags == ("empty_reference",)
        assert compute_prf([], ReferenceSet.of([]))[:3] == (0.0, 0.0, 0.0)

    def test_report(self):
        rep = evaluate([("a", "b"), ("c", "d")], ReferenceSet.of([("a", "b")]))
        assert (rep.n_predicted, rep.n_reference, rep.n_correct) == (2, 1, 1)
        assert rep.line() == "P=0.5 R=1 F=0.6667"


class TestReference:
    def test_tsv_counts(self):
        text = "# comment\ns#1\tt#1\t=\ns#1\tt#1\t=\ns#2\tt#2\t<\ns#3\tt#3\n"
        ref = parse_reference_tsv(text)
        assert ref.pairs == {("s#1", "t#1"), ("s#3", "t#3")}
        assert (ref.skipped, ref.duplicates) == (1, 1)

    def test_tsv_bad_line(self):
        with pytest.raises(ParseError) as err:
            parse_reference_tsv("s#1\tt#1\nbroken\n")
        assert err.value.line == 2

    def test_json_forms(self):
        assert len(parse_reference_json('[{"source": "a", "target": "b"}]')) == 1
        assert len(parse_reference_json('{"mappings": [{"source": "a", "target": "b", "relation": "<"}]}')) == 0

    @pytest.mark.parametrize("text", ["{", '{"x": 1}', '[{"source": "a"}]', '[{"source": "a b", "target": "c"}]'])
    def test_json_invalid(self, text):
        with pytest.raises(ParseError):
            parse_reference_json(text)

    def test_load_by_suffix(self, tmp_path):
        ref = ReferenceSet.of([("s#1", "t#1"), ("s#2", "t#2")])
        (tmp_path / "r.tsv").write_text(dumps_reference(ref))
        (tmp_path / "r.json").write_text('[{"source": "s#1", "target": "t#1"}]')
        assert load_reference(tmp_path / "r.tsv") == ref
        assert len(load_reference(tmp_path / "r.json")) == 1
        with pytest.raises(ValueError):
            load_reference(tmp_path / "r.tsv", "xml")
