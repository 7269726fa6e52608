import math

import numpy as np
import pytest

from ontomatch import autograd as ag
from ontomatch.corpus import build_corpus
from ontomatch.encoder import EncoderConfig, init_params
from ontomatch.objectives import (
    LOSS_CSV_HEADER,
    BatchTooSmall,
    LossReport,
    TrainConfig,
    TrainingData,
    info_nce,
    loss_c2c,
    loss_c2r,
    loss_cpath,
    loss_mpath,
    loss_csv,
    smoothed,
    step_losses,
    total_loss,
    train,
)
from ontomatch.synthetic import NONE, gen_synthetic_pair
from ontomatch.text import build_vocabs

TINY = EncoderConfig(layers=1, heads=1, dim=8, ffn_dim=16, max_positions=64)


@pytest.fixture(scope="module")
def setup():
    onto = gen_synthetic_pair(20, NONE, seed=3)[0]
    corpus = build_corpus([onto])
    vocab, cv = build_vocabs(corpus, [onto])
    return corpus, vocab, cv


def fresh(setup, cfg=TINY, seed=0):
    _, vocab, cv = setup
    return init_params(cfg, len(vocab), len(cv), seed)


def constant_features(params):
    """Final norm gain 0 and a fixed bias: every position emits the same vector."""
    last = params.config.layers - 1
    params[f"layer{last}.ln2_g"].data[:] = 0.0
    params[f"layer{last}.ln2_b"].data[:] = np.linspace(-1.0, 1.0, params.config.dim)


def batches(setup, n=8):
    corpus, _, _ = setup
    return {
        "c2c": corpus.positive_masked_triplets[:n],
        "c2r": corpus.masked_triplets[:n],
        "cpath": corpus.positive_paths[: n // 2] + corpus.negative_paths[: n // 2],
        "mpath": corpus.masked_paths[:n],
    }


def losses_of(setup, params, b):
    _, vocab, cv = setup
    return {
        "c2c": lambda: loss_c2c(b["c2c"], params, vocab),
        "c2r": lambda: loss_c2r(b["c2r"], params, vocab),
        "cpath": lambda: loss_cpath(b["cpath"], params, vocab),
        "mpath": lambda: loss_mpath(b["mpath"], params, vocab, cv),
    }


class TestInfoNCE:
    def test_hand_case(self):
        # a_1 = b_1 orthogonal to b_2, a_2 = b_2: each row sees cos 1 for its match and 0 otherwise
        a = ag.as_tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        loss = info_nce(a, a, tau=1.0)
        np.testing.assert_allclose(loss.item(), -math.log(math.e / (math.e + 1)), rtol=1e-9)

    @pytest.mark.parametrize("b", [2, 5, 16])
    def test_large_temperature_tends_to_log_b(self, b):
        x = ag.as_tensor(np.random.default_rng(b).normal(size=(b, 4)))
        np.testing.assert_allclose(info_nce(x, x, tau=1e9).item(), math.log(b), atol=1e-8)

    def test_matches_numpy_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
        an = a / np.linalg.norm(a, axis=1, keepdims=True)
        bn = b / np.linalg.norm(b, axis=1, keepdims=True)
        s = an @ bn.T / 0.5
        want = np.mean(np.log(np.exp(s).sum(1)) - np.diag(s))
        np.testing.assert_allclose(info_nce(ag.as_tensor(a), ag.as_tensor(b), 0.5).item(), want, rtol=1e-12)


class TestForcedUniform:
    def test_c2c_is_log_batch(self, setup):
        params = fresh(setup)
        constant_features(params)
        b = batches(setup)["c2c"]
        np.testing.assert_allclose(loss_c2c(b, params, setup[1]).item(), math.log(len(b)), atol=1e-6)

    def test_c2r_is_log_four(self, setup):
        params = fresh(setup)
        params["rel.w2"].data[:] = 0.0
        np.testing.assert_allclose(loss_c2r(batches(setup)["c2r"], params, setup[1]).item(), math.log(4), atol=1e-6)

    def test_cpath_is_log_two(self, setup):
        params = fresh(setup)
        params["path.w"].data[:] = 0.0
        np.testing.assert_allclose(loss_cpath(batches(setup)["cpath"], params, setup[1]).item(), math.log(2), atol=1e-6)

    def test_mpath_is_log_concepts(self, setup):
        params = fresh(setup)
        params["concept.w"].data[:] = 0.0
        loss = loss_mpath(batches(setup)["mpath"], params, setup[1], setup[2])
        np.testing.assert_allclose(loss.item(), math.log(len(setup[2])), atol=1e-6)


class TestHandBatches:
    def test_cpath_mixed_labels(self, setup):
        corpus, vocab, _ = setup
        params = fresh(setup)
        items = [corpus.positive_paths[0], corpus.negative_paths[0], corpus.positive_paths[1]]
        params["path.w"].data[:] = 0.0
        params["path.b"].data[:] = 1.0  # every logit is 1
        want = (2 * math.log1p(math.exp(-1)) + math.log1p(math.exp(1))) / 3
        np.testing.assert_allclose(loss_cpath(items, params, vocab).item(), want, rtol=1e-12)

    def test_mpath_averages_over_slots(self, setup):
        corpus, vocab, cv = setup
        params = fresh(setup)
        two = next(m for m in corpus.masked_paths if len(set(m.target_concepts)) == 2)
        params["concept.w"].data[:] = 0.0
        bias = np.zeros(len(cv))
        targets = [cv[c] for c in two.target_concepts]
        bias[targets[0]] = 2.0
        params["concept.b"].data[:] = bias
        n = len(cv)
        hit = -math.log(math.exp(2) / (math.exp(2) + n - 1))
        miss = -math.log(1 / (math.exp(2) + n - 1))
        np.testing.assert_allclose(loss_mpath([two], params, vocab, cv).item(), (hit + miss) / 2, rtol=1e-12)

    def test_c2r_negative_targets_norelation(self, setup):
        corpus, vocab, _ = setup
        params = fresh(setup)
        params["rel.w2"].data[:] = 0.0
        params["rel.b2"].data[:] = np.array([0.0, 0.0, 0.0, 30.0])  # NoRelation is the last class
        neg = [mt for mt in corpus.masked_triplets if mt.relation_label.name == "NoRelation"][:4]
        pos = [mt for mt in corpus.masked_triplets if mt.relation_label.name != "NoRelation"][:4]
        assert loss_c2r(neg, params, vocab).item() < 1e-3
        assert loss_c2r(pos, params, vocab).item() > 29.0

    def test_c2c_needs_two(self, setup):
        with pytest.raises(BatchTooSmall):
            loss_c2c(batches(setup)["c2c"][:1], fresh(setup), setup[1])


class TestInitSanity:
    @pytest.mark.parametrize("name,expected", [("c2c", math.log(8)), ("c2r", math.log(4)), ("cpath", math.log(2))])
    def test_near_uniform_at_init(self, setup, name, expected):
        params = fresh(setup)
        value = losses_of(setup, params, batches(setup))[name]().item()
        assert abs(value - expected) < 0.1 * expected

    def test_mpath_near_uniform_at_init(self, setup):
        params = fresh(setup)
        value = losses_of(setup, params, batches(setup))["mpath"]().item()
        expected = math.log(len(setup[2]))
        assert abs(value - expected) < 0.1 * expected


    def test_losses_non_negative(self, setup):
        params = fresh(setup, seed=5)
        for name, f in losses_of(setup, params, batches(setup)).items():
            assert f().item() >= 0.0, name


class TestLimits:
    def test_cpath_separated_tends_to_zero(self, setup):
        corpus, vocab, _ = setup
        params = fresh(setup)
        params["path.w"].data[:] = 0.0
        params["path.b"].data[:] = 40.0
        assert loss_cpath(corpus.positive_paths[:4], params, vocab).item() < 1e-12

    def test_mpath_one_hot_tends_to_zero(self, setup):
        corpus, vocab, cv = setup
        params = fresh(setup)
        m = next(m for m in corpus.masked_paths if len(m.masked_positions) == 1)
        params["concept.w"].data[:] = 0.0
        params["concept.b"].data[:] = -40.0
        params["concept.b"].data[cv[m.target_concepts[0]]] = 40.0
        assert loss_mpath([m], params, vocab, cv).item() < 1e-12


class TestGradients:
    @pytest.mark.parametrize("name", ["c2c", "c2r", "cpath", "mpath"])
    def test_end_to_end_grad_check(self, setup, name):
        params = fresh(setup, seed=1)
        rng = np.random.default_rng(2)
        for _, t in params.named():
            t.data = t.data + rng.normal(0, 0.2, t.shape)
        f = losses_of(setup, params, batches(setup, 4))[name]
        worst = 0.0
        for pname, t in params.named():
            report = ag.grad_check(lambda _: f(), t, eps=1e-5, tol=1e-4, max_elements=12, seed=3)
            assert report.passed, (pname, report.max_error)
            worst = max(worst, report.max_error)
        assert worst < 1e-4

    def test_token_gradients_follow_gather(self, setup):
        seqs = TrainingData.from_corpus(*setup).mpath[:4]
        params = fresh(setup)
        step_losses({"mpath": seqs}, params, TrainConfig(batch_size=4))["mpath"].backward()
        present = sorted({i for s in seqs for i in s.ids})
        absent = np.setdiff1d(np.arange(len(setup[1])), present)
        norms = np.linalg.norm(params["tok_emb"].grad, axis=1)
        assert np.all(norms[present] > 0)
        assert np.all(norms[absent] == 0.0)


class TestTotal:
    def test_weighted_sum(self, setup):
        params = fresh(setup)
        data = TrainingData.from_corpus(*setup)
        picked = {"c2c": data.c2c[:4], "c2r": data.c2r[:4], "cpath": data.cpath[:4], "mpath": data.mpath[:4]}
        cfg = TrainConfig(w_c2c=0.5, w_c2r=2.0, w_cpath=0.0, w_mpath=1.5)
        parts = step_losses(picked, params, cfg)
        want = 0.5 * parts["c2c"].item() + 2.0 * parts["c2r"].item() + 1.5 * parts["mpath"].item()
        np.testing.assert_allclose(total_loss(parts, cfg).item(), want, rtol=1e-12)

    def test_zero_weight_leaves_params_unchanged(self, setup):
        params = fresh(setup)
        before = {n: t.data.copy() for n, t in params.named()}
        train(TrainingData.from_corpus(*setup), params, TrainConfig(steps=3, batch_size=4, objectives=("cpath",), w_cpath=0.0))
        for n, t in params.named():
            np.testing.assert_array_equal(t.data, before[n])


class TestTraining:
    def test_deterministic(self, setup):
        data = TrainingData.from_corpus(*setup)
        cfg = TrainConfig(steps=4, batch_size=4, lr=1e-3)
        a, b = fresh(setup), fresh(setup)
        ra, rb = train(data, a, cfg), train(data, b, cfg)
        assert [r.total for r in ra] == [r.total for r in rb]
        for (_, x), (_, y) in zip(a.named(), b.named()):
            np.testing.assert_array_equal(x.data, y.data)

    def test_subset_reports_only_active(self, setup):
        reports = train(TrainingData.from_corpus(*setup), fresh(setup), TrainConfig(steps=2, batch_size=4, objectives=("c2c",)))
        assert all(r.c2r is None and r.cpath is None and r.mpath is None and r.c2c is not None for r in reports)
        assert all(r.total == r.c2c for r in reports)

    def test_smoothed_loss_descends_over_200_steps(self, setup):
        params = fresh(setup, cfg=EncoderConfig(layers=1, heads=2, dim=16, ffn_dim=32))
        reports = train(TrainingData.from_corpus(*setup), params, TrainConfig(steps=200, batch_size=16, lr=1e-3))
        s = smoothed([r.total for r in reports], window=25)
        assert s[-50:].mean() < s[:50].mean()

    def test_step_counter(self, setup):
        params = fresh(setup)
        train(TrainingData.from_corpus(*setup), params, TrainConfig(steps=3, batch_size=4))
        assert params.steps == 3

    def test_mpath_stream_includes_tail_masked_triplets(self, setup):
        corpus = setup[0]
        data = TrainingData.from_corpus(*setup)
        assert len(data.mpath) == len(corpus.masked_paths) + len(corpus.positive_masked_triplets)

    @pytest.mark.parametrize("kwargs", [{"objectives": ()}, {"objectives": ("zzz",)}, {"temperature": 0.0}, {"batch_size": 1}])
    def test_config_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestReporting:
    def test_loss_csv(self):
        text = loss_csv([LossReport(0, c2c=1.0, total=1.0), LossReport(1, mpath=0.5, total=0.5)])
        lines = text.splitlines()
        assert lines[0].split(",") == LOSS_CSV_HEADER
        assert lines[1] == "0,1.000000,,,,1.000000"
        assert lines[2] == "1,,,,0.500000,0.500000"

    def test_smoothed(self):
        v = np.arange(10, dtype=float)
        s = smoothed(v, window=3)
        want = [np.mean(v[max(0, i - 2) : i + 1]) for i in range(10)]
        np.testing.assert_allclose(s, want)
