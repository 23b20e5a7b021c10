import numpy as np
import pytest

from dan import autodiff as ad
from dan.autodiff import ContractError, Tape, Tensor
from dan.models import (CheckpointError, ClassJudge, ClassPredictor, RankJudge, RankPredictor,
                        aggregate_pos_neg, judge_class, judge_rank, label_difference,
                        label_representations, load_checkpoint, predict_class, predict_rank, save_checkpoint)

from gradcheck import REL_TOL, max_rel_error
from oracles import reference_encode

DIMS = dict(d_emb=5, d_proj=4, filters=3, window=3)


def rng(seed=0):
    return np.random.default_rng(seed)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class TestClassPredictor:
    def test_zero_head_gives_uniform(self):
        P = ClassPredictor.init(12, 4, rng(), hidden=6, **DIMS)
        P.out_W.data[...] = 0.0
        P.out_b.data[...] = 0.0
        np.testing.assert_array_equal(predict_class([2, 3, 4], P).data, [0.25] * 4)

    def test_distribution(self):
        P = ClassPredictor.init(12, 2, rng(1), hidden=6, **DIMS)
        for n in range(1, 8):
            y = predict_class(list(range(2, 2 + n)), P).data
            assert abs(y.sum() - 1.0) < 1e-9
            assert np.all((y > 0) & (y < 1))

    def test_forward_oracle(self):
        P = ClassPredictor.init(8, 2, rng(2), d_emb=3, d_proj=2, filters=2, window=3, hidden=2)
        tokens = [2, 5, 7, 3]
        r = reference_encode(tokens, P.encoder)
        h = np.tanh([sum(r[i] * P.hidden_W.data[i, j] for i in range(2)) + P.hidden_b.data[j]
                     for j in range(2)])
        z = [sum(h[i] * P.out_W.data[i, c] for i in range(2)) + P.out_b.data[c] for c in range(2)]
        e = np.exp(np.array(z) - max(z))
        np.testing.assert_allclose(predict_class(tokens, P).data, e / e.sum(), rtol=0, atol=1e-12)


class TestRankPredictor:
    def test_zero_W(self):
        P = RankPredictor.init(12, rng(), **DIMS)
        P.W.data[...] = 0.0
        np.testing.assert_array_equal(predict_rank([2, 3], [[4], [5, 6], [7, 8, 9]], P).data,
                                      [0.5] * 3)

    def test_duplicate_candidates(self):
        P = RankPredictor.init(12, rng(1), **DIMS)
        s = predict_rank([2, 3], [[4, 5], [6], [4, 5]], P).data
        assert s[0] == s[2]
        assert np.all((s > 0) & (s < 1))

    def test_bilinear_oracle(self):
        P = RankPredictor.init(10, rng(2), d_emb=3, d_proj=2, filters=2, window=3)
        q, cands = [2, 3, 4], [[5], [6, 7, 8, 9], [2, 9]]
        rq = reference_encode(q, P.encoder)
        W = P.W.data
        ref = []
        for c in cands:
            ra = reference_encode(c, P.encoder)
            ref.append(sigmoid(sum(rq[i] * W[i, j] * ra[j] for i in range(2) for j in range(2))))
        np.testing.assert_allclose(predict_rank(q, cands, P).data, ref, rtol=0, atol=1e-12)

    def test_no_candidates(self):
        with pytest.raises(ContractError):
            predict_rank([2], [], RankPredictor.init(5, rng(), **DIMS))


class TestAggregation:
    def test_example(self):
        pos, neg = aggregate_pos_neg(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([0.3, 0.9]))
        np.testing.assert_allclose(pos.data, [0.3, 1.8], atol=1e-15)
        np.testing.assert_allclose(neg.data, [0.7, 0.2], atol=1e-15)

    def test_all_correct(self):
        reps = rng().standard_normal((4, 3))
        pos, neg = aggregate_pos_neg(reps, np.ones(4))
        np.testing.assert_array_equal(pos.data, reps.sum(axis=0))
        np.testing.assert_array_equal(neg.data, np.zeros(3))

    def test_half_scores(self):
        reps = rng(1).standard_normal((5, 3))
        pos, neg = aggregate_pos_neg(reps, np.full(5, 0.5))
        np.testing.assert_array_equal(pos.data, neg.data)
        np.testing.assert_allclose(pos.data, 0.5 * reps.sum(axis=0), atol=1e-12)

    def test_conservation(self):
        g = rng(2)
        for _ in range(200):
            m, d = g.integers(1, 8), g.integers(1, 6)
            reps, s = g.standard_normal((m, d)), g.uniform(0, 1, m)
            pos, neg = aggregate_pos_neg(reps, s)
            np.testing.assert_allclose(pos.data + neg.data, reps.sum(axis=0), rtol=0, atol=1e-9)

    def test_segments(self):
        reps = rng(3).standard_normal((5, 2))
        s = np.array([1.0, 0.0, 0.2, 0.4, 1.0])
        pos, neg = aggregate_pos_neg(reps, s, np.array([0, 0, 1, 1, 1]), 2)
        p1, _ = aggregate_pos_neg(reps[2:], s[2:])
        np.testing.assert_allclose(pos.data[1], p1.data, atol=1e-14)
        np.testing.assert_allclose(neg.data[0], reps[1], atol=1e-14)

    def test_errors(self):
        with pytest.raises(ContractError):
            aggregate_pos_neg(np.ones((3, 2)), np.ones(2))
        with pytest.raises(ContractError):
            aggregate_pos_neg(np.ones((2, 2)), np.array([0.5, 1.5]))


class TestLabelRepresentations:
    def test_one_hot_rows(self):
        W = rng().standard_normal((3, 4))
        pos, neg = label_representations(Tensor(np.array([[0.0, 1.0, 0.0]])), Tensor(W))
        np.testing.assert_array_equal(pos.data[0], W[1])
        np.testing.assert_allclose(neg.data[0], (W[0] + W[2]) / 2, atol=1e-15)

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            label_representations(Tensor(np.ones((1, 1))), Tensor(np.ones((1, 2))))


class TestJudges:
    def test_rank_neutral_scores(self):
        for seed in range(20):
            J = RankJudge.init(12, rng(seed), **DIMS)
            assert judge_rank([2, 3], [[4, 5], [6], [7, 8, 9]], np.full(3, 0.5), J).item() == 0.5

    def test_rank_zero_U(self):
        J = RankJudge.init(12, rng(), **DIMS)
        J.U.data[...] = 0.0
        assert judge_rank([2], [[3], [4]], np.array([1.0, 0.0]), J).item() == 0.5

    def test_rank_composed_oracle(self):
        J = RankJudge.init(10, rng(4), d_emb=3, d_proj=2, filters=2, window=3)
        q, cands, s = [2, 3], [[4, 5], [6, 7, 8], [9]], np.array([1.0, 0.0, 0.25])
        rq = reference_encode(q, J.encoder)
        reps = [reference_encode(c, J.encoder) for c in cands]
        r_pos = sum(r * si for r, si in zip(reps, s))
        r_neg = sum(r * (1 - si) for r, si in zip(reps, s))
        U = J.U.data
        bil = lambda a, b: sum(a[i] * U[i, j] * b[j] for i in range(2) for j in range(2))
        ref = sigmoid(bil(rq, r_pos) - bil(rq, r_neg))
        assert judge_rank(q, cands, s, J).item() == pytest.approx(ref, abs=1e-12)

    def test_class_uniform_label(self):
        for seed in range(20):
            J = ClassJudge.init(12, 2, rng(seed), **DIMS)
            assert judge_class([2, 3, 4], np.array([0.5, 0.5]), J).item() == 0.5

    @pytest.mark.parametrize("n", [3, 4, 5, 7])
    def test_class_uniform_label_many_classes(self, n):
        J = ClassJudge.init(12, n, rng(n), **DIMS)
        assert judge_class([2, 3], np.full(n, 1 / n), J).item() == 0.5

    def test_label_difference_matches_representations(self):
        g = rng(9)
        for n in (2, 3, 6):
            L, y = Tensor(g.normal(size=(n, 4))), Tensor(g.dirichlet(np.ones(n), size=5))
            r_pos, r_neg = label_representations(y, L)
            np.testing.assert_allclose(label_difference(y, L).data, r_pos.data - r_neg.data,
                                       atol=1e-12)

    def test_class_zero_U(self):
        J = ClassJudge.init(12, 3, rng(), **DIMS)
        J.U.data[...] = 0.0
        assert judge_class([2], np.array([0.0, 1.0, 0.0]), J).item() == 0.5

    def test_class_composed_oracle(self):
        J = ClassJudge.init(10, 3, rng(5), d_emb=3, d_proj=2, filters=2, window=3)
        tokens, y = [2, 3, 4, 5], np.array([0.0, 1.0, 0.0])
        rs = reference_encode(tokens, J.encoder)
        Wl, U = J.label_emb.data, J.U.data
        r_pos, r_neg = Wl[1], (Wl[0] + Wl[2]) / 2
        bil = lambda a, b: sum(a[i] * U[i, j] * b[j] for i in range(2) for j in range(2))
        ref = sigmoid(bil(rs, r_pos) - bil(rs, r_neg))
        assert judge_class(tokens, y, J).item() == pytest.approx(ref, abs=1e-12)

    def test_binary_judge_is_antisymmetric_in_label(self):
        J = ClassJudge.init(12, 2, rng(6), **DIMS)
        a = judge_class([2, 3], np.array([1.0, 0.0]), J).item()
        b = judge_class([2, 3], np.array([0.0, 1.0]), J).item()
        assert a + b == pytest.approx(1.0, abs=1e-12)

    def test_range(self):
        J = ClassJudge.init(12, 3, rng(7), **DIMS)
        g = rng(8)
        for _ in range(20):
            y = g.dirichlet(np.ones(3))
            assert 0.0 < judge_class([2, 5], y, J).item() < 1.0

    def test_label_errors(self):
        J = ClassJudge.init(12, 3, rng(), **DIMS)
        with pytest.raises(ContractError):
            judge_class([2], np.array([0.5, 0.5]), J)
        with pytest.raises(ContractError):
            judge_class([2], np.array([1.5, 0.0, 0.0]), J)
        RJ = RankJudge.init(12, rng(), **DIMS)
        with pytest.raises(ContractError):
            judge_rank([2], [[3], [4]], np.array([0.5]), RJ)

    def test_gradient_reaches_scores(self):
        J = RankJudge.init(12, rng(9), **DIMS)
        s = Tensor(np.array([0.2, 0.7, 0.4]), requires_grad=True)
        q, cands = [2, 3], [[4, 5], [6], [7, 8, 9]]
        with Tape() as tape:
            out = judge_rank(q, cands, s, J)
        g = ad.backward(tape, out)[s].data
        assert np.all(g != 0.0)
        err, _ = max_rel_error(lambda: judge_rank(q, cands, s, J), [s])
        assert err < REL_TOL

    def test_no_parameter_sharing(self):
        P = RankPredictor.init(12, rng(), **DIMS)
        J = RankJudge.init(12, rng(), **DIMS)
        ids_p = {id(t.data) for t in P.parameters()}
        assert not ids_p & {id(t.data) for t in J.parameters()}


class TestCheckpoint:
    def models(self):
        return {"predictor": ClassPredictor.init(12, 3, rng(1), hidden=5, **DIMS),
                "judge": ClassJudge.init(12, 3, rng(2), **DIMS),
                "ranker": RankPredictor.init(9, rng(3), **DIMS),
                "rank_judge": RankJudge.init(9, rng(4), **DIMS)}

    def test_round_trip(self, tmp_path):
        models = self.models()
        path = tmp_path / "m.npz"
        save_checkpoint(path, models, {"note": "x"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"note": "x"}
        for name, m in models.items():
            assert loaded[name].kind == m.kind
            assert loaded[name].config() == m.config()
            for k, v in m.state_dict().items():
                np.testing.assert_array_equal(loaded[name].state_dict()[k], v)
        assert predict_class([2, 3], loaded["predictor"]).data.tolist() == \
            predict_class([2, 3], models["predictor"]).data.tolist()

    def test_shape_mismatch(self):
        a = ClassPredictor.init(12, 3, rng(), hidden=5, **DIMS)
        b = ClassPredictor.init(13, 3, rng(), hidden=5, **DIMS)
        with pytest.raises(CheckpointError, match="shape"):
            a.load_state_dict(b.state_dict())

    def test_missing_tensor(self):
        a = RankJudge.init(12, rng(), **DIMS)
        state = a.state_dict()
        del state["U"]
        with pytest.raises(CheckpointError, match="lacks"):
            a.load_state_dict(state)

    def test_not_a_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"nope")
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
        np.savez(tmp_path / "plain.npz", x=np.ones(2))
        with pytest.raises(CheckpointError, match="__meta__"):
            load_checkpoint(tmp_path / "plain.npz")
