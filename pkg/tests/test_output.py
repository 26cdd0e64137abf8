import numpy as np
import pytest

from qdren.output import OutputParams, attention, loss, pool, predict
from qdren.tensor import Tensor


class TestAttention:
    def test_orthogonal_question_uniform(self):
        q = Tensor([0.0, 0.0, 1.0])
        hiddens = Tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        assert np.allclose(attention(q, hiddens).data, 0.5)

    def test_closed_form(self):
        q = Tensor([1.0])
        hiddens = Tensor([[0.0], [np.log(2.0)]])
        assert np.allclose(attention(q, hiddens).data, [1 / 3, 2 / 3], atol=1e-6)

    def test_single_block(self):
        p = attention(Tensor([1.0, 2.0]), Tensor([[3.0, 4.0]]))
        assert np.array_equal(p.data, [1.0])

    def test_normalized_and_shift_invariant(self):
        rng = np.random.default_rng(0)
        q = Tensor(rng.normal(size=4))
        h = Tensor(rng.normal(size=(5, 4)))
        p = attention(q, h)
        assert abs(float(p.data.sum()) - 1.0) <= 1e-6


class TestPool:
    def test_one_hot_selects(self):
        hiddens = Tensor([[1.0, 2.0], [3.0, 4.0]])
        u = pool(Tensor([0.0, 1.0]), hiddens)
        assert np.array_equal(u.data, [3.0, 4.0])

    def test_uniform_average(self):
        hiddens = Tensor([[1.0, 0.0], [0.0, 1.0]])
        u = pool(Tensor([0.5, 0.5]), hiddens)
        assert np.array_equal(u.data, [0.5, 0.5])

    def test_equal_hiddens_invariant(self):
        hiddens = Tensor([[2.0, 3.0], [2.0, 3.0], [2.0, 3.0]])
        u = pool(Tensor([0.2, 0.5, 0.3]), hiddens)
        assert np.allclose(u.data, [2.0, 3.0])


class TestPredict:
    def test_zero_r_gives_zero_logits(self):
        params = OutputParams(R=Tensor(np.zeros((3, 2))), H=Tensor(np.eye(2)),
                              phi="identity")
        logits = predict(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]), params)
        assert np.array_equal(logits.data, [0.0, 0.0, 0.0])

    def test_zero_h_reduces_to_rq(self):
        R = np.array([[1.0, 2.0], [3.0, 4.0]])
        params = OutputParams(R=Tensor(R), H=Tensor(np.zeros((2, 2))),
                              phi="identity")
        logits = predict(Tensor([1.0, 1.0]), Tensor([5.0, 5.0]), params)
        assert np.array_equal(logits.data, R @ [1.0, 1.0])

    def test_hand_sum(self):
        params = OutputParams(R=Tensor(np.eye(2)), H=Tensor(np.eye(2)),
                              phi="identity")
        logits = predict(Tensor([1.0, 0.0]), Tensor([0.0, 1.0]), params)
        assert np.array_equal(logits.data, [1.0, 1.0])

    def test_candidate_restriction_slices_rows(self):
        R = np.arange(8.0).reshape(4, 2)
        params = OutputParams(R=Tensor(R), H=Tensor(np.zeros((2, 2))),
                              phi="identity")
        q = Tensor([1.0, 1.0])
        logits = predict(q, Tensor([0.0, 0.0]), params, candidate_rows=[1, 3])
        assert np.array_equal(logits.data, R[[1, 3]] @ [1.0, 1.0])

    def test_scaling_r_preserves_argmax(self):
        rng = np.random.default_rng(0)
        R = rng.normal(size=(5, 3))
        q, u = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
        base = predict(q, u, OutputParams(R=Tensor(R), H=Tensor(np.eye(3)),
                                          phi="identity")).data
        scaled = predict(q, u, OutputParams(R=Tensor(3.0 * R), H=Tensor(np.eye(3)),
                                            phi="identity")).data
        assert np.allclose(scaled, 3.0 * base, rtol=1e-5)
        assert np.argmax(scaled) == np.argmax(base)


class TestLoss:
    def test_lambda_zero_is_pure_cross_entropy(self):
        logits = Tensor([1.0, 1.0, 1.0, 1.0])
        out = loss(logits, 0, [Tensor([100.0])], lam=0.0)
        assert out.item() == pytest.approx(np.log(4), rel=1e-5)

    def test_hand_norm(self):
        # correct class probability ~1 so cross entropy ~0
        logits = Tensor([50.0, -50.0])
        out = loss(logits, 0, [Tensor([3.0, 4.0])], lam=0.001)
        assert out.item() == pytest.approx(0.025, abs=1e-5)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            loss(Tensor([1.0, 2.0]), 0, [], lam=-1.0)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            logits = Tensor(rng.normal(size=6))
            out = loss(logits, int(rng.integers(6)), [Tensor(rng.normal(size=4))],
                       lam=0.01)
            assert out.item() >= 0.0
