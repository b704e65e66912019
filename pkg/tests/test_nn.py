"""Network layers: brute-force oracles, masking laws, fused-scan equivalence."""

import numpy as np
import pytest

import metaphora.nn as nn
import metaphora.tensor as T
from metaphora.errors import (
    DimensionError,
    EmptySequenceError,
    ParameterError,
    VocabularyError,
)
from metaphora.tensor import Tensor


def tensor(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


def make_layer(vocab=5, dim=3, trainable=True, rng=None):
    rng = rng or np.random.default_rng(0)
    m = tensor(rng.uniform(-1, 1, (vocab, dim)))
    return nn.EmbeddingLayer(m, trainable=trainable)


class TestEmbedding:
    def test_lookup_matches_rows(self):
        layer = make_layer()
        ids = np.array([[2, 4], [1, 1]])
        out = nn.embed(layer, ids)
        np.testing.assert_array_equal(out.data, layer.matrix.data[ids])

    def test_pad_row_pinned_to_zero(self):
        layer = make_layer()
        np.testing.assert_array_equal(layer.matrix.data[0], np.zeros(3))

    def test_repeated_ids_accumulate_gradient(self):
        layer = make_layer()
        out = nn.embed(layer, np.array([2, 2, 3]))
        out.sum().backward()
        g = layer.matrix.grad
        np.testing.assert_array_equal(g[2], [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(g[3], [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(g[1], [0.0, 0.0, 0.0])

    def test_pad_row_receives_no_gradient(self):
        layer = make_layer()
        nn.embed(layer, np.array([0, 0, 2])).sum().backward()
        np.testing.assert_array_equal(layer.matrix.grad[0], np.zeros(3))

    def test_frozen_layer_gets_no_gradient(self):
        layer = make_layer(trainable=False)
        nn.embed(layer, np.array([1, 2])).sum().backward()
        assert layer.matrix.grad is None

    def test_id_range_and_emptiness_checked(self):
        layer = make_layer(vocab=5)
        with pytest.raises(VocabularyError):
            nn.embed(layer, np.array([5]))
        with pytest.raises(VocabularyError):
            nn.embed(layer, np.array([-1]))
        with pytest.raises(EmptySequenceError):
            nn.embed(layer, np.array([], dtype=np.int64))

    def test_matrix_must_be_2d(self):
        with pytest.raises(DimensionError):
            nn.EmbeddingLayer(tensor([1.0, 2.0]), trainable=True)


class TestLinear:
    def test_forward_and_gradients_hand_case(self):
        # out = x @ w.T + b with x=[1,2], w=[[3,4],[5,6]], b=[7,8]
        # => out = [3+8+7, 5+12+8] = [18, 25]
        w = tensor([[3.0, 4.0], [5.0, 6.0]])
        b = tensor([7.0, 8.0])
        x = tensor([1.0, 2.0])
        out = nn.linear(w, b, x)
        np.testing.assert_array_equal(out.data, [18.0, 25.0])
        out.sum().backward()
        np.testing.assert_array_equal(w.grad, [[1.0, 2.0], [1.0, 2.0]])
        np.testing.assert_array_equal(b.grad, [1.0, 1.0])
        np.testing.assert_array_equal(x.grad, [8.0, 10.0])

    def test_batched_input_matches_per_row(self, rng):
        w = tensor(rng.uniform(-1, 1, (4, 3)))
        b = tensor(rng.uniform(-1, 1, 4))
        xs = rng.uniform(-1, 1, (5, 3))
        batched = nn.linear(w, b, tensor(xs)).data
        rows = [nn.linear(w, b, tensor(x)).data for x in xs]
        np.testing.assert_allclose(batched, np.stack(rows), rtol=0, atol=1e-15)

    def test_shape_validation(self):
        w, b = tensor([[1.0, 2.0]]), tensor([1.0])
        with pytest.raises(DimensionError):
            nn.linear(w, tensor([1.0, 2.0]), tensor([1.0, 2.0]))
        with pytest.raises(DimensionError):
            nn.linear(w, b, tensor([1.0, 2.0, 3.0]))


def brute_conv(x, w, b):
    """Independent loop implementation of valid 1-d convolution over time."""
    B, L, D = x.shape
    k, _, C = w.shape
    span = L - k + 1
    out = np.zeros((B, span, C))
    for bi in range(B):
        for t in range(span):
            for c in range(C):
                out[bi, t, c] = b[c] + (x[bi, t:t + k, :] * w[:, :, c]).sum()
    return out


class TestConv:
    def test_hand_case(self):
        # k=2, one channel, w = [[1,2],[3,4]]: window t scores
        # x[t][0]*1 + x[t][1]*2 + x[t+1][0]*3 + x[t+1][1]*4
        bank = nn.ConvBank([2], embed_dim=2, out_channels=1, rng=np.random.default_rng(0))
        bank.weights[2].data[:] = np.array([[[1.0], [2.0]], [[3.0], [4.0]]]).reshape(2, 2, 1)
        bank.biases[2].data[:] = 0.0
        x = tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        out = nn.conv1d_valid(bank, x, 2)
        np.testing.assert_array_equal(out.data, [[5.0], [9.0]])
        bank.biases[2].data[:] = 1.0
        np.testing.assert_array_equal(nn.conv1d_valid(bank, x, 2).data, [[6.0], [10.0]])

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_matches_brute_force(self, k, rng):
        bank = nn.ConvBank([k], embed_dim=3, out_channels=4, rng=rng)
        x = rng.uniform(-1, 1, (2, 6, 3))
        got = nn.conv1d_valid(bank, tensor(x), k).data
        want = brute_conv(x, bank.weights[k].data, bank.biases[k].data)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_single_sentence_equals_batch_of_one(self, rng):
        bank = nn.ConvBank([2], embed_dim=3, out_channels=2, rng=rng)
        x = rng.uniform(-1, 1, (5, 3))
        single = nn.conv1d_valid(bank, tensor(x), 2).data
        batch = nn.conv1d_valid(bank, tensor(x[None]), 2).data
        np.testing.assert_array_equal(single, batch[0])

    def test_validation(self, rng):
        bank = nn.ConvBank([3], embed_dim=2, out_channels=1, rng=rng)
        with pytest.raises(ParameterError):
            nn.conv1d_valid(bank, tensor([[1.0, 2.0]]), 2)
        with pytest.raises(DimensionError, match="shorter than kernel"):
            nn.conv1d_valid(bank, tensor([[1.0, 2.0], [3.0, 4.0]]), 3)
        with pytest.raises(DimensionError, match="input width"):
            nn.conv1d_valid(bank, tensor([[1.0, 2.0, 3.0]] * 4), 3)


class TestPooling:
    def test_max_ignores_padded_rows(self):
        x = tensor([[1.0], [2.0], [99.0]])
        assert nn.pool_time(x, "max", 2).data[0] == 2.0

    def test_max_tie_gradient_goes_to_first_occurrence(self):
        x = tensor([[1.0], [1.0], [0.0]])
        nn.pool_time(x, "max", 2).sum().backward()
        np.testing.assert_array_equal(x.grad, [[1.0], [0.0], [0.0]])

    def test_avg_divides_by_valid_length(self):
        x = tensor([[2.0], [4.0], [100.0]])
        assert nn.pool_time(x, "avg", 2).data[0] == 3.0
        x.zero_grad()
        nn.pool_time(x, "avg", 2).sum().backward()
        np.testing.assert_array_equal(x.grad, [[0.5], [0.5], [0.0]])

    def test_batch_matches_per_sentence(self, rng):
        x = rng.uniform(-1, 1, (4, 6, 3))
        lens = np.array([2, 6, 1, 4])
        for mode in ("max", "avg"):
            batch = nn.pool_time(tensor(x), mode, lens).data
            singles = [nn.pool_time(tensor(x[i]), mode, int(lens[i])).data for i in range(4)]
            np.testing.assert_allclose(batch, np.stack(singles), rtol=0, atol=1e-15)

    def test_brute_force_oracle(self, rng):
        x = rng.uniform(-1, 1, (3, 5, 2))
        lens = np.array([1, 3, 5])
        got_max = nn.pool_time(tensor(x), "max", lens).data
        got_avg = nn.pool_time(tensor(x), "avg", lens).data
        for i, n in enumerate(lens):
            np.testing.assert_array_equal(got_max[i], x[i, :n].max(axis=0))
            np.testing.assert_allclose(got_avg[i], x[i, :n].mean(axis=0), rtol=0, atol=1e-15)

    def test_mode_and_length_validation(self):
        x = tensor([[1.0], [2.0]])
        with pytest.raises(ParameterError):
            nn.pool_time(x, "median", 2)
        with pytest.raises(EmptySequenceError):
            nn.pool_time(x, "max", 0)
        with pytest.raises(DimensionError):
            nn.pool_time(x, "max", 3)


class TestMaskAndReverse:
    def test_mask_zeroes_beyond_length(self):
        x = tensor([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        out = nn.mask_time(x, 2)
        np.testing.assert_array_equal(out.data, [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, [[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]])

    def test_reverse_example(self):
        x = tensor([[1.0], [2.0], [3.0], [9.0], [9.0]])
        out = nn.reverse_valid(x, 3)
        np.testing.assert_array_equal(out.data, [[3.0], [2.0], [1.0], [0.0], [0.0]])

    def test_reverse_twice_is_masking(self, rng):
        x = rng.uniform(-1, 1, (3, 6, 2))
        lens = np.array([2, 6, 4])
        twice = nn.reverse_valid(nn.reverse_valid(tensor(x), lens), lens).data
        masked = nn.mask_time(tensor(x), lens).data
        np.testing.assert_array_equal(twice, masked)

    def test_reverse_is_self_adjoint(self, rng):
        # <R(x), y> == <x, R(y)> for any x, y sharing the valid lengths.
        x = rng.uniform(-1, 1, (2, 5, 3))
        y = rng.uniform(-1, 1, (2, 5, 3))
        lens = np.array([3, 5])
        rx = nn.reverse_valid(tensor(x), lens).data
        ry = nn.reverse_valid(tensor(y), lens).data
        assert abs((rx * y).sum() - (x * ry).sum()) < 1e-12


def composed_lstm(cell, xs, lens):
    """Reference recurrence built from single composed steps (no fused scan)."""
    B, L, D = xs.shape
    H = cell.hidden_size
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    rows = []
    for t in range(L):
        h, c = nn.lstm_step(cell, Tensor(xs[:, t, :]), h, c)
        rows.append(h.data.copy())
    out = np.stack(rows, axis=1)
    mask = (np.arange(L)[None, :] < lens[:, None]).astype(float)[:, :, None]
    return out * mask


def composed_gru(cell, xs, lens):
    B, L, D = xs.shape
    H = cell.hidden_size
    h = Tensor(np.zeros((B, H)))
    rows = []
    for t in range(L):
        h = nn.gru_step(cell, Tensor(xs[:, t, :]), h)
        rows.append(h.data.copy())
    out = np.stack(rows, axis=1)
    mask = (np.arange(L)[None, :] < lens[:, None]).astype(float)[:, :, None]
    return out * mask


class TestRecurrence:
    @pytest.mark.parametrize("kind", ["lstm", "gru"])
    def test_fused_scan_matches_composed_steps(self, kind, rng):
        cell = nn.RecurrentCell(kind, input_size=3, hidden_size=4, rng=rng)
        xs = rng.uniform(-1, 1, (3, 6, 3))
        lens = np.array([6, 2, 4])
        got = nn.run_rnn(cell, tensor(xs), "forward", lens).data
        ref = composed_lstm(cell, xs, lens) if kind == "lstm" else composed_gru(cell, xs, lens)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kind", ["lstm", "gru"])
    def test_backward_direction_reads_suffix_first(self, kind, rng):
        # Row t of a backward run must equal the state after consuming
        # positions len-1 .. t, i.e. the forward run of the reversed prefix,
        # re-reversed.
        cell = nn.RecurrentCell(kind, input_size=2, hidden_size=3, rng=rng)
        xs = rng.uniform(-1, 1, (2, 5, 2))
        lens = np.array([4, 5])
        got = nn.run_rnn(cell, tensor(xs), "backward", lens).data
        flipped = nn.reverse_valid(tensor(xs), lens).data
        fwd = composed_lstm(cell, flipped, lens) if kind == "lstm" else composed_gru(cell, flipped, lens)
        ref = nn.reverse_valid(tensor(fwd), lens).data
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)

    def test_states_at_padded_rows_are_zero(self, rng):
        cell = nn.RecurrentCell("gru", input_size=2, hidden_size=3, rng=rng)
        xs = rng.uniform(-1, 1, (2, 5, 2))
        lens = np.array([2, 3])
        for direction in ("forward", "backward"):
            hs = nn.run_rnn(cell, tensor(xs), direction, lens).data
            assert np.all(hs[0, 2:] == 0.0)
            assert np.all(hs[1, 3:] == 0.0)

    def test_padded_positions_cannot_influence_states(self, rng):
        cell = nn.RecurrentCell("lstm", input_size=2, hidden_size=3, rng=rng)
        xs = rng.uniform(-1, 1, (2, 5, 2))
        lens = np.array([3, 4])
        base = nn.run_rnn(cell, tensor(xs), "backward", lens).data
        mutated = xs.copy()
        mutated[0, 3:] = 77.0
        mutated[1, 4:] = -55.0
        got = nn.run_rnn(cell, tensor(mutated), "backward", lens).data
        np.testing.assert_array_equal(got, base)

    def test_single_sentence_equals_batch_of_one(self, rng):
        cell = nn.RecurrentCell("gru", input_size=2, hidden_size=3, rng=rng)
        xs = rng.uniform(-1, 1, (4, 2))
        single = nn.run_rnn(cell, tensor(xs), "forward", 3).data
        batch = nn.run_rnn(cell, tensor(xs[None]), "forward", np.array([3])).data
        np.testing.assert_allclose(single, batch[0], rtol=0, atol=1e-15)

    def test_bidirectional_concatenates_both_runs(self, rng):
        fwd = nn.RecurrentCell("lstm", input_size=2, hidden_size=3, rng=rng)
        bwd = nn.RecurrentCell("lstm", input_size=2, hidden_size=3, rng=rng)
        xs = rng.uniform(-1, 1, (2, 4, 2))
        lens = np.array([4, 2])
        both = nn.bidirectional(fwd, bwd, tensor(xs), lens).data
        np.testing.assert_array_equal(both[:, :, :3], nn.run_rnn(fwd, tensor(xs), "forward", lens).data)
        np.testing.assert_array_equal(both[:, :, 3:], nn.run_rnn(bwd, tensor(xs), "backward", lens).data)

    def test_lstm_forget_bias_starts_at_one(self, rng):
        cell = nn.RecurrentCell("lstm", input_size=2, hidden_size=3, rng=rng)
        np.testing.assert_array_equal(cell.bias.data[3:6], np.ones(3))
        np.testing.assert_array_equal(cell.bias.data[:3], np.zeros(3))

    def test_step_kind_and_shape_guards(self, rng):
        lstm = nn.RecurrentCell("lstm", 2, 3, rng)
        gru = nn.RecurrentCell("gru", 2, 3, rng)
        from metaphora.errors import ContractError

        with pytest.raises(ContractError):
            nn.gru_step(lstm, tensor([1.0, 2.0]), tensor([0.0] * 3))
        with pytest.raises(ContractError):
            nn.lstm_step(gru, tensor([1.0, 2.0]), tensor([0.0] * 3), tensor([0.0] * 3))
        with pytest.raises(DimensionError):
            nn.gru_step(gru, tensor([[1.0, 2.0]]), tensor([0.0] * 3))
        with pytest.raises(ParameterError):
            nn.RecurrentCell("elman", 2, 3, rng)
        with pytest.raises(ParameterError):
            nn.run_rnn(gru, tensor([[1.0, 2.0]]), "sideways", 1)


class TestDropout:
    def test_eval_and_p_zero_are_identity(self, rng):
        x = tensor([[1.0, 2.0]])
        assert nn.dropout(x, 0.5, "eval") is x
        assert nn.dropout(x, 0.0, "train", rng) is x

    def test_train_mask_reproducible_and_inverted(self):
        x = tensor(np.ones((200, 50)))
        out = nn.dropout(x, 0.25, "train", np.random.default_rng(3)).data
        keep = np.random.default_rng(3).random((200, 50)) >= 0.25
        np.testing.assert_allclose(out, keep / 0.75, rtol=0, atol=1e-15)
        # survivors are scaled so the expectation is preserved
        assert abs(out.mean() - 1.0) < 0.02

    def test_gradient_uses_same_mask(self):
        x = tensor(np.ones(1000))
        out = nn.dropout(x, 0.5, "train", np.random.default_rng(7))
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, out.data)

    def test_parameter_validation(self, rng):
        x = tensor([1.0])
        with pytest.raises(ParameterError):
            nn.dropout(x, 1.0, "train", rng)
        with pytest.raises(ParameterError):
            nn.dropout(x, -0.1, "train", rng)
        with pytest.raises(ParameterError):
            nn.dropout(x, 0.5, "test", rng)
        with pytest.raises(ParameterError):
            nn.dropout(x, 0.5, "train", None)


class TestBceLoss:
    def test_matches_naive_formula_at_moderate_logits(self, rng):
        z = rng.uniform(-5, 5, 20)
        y = rng.integers(0, 2, 20).astype(float)
        got = nn.bce_loss(tensor(z), y).data
        s = 1.0 / (1.0 + np.exp(-z))
        naive = -(y * np.log(s) + (1 - y) * np.log(1 - s))
        np.testing.assert_allclose(got, naive, rtol=0, atol=1e-12)

    def test_extreme_logits_stay_finite(self):
        z = tensor([1000.0, -1000.0, 1000.0, -1000.0])
        y = np.array([1.0, 0.0, 0.0, 1.0])
        loss = nn.bce_loss(z, y).data
        assert np.all(np.isfinite(loss))
        np.testing.assert_allclose(loss[:2], [0.0, 0.0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(loss[2:], [1000.0, 1000.0], rtol=0, atol=1e-12)

    def test_gradient_is_sigmoid_minus_label(self):
        z = tensor([0.0, 2.0, -2.0])
        y = np.array([1.0, 0.0, 1.0])
        nn.bce_loss(z, y).sum().backward()
        s = 1.0 / (1.0 + np.exp(-z.data))
        np.testing.assert_allclose(z.grad, s - y, rtol=0, atol=1e-15)

    def test_label_shape_guard(self):
        with pytest.raises(DimensionError):
            nn.bce_loss(tensor([0.0, 1.0]), np.array([1.0, 0.0, 1.0]))
