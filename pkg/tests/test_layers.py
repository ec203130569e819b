import numpy as np
import pytest

from gradcheck import finite_diff_check
from snapgraph.neural import layers as L
from snapgraph.neural import tensor as T
from snapgraph.neural.tensor import AutodiffError, Tensor


# ---------------------------------------------------------------------------
# Scaled Laplacian
# ---------------------------------------------------------------------------


def test_scaled_laplacian_two_connected_nodes():
    adj = Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = L.scaled_laplacian(adj).data
    assert np.allclose(out, np.array([[0.0, -1.0], [-1.0, 0.0]]))


def test_scaled_laplacian_isolated_nodes_vanish():
    # an edgeless graph maps to the zero matrix
    out = L.scaled_laplacian(Tensor(np.zeros((3, 3)))).data
    assert np.array_equal(out, np.zeros((3, 3)))
    # a graph with one isolated node zeroes exactly that row and column
    adj = np.zeros((3, 3))
    adj[0, 1] = adj[1, 0] = 2.0
    out = L.scaled_laplacian(Tensor(adj)).data
    assert np.array_equal(out[2], np.zeros(3))
    assert np.array_equal(out[:, 2], np.zeros(3))


def test_scaled_laplacian_input_validation():
    with pytest.raises(AutodiffError, match="non-negative"):
        L.scaled_laplacian(Tensor(np.array([[0.0, -1.0], [-1.0, 0.0]])))
    with pytest.raises(AutodiffError, match="symmetric"):
        L.scaled_laplacian(Tensor(np.array([[0.0, 1.0], [0.5, 0.0]])))


def test_scaled_laplacian_spectrum_in_unit_interval(rng):
    for _ in range(10):
        n = int(rng.integers(2, 12))
        raw = rng.random((n, n)) * (rng.random((n, n)) < 0.4)
        adj = np.triu(raw, 1)
        adj = adj + adj.T
        eig = np.linalg.eigvalsh(L.scaled_laplacian(Tensor(adj)).data)
        assert eig.min() >= -1.0 - 1e-9 and eig.max() <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# Chebyshev convolution
# ---------------------------------------------------------------------------


def test_chebyshev_k1_is_dense_linear(rng):
    conv = L.ChebConv(rng, 3, 2, 1, "c")
    x = Tensor(rng.normal(size=(4, 3)))
    out = conv(None, x)  # K=1 never touches the Laplacian
    assert np.allclose(out.data, x.data @ conv.thetas[0].data)


def test_chebyshev_recurrence_matches_polynomials(rng):
    n = 5
    adj = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.5), 1)
    adj = adj + adj.T
    l_scaled = L.scaled_laplacian(Tensor(adj))
    x = rng.normal(size=(n, 3))
    thetas = [Tensor(rng.normal(size=(3, 2))) for _ in range(4)]
    out = L.chebyshev_conv(l_scaled, Tensor(x), thetas).data
    Ls = l_scaled.data
    T0, T1 = np.eye(n), Ls
    T2 = 2 * Ls @ T1 - T0
    T3 = 2 * Ls @ T2 - T1
    expected = sum(Tk @ x @ th.data for Tk, th in zip((T0, T1, T2, T3), thetas))
    assert np.allclose(out, expected, atol=1e-12)


def _hop_distances(adj):
    n = len(adj)
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0)
    dist[adj > 0] = 1
    for k in range(n):
        dist = np.minimum(dist, dist[:, k, None] + dist[None, k, :])
    return dist


def test_chebyshev_locality_is_k_minus_one_hops(rng):
    for _ in range(10):
        n = int(rng.integers(4, 12))
        adj = np.triu((rng.random((n, n)) < 0.3) * rng.random((n, n)), 1)
        adj = adj + adj.T
        dist = _hop_distances(adj)
        for K in (1, 2, 3):
            conv = L.ChebConv(rng, 2, 2, K, "c")
            x = rng.normal(size=(n, 2))
            l_scaled = L.scaled_laplacian(Tensor(adj))
            base = conv(l_scaled, Tensor(x)).data
            u = int(rng.integers(0, n))
            x2 = x.copy()
            x2[u] += 1.0
            moved = conv(l_scaled, Tensor(x2)).data
            changed = np.any(base != moved, axis=1)
            beyond = dist[u] > K - 1
            assert not np.any(changed & beyond)


# ---------------------------------------------------------------------------
# Edge-weight compression into the Laplacian
# ---------------------------------------------------------------------------


def test_weighted_adjacency_symmetrizes(rng):
    mlp = L.EdgeWeightMLP(rng, hidden=4)
    src = np.array([0, 1, 2])
    dst = np.array([1, 0, 0])
    feat = Tensor(rng.normal(size=(3, 4)))
    adj = L.weighted_adjacency(mlp, 3, src, dst, feat).data
    assert np.allclose(adj, adj.T)
    w = mlp(feat).data.ravel()
    assert adj[0, 1] == pytest.approx((w[0] + w[1]) / 2)
    assert adj[0, 2] == pytest.approx(w[2] / 2)  # only one direction present
    assert np.all(adj >= 0) and np.all(adj <= 1)


def test_gradient_flows_through_laplacian_pipeline(rng):
    mlp = L.EdgeWeightMLP(rng, hidden=3)
    conv = L.ChebConv(rng, 2, 2, 3, "c")
    dec = L.InnerProductDecoder(rng, 2, 2)
    x = Tensor(rng.normal(size=(4, 2)))
    feat_data = rng.normal(size=(4, 4))
    src = np.array([0, 1, 2, 3])
    dst = np.array([1, 0, 3, 2])

    def loss():
        adj = L.weighted_adjacency(mlp, 4, src, dst, Tensor(feat_data))
        h = T.tanh(conv(L.scaled_laplacian(adj), x))
        return (dec(h[np.array([0, 2])], h[np.array([1, 3])]) ** 2).sum()

    finite_diff_check(loss, mlp.params + conv.params + dec.params, rng=rng)


# ---------------------------------------------------------------------------
# Message passing
# ---------------------------------------------------------------------------


def test_mpa_mean_hand_aggregation(rng):
    layer = L.MPALayer(rng, 2, 1, 3, "m", aggregation="mean")
    x = rng.normal(size=(3, 2))
    src = np.array([0, 1])
    dst = np.array([2, 2])
    ef = rng.normal(size=(2, 1))
    out = layer(Tensor(x), src, dst, Tensor(ef)).data

    def msg(s, d, e):
        row = np.concatenate([x[s], x[d], e])
        return np.maximum(row @ layer.msg.W.data + layer.msg.b.data, 0.0)

    zero = np.zeros(1)
    # node 2 receives messages from 0, 1 and its self-loop
    expected = (msg(0, 2, ef[0]) + msg(1, 2, ef[1]) + msg(2, 2, zero)) / 3
    assert np.allclose(out[2], expected)
    # nodes 0 and 1 receive only their self-loops
    assert np.allclose(out[0], msg(0, 0, zero))


def test_mpa_empty_graph_self_loops_only(rng):
    layer = L.MPALayer(rng, 2, 4, 3, "m", aggregation="max")
    x = rng.normal(size=(5, 2))
    out = layer(Tensor(x), np.array([], dtype=int), np.array([], dtype=int), None)
    assert out.shape == (5, 3)


def test_mpa_rejects_unknown_aggregation(rng):
    with pytest.raises(AutodiffError, match="aggregation"):
        L.MPALayer(rng, 2, 4, 3, "m", aggregation="median")


# ---------------------------------------------------------------------------
# Recurrent cells
# ---------------------------------------------------------------------------


def _ring_laplacian(n):
    adj = np.zeros((n, n))
    for i in range(n):
        adj[i, (i + 1) % n] = adj[(i + 1) % n, i] = 1.0
    return L.scaled_laplacian(Tensor(adj))


def test_lstm_none_state_equals_zero_state(rng):
    cell = L.GraphLSTMCell(rng, 3, 4, 2, "lstm")
    l_scaled = _ring_laplacian(5)
    x = Tensor(rng.normal(size=(5, 3)))
    h0 = Tensor(np.zeros((5, 4)))
    c0 = Tensor(np.zeros((5, 4)))
    ha, ca = cell(l_scaled, x, None)
    hb, cb = cell(l_scaled, x, (h0, c0))
    assert np.array_equal(ha.data, hb.data)
    assert np.array_equal(ca.data, cb.data)


def test_lstm_forget_bias_starts_at_one(rng):
    cell = L.GraphLSTMCell(rng, 3, 4, 2, "lstm")
    assert np.all(cell.bias["f"].data == 1.0)
    assert np.all(cell.bias["i"].data == 0.0)


def test_gru_k1_matches_dense_gru_equations(rng):
    cell = L.GraphGRUCell(rng, 3, 4, 1, "gru")
    x = rng.normal(size=(2, 3))
    h = rng.normal(size=(2, 4))
    out = cell(None, Tensor(x), Tensor(h)).data

    def lin(conv, v):
        return v @ conv.thetas[0].data

    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    z = sig(lin(cell.conv_x["z"], x) + lin(cell.conv_h["z"], h) + cell.bias["z"].data)
    r = sig(lin(cell.conv_x["r"], x) + lin(cell.conv_h["r"], h) + cell.bias["r"].data)
    n = np.tanh(
        lin(cell.conv_x["n"], x) + lin(cell.conv_h["n"], r * h) + cell.bias["n"].data
    )
    assert np.allclose(out, z * h + (1 - z) * n)


def test_recurrent_cells_gradients(rng):
    lstm = L.GraphLSTMCell(rng, 2, 3, 2, "lstm")
    gru = L.GraphGRUCell(rng, 2, 3, 2, "gru")
    l_scaled = _ring_laplacian(4)
    x1 = Tensor(rng.normal(size=(4, 2)))
    x2 = Tensor(rng.normal(size=(4, 2)))

    def loss():
        h, c = lstm(l_scaled, x1, None)
        h, c = lstm(l_scaled, x2, (h, c))
        g = gru(l_scaled, x1, h)
        return (g ** 2).sum()

    finite_diff_check(loss, lstm.params + gru.params, rng=rng, max_coords=2)


# ---------------------------------------------------------------------------
# Temporal self-attention
# ---------------------------------------------------------------------------


def test_alibi_slope_sequence():
    assert L.alibi_slopes(1) == [2.0 ** -8]
    assert L.alibi_slopes(8) == [2.0 ** -h for h in range(1, 9)]


def test_attention_is_causal(rng):
    attn = L.TemporalSelfAttention(rng, 3, 4, "attn")
    h = rng.normal(size=(6, 2, 3))
    base = attn(Tensor(h)).data
    h2 = h.copy()
    h2[4:] += rng.normal(size=(2, 2, 3))  # perturb months 5..6
    moved = attn(Tensor(h2)).data
    assert np.array_equal(base[:4], moved[:4])
    assert not np.array_equal(base[4:], moved[4:])


def test_attention_weights_decay_with_distance(rng):
    # zero projections for Q and K isolate the relative-position penalty
    attn = L.TemporalSelfAttention(rng, 2, 2, "attn", slope=0.5)
    attn.W_Q.data[:] = 0.0
    attn.W_K.data[:] = 0.0
    n_months = 5
    h = np.zeros((n_months, 1, 2))
    h[:, 0, 0] = np.arange(n_months)  # V distinguishes months via W_V
    out = attn(Tensor(h)).data
    # weights at the last month: softmax(-0.5 * (T-1 - tau)), decreasing in age
    logits = -0.5 * (n_months - 1 - np.arange(n_months))
    weights = np.exp(logits) / np.exp(logits).sum()
    assert np.all(np.diff(weights) > 0)
    v = h[:, 0, :] @ attn.W_V.data
    assert np.allclose(out[-1, 0], weights @ v)


def test_attention_gradient(rng):
    attn = L.TemporalSelfAttention(rng, 2, 3, "attn")
    h = Tensor(rng.normal(size=(4, 3, 2)))

    def loss():
        return (attn(h) ** 2).mean()

    finite_diff_check(loss, attn.params, rng=rng)


# ---------------------------------------------------------------------------
# Readouts and batch normalization
# ---------------------------------------------------------------------------


def test_inner_product_decoder_is_asymmetric(rng):
    dec = L.InnerProductDecoder(rng, 4, 3)
    a = Tensor(rng.normal(size=(1, 4)))
    b = Tensor(rng.normal(size=(1, 4)))
    fwd = dec(a, b).data
    bwd = dec(b, a).data
    assert not np.allclose(fwd, bwd)
    # tying the projections restores symmetry
    dec.D_c.data = dec.S_c.data.copy()
    dec.D_m.data = dec.S_m.data.copy()
    assert np.allclose(dec(a, b).data, dec(b, a).data)


def test_mlp_readout_shapes_and_gradient(rng):
    read = L.MLPReadout(rng, 3, 5)
    a = Tensor(rng.normal(size=(7, 3)))
    b = Tensor(rng.normal(size=(7, 3)))
    assert read(a, b).shape == (7, 2)
    finite_diff_check(lambda: (read(a, b) ** 2).sum(), read.params, rng=rng)


def test_batchnorm_train_and_eval_modes(rng):
    bn = L.BatchNorm(3, "bn")
    x = rng.normal(loc=5.0, scale=2.0, size=(64, 3))
    out = bn(Tensor(x)).data
    assert np.allclose(out.mean(axis=0), 0.0, atol=1e-7)
    assert np.allclose(out.std(axis=0), 1.0, atol=1e-3)
    # running statistics move toward the batch statistics and are shared
    first_mean = bn.running_mean.data.copy()
    bn(Tensor(x))
    assert not np.array_equal(bn.running_mean.data, first_mean)
    assert {b.name for b in bn.buffers} == {"bn.running_mean", "bn.running_var"}
    bn.training = False
    y = rng.normal(size=(4, 3))
    expected = (y - bn.running_mean.data) / np.sqrt(bn.running_var.data + bn.eps)
    expected = expected * bn.gamma.data + bn.beta.data
    assert np.allclose(bn(Tensor(y)).data, expected)
