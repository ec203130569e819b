"""Graph and temporal layer kernels.

Everything here operates on Tensors from the autodiff core, so gradients
flow end to end (including through edge-weight compression into the
Laplacian used by Chebyshev convolutions).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Buffer:
    """Named non-gradient state, such as normalization running statistics.

    Buffers travel with the parameters through checkpoints and best-epoch
    restoration but never receive gradients.
    """

    def __init__(self, name: str, data):
        self.name = name
        self.data = np.asarray(data, dtype=np.float64)


class Module:
    """Base for parameterized layers; collects named parameters and buffers."""

    def __init__(self):
        self.params: list = []
        self.buffers: list = []

    def _register(self, p: Tensor) -> Tensor:
        self.params.append(p)
        return p

    def _weight(self, rng, shape, name, fan_in=None):
        return self._register(T.parameter(rng, shape, fan_in=fan_in, name=name))

    def _bias(self, shape, name, value: float = 0.0):
        p = T.zeros_parameter(shape, name=name)
        p.data += value
        return self._register(p)

    def _buffer(self, name: str, data) -> Buffer:
        b = Buffer(name, data)
        self.buffers.append(b)
        return b

    def collect(self, *modules):
        for m in modules:
            self.params.extend(m.params)
            self.buffers.extend(m.buffers)

    def state_entries(self) -> list:
        """Parameters and buffers, in registration order."""
        return [*self.params, *self.buffers]


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, name: str):
        super().__init__()
        self.W = self._weight(rng, (d_in, d_out), f"{name}.W")
        self.b = self._bias((d_out,), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b


# ---------------------------------------------------------------------------
# Spectral convolution
# ---------------------------------------------------------------------------


def scaled_laplacian(weights: Tensor, lambda_max: float = 2.0) -> Tensor:
    """Scaled normalized Laplacian 2*L_norm/lambda_max - I.

    ``weights`` is a symmetric non-negative (n, n) adjacency; isolated
    nodes get zero rows in the normalized adjacency, leaving L_norm = I
    there. With lambda_max = 2 the spectrum lies in [-1, 1].
    """
    w = weights.data
    if np.any(w < 0):
        raise T.AutodiffError("adjacency weights must be non-negative")
    if not np.allclose(w, w.T):
        raise T.AutodiffError("adjacency must be symmetric")
    n = w.shape[0]
    deg = weights.sum(axis=1)
    mask = (deg.data > 0).astype(np.float64)
    safe = deg + (1.0 - mask)
    inv_sqrt = (safe ** -0.5) * mask
    norm_adj = inv_sqrt.reshape(n, 1) * weights * inv_sqrt.reshape(1, n)
    eye = Tensor(np.eye(n))
    l_norm = eye - norm_adj
    return (2.0 / lambda_max) * l_norm - eye


def chebyshev_conv(l_scaled: Tensor, x: Tensor, thetas) -> Tensor:
    """Sum_k T_k(L) X theta_k with the standard Chebyshev recurrence.

    Receptive field is K-1 hops for K coefficient matrices.
    """
    if len(thetas) < 1:
        raise T.AutodiffError("need at least one Chebyshev coefficient")
    z_prev2 = x
    out = x @ thetas[0]
    if len(thetas) > 1:
        z_prev1 = l_scaled @ x
        out = out + z_prev1 @ thetas[1]
        for k in range(2, len(thetas)):
            z = 2.0 * (l_scaled @ z_prev1) - z_prev2
            out = out + z @ thetas[k]
            z_prev2, z_prev1 = z_prev1, z
    return out


class ChebConv(Module):
    def __init__(self, rng, d_in: int, d_out: int, K: int, name: str):
        super().__init__()
        self.thetas = [
            self._weight(rng, (d_in, d_out), f"{name}.theta{k}", fan_in=d_in * K)
            for k in range(K)
        ]

    def __call__(self, l_scaled: Tensor, x: Tensor) -> Tensor:
        return chebyshev_conv(l_scaled, x, self.thetas)


class EdgeWeightMLP(Module):
    """Compresses the 4-vector edge features to a scalar weight in (0, 1)."""

    def __init__(self, rng, hidden: int = 8, name: str = "edge_mlp"):
        super().__init__()
        self.fc1 = Linear(rng, 4, hidden, f"{name}.fc1")
        self.fc2 = Linear(rng, hidden, 1, f"{name}.fc2")
        self.collect(self.fc1, self.fc2)

    def __call__(self, edge_feat: Tensor) -> Tensor:
        return T.sigmoid(self.fc2(T.relu(self.fc1(edge_feat))))


def weighted_adjacency(edge_mlp: EdgeWeightMLP, n: int, src, dst,
                       edge_feat: Tensor) -> Tensor:
    """Dense symmetric adjacency from MLP-compressed directed edge weights.

    The weights of (i, j) and (j, i) are averaged; symmetry is required by
    the spectral convolution.
    """
    w = edge_mlp(edge_feat).reshape(-1)
    flat_idx = np.asarray(src) * n + np.asarray(dst)
    adj = T.segment_sum(w, flat_idx, n * n).reshape(n, n)
    return 0.5 * (adj + adj.T)


# ---------------------------------------------------------------------------
# Message passing and aggregation
# ---------------------------------------------------------------------------


class MPALayer(Module):
    """Single-layer learned message over [x_src, x_dst, e] with mean or max
    aggregation over in-neighbors plus a self-connection (zero edge
    features on the self-loop)."""

    def __init__(self, rng, d_node: int, d_edge: int, d_out: int, name: str,
                 aggregation: str = "mean", activation=T.relu):
        super().__init__()
        if aggregation not in ("mean", "max"):
            raise T.AutodiffError(f"unknown aggregation {aggregation!r}")
        self.aggregation = aggregation
        self.activation = activation
        self.msg = Linear(rng, 2 * d_node + d_edge, d_out, f"{name}.msg")
        self.d_edge = d_edge
        self.collect(self.msg)

    def __call__(self, x: Tensor, src, dst, edge_feat: Tensor | None) -> Tensor:
        n = x.shape[0]
        src = np.concatenate([np.asarray(src, dtype=np.int64), np.arange(n)])
        dst = np.concatenate([np.asarray(dst, dtype=np.int64), np.arange(n)])
        if edge_feat is None:
            feats = Tensor(np.zeros((len(src), self.d_edge)))
        else:
            feats = T.concat([edge_feat, Tensor(np.zeros((n, self.d_edge)))], axis=0)
        inputs = T.concat([x[src], x[dst], feats], axis=1)
        messages = self.activation(self.msg(inputs))
        if self.aggregation == "mean":
            return T.segment_mean(messages, dst, n)
        return T.segment_max(messages, dst, n)


# ---------------------------------------------------------------------------
# Recurrent cells with graph-convolutional linear maps
# ---------------------------------------------------------------------------


class GraphLSTMCell(Module):
    """LSTM whose four gate transforms are Chebyshev convolutions.

    The forget-gate bias starts at 1.0; carries are reset between disjoint
    subgraph sequences by passing state=None.
    """

    GATES = ("i", "f", "o", "g")

    def __init__(self, rng, d_in: int, d_hidden: int, K: int, name: str):
        super().__init__()
        self.d_hidden = d_hidden
        self.conv_x = {}
        self.conv_h = {}
        self.bias = {}
        for gate in self.GATES:
            cx = ChebConv(rng, d_in, d_hidden, K, f"{name}.{gate}x")
            ch = ChebConv(rng, d_hidden, d_hidden, K, f"{name}.{gate}h")
            b = self._bias((d_hidden,), f"{name}.{gate}b", 1.0 if gate == "f" else 0.0)
            self.conv_x[gate], self.conv_h[gate] = cx, ch
            self.collect(cx, ch)

            self.bias[gate] = b

    def __call__(self, l_scaled: Tensor, x: Tensor, state=None):
        n = x.shape[0]
        if state is None:
            h = Tensor(np.zeros((n, self.d_hidden)))
            c = Tensor(np.zeros((n, self.d_hidden)))
        else:
            h, c = state

        def gate(g):
            return self.conv_x[g](l_scaled, x) + self.conv_h[g](l_scaled, h) + self.bias[g]

        i = T.sigmoid(gate("i"))
        f = T.sigmoid(gate("f"))
        o = T.sigmoid(gate("o"))
        g = T.tanh(gate("g"))
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, c_new


class GraphGRUCell(Module):
    """GRU whose gate transforms are Chebyshev convolutions.

    With K = 1 the convolutions degenerate to dense linear maps, which
    doubles as the plain per-node GRU used by recurrent embedding updates.
    """

    def __init__(self, rng, d_in: int, d_hidden: int, K: int, name: str):
        super().__init__()
        self.d_hidden = d_hidden
        self.conv_x = {}
        self.conv_h = {}
        self.bias = {}
        for gate in ("z", "r", "n"):
            cx = ChebConv(rng, d_in, d_hidden, K, f"{name}.{gate}x")
            ch = ChebConv(rng, d_hidden, d_hidden, K, f"{name}.{gate}h")
            self.conv_x[gate], self.conv_h[gate] = cx, ch
            self.collect(cx, ch)
            self.bias[gate] = self._bias((d_hidden,), f"{name}.{gate}b")

    def __call__(self, l_scaled: Tensor, x: Tensor, h: Tensor | None = None) -> Tensor:
        n = x.shape[0]
        if h is None:
            h = Tensor(np.zeros((n, self.d_hidden)))
        z = T.sigmoid(
            self.conv_x["z"](l_scaled, x) + self.conv_h["z"](l_scaled, h) + self.bias["z"]
        )
        r = T.sigmoid(
            self.conv_x["r"](l_scaled, x) + self.conv_h["r"](l_scaled, h) + self.bias["r"]
        )
        n_t = T.tanh(
            self.conv_x["n"](l_scaled, x) + self.conv_h["n"](l_scaled, r * h) + self.bias["n"]
        )
        return z * h + (1.0 - z) * n_t


# ---------------------------------------------------------------------------
# Temporal self-attention with a linear relative-position penalty
# ---------------------------------------------------------------------------


def alibi_slopes(n_heads: int) -> list:
    """Geometric slope sequence 2^(-8*h/n_heads), h = 1..n_heads."""
    return [2.0 ** (-8.0 * h / n_heads) for h in range(1, n_heads + 1)]


class TemporalSelfAttention(Module):
    """Causally masked self-attention over a node's per-month states.

    Attention logits are q.k/sqrt(d) minus slope*(t - tau), so older months
    are down-weighted linearly and held-out months beyond the trained
    horizon still get sensible weights.
    """

    def __init__(self, rng, d_in: int, d_out: int, name: str,
                 slope: float | None = None):
        super().__init__()
        self.W_Q = self._weight(rng, (d_in, d_out), f"{name}.W_Q")
        self.W_K = self._weight(rng, (d_in, d_out), f"{name}.W_K")
        self.W_V = self._weight(rng, (d_in, d_out), f"{name}.W_V")
        self.slope = alibi_slopes(1)[0] if slope is None else slope
        self.d_out = d_out

    def __call__(self, h_seq: Tensor) -> Tensor:
        """h_seq is (T, n, d_in); returns causal outputs (T, n, d_out)."""
        n_months = h_seq.shape[0]
        h = h_seq.transpose(1, 0, 2)  # (n, T, d_in)
        q = h @ self.W_Q
        k = h @ self.W_K
        v = h @ self.W_V
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.d_out))
        t_idx = np.arange(n_months)
        bias = -self.slope * (t_idx[:, None] - t_idx[None, :])
        bias = np.where(t_idx[None, :] <= t_idx[:, None], bias, -1e30)
        attn = T.softmax(scores + Tensor(bias), axis=-1)
        z = attn @ v
        return z.transpose(1, 0, 2)


# ---------------------------------------------------------------------------
# Readouts
# ---------------------------------------------------------------------------


class InnerProductDecoder(Module):
    """Asymmetric bilinear readout with separate call and SMS projections.

    Distinct source/destination projections break the symmetry that would
    otherwise force the s->d prediction to equal d->s.
    """

    def __init__(self, rng, d_in: int, d_proj: int, name: str = "decoder"):
        super().__init__()
        self.S_c = self._weight(rng, (d_in, d_proj), f"{name}.S_c")
        self.D_c = self._weight(rng, (d_in, d_proj), f"{name}.D_c")
        self.S_m = self._weight(rng, (d_in, d_proj), f"{name}.S_m")
        self.D_m = self._weight(rng, (d_in, d_proj), f"{name}.D_m")

    def __call__(self, o_src: Tensor, o_dst: Tensor) -> Tensor:
        calls = ((o_src @ self.S_c) * (o_dst @ self.D_c)).sum(axis=1, keepdims=True)
        sms = ((o_src @ self.S_m) * (o_dst @ self.D_m)).sum(axis=1, keepdims=True)
        return T.concat([calls, sms], axis=1)


class MLPReadout(Module):
    """Two-layer perceptron on the concatenated (source, destination) pair."""

    def __init__(self, rng, d_in: int, hidden: int, name: str = "readout"):
        super().__init__()
        self.fc1 = Linear(rng, 2 * d_in, hidden, f"{name}.fc1")
        self.fc2 = Linear(rng, hidden, 2, f"{name}.fc2")
        self.collect(self.fc1, self.fc2)

    def __call__(self, o_src: Tensor, o_dst: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(T.concat([o_src, o_dst], axis=1))))


class BatchNorm(Module):
    """Feature-wise batch normalization with shared running statistics."""

    def __init__(self, d: int, name: str, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = self._register(T.Tensor(np.ones(d), requires_grad=True, name=f"{name}.gamma"))
        self.beta = self._bias((d,), f"{name}.beta")
        self.momentum = momentum
        self.eps = eps
        self.running_mean = self._buffer(f"{name}.running_mean", np.zeros(d))
        self.running_var = self._buffer(f"{name}.running_var", np.ones(d))
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            mu = x.mean(axis=0, keepdims=True)
            var = ((x - mu) ** 2).mean(axis=0, keepdims=True)
            self.running_mean.data = (
                (1 - self.momentum) * self.running_mean.data
                + self.momentum * mu.data[0]
            )
            self.running_var.data = (
                (1 - self.momentum) * self.running_var.data
                + self.momentum * var.data[0]
            )
        else:
            mu = Tensor(self.running_mean.data[None, :])
            var = Tensor(self.running_var.data[None, :])
        x_hat = (x - mu) * ((var + self.eps) ** -0.5)
        return x_hat * self.gamma + self.beta
