"""The four temporal GNN architectures over a snapshot sequence.

Every model consumes a prepared month-by-month sequence (node features,
per-month edge index arrays with standardized edge features) and exposes

* ``outputs(seq, upto)``      -- per-month node representations O^(1..upto);
  O^(t) depends only on months <= t and is what the decoder reads to
  predict month t+1,
* ``decode(o, src, dst)``     -- (m, 2) raw-scale (call, sms) predictions.

Recurrent carries always start from zeros, so disjoint subgraph sequences
never share state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import seeding
from ..graphstore import GraphStoreError, NormalizedGraph
from ..neural import layers as L
from ..neural import tensor as T
from ..neural.tensor import Tensor

ARCHITECTURES = ("gcrn", "vgrnn", "dysat", "roland")

# hyperparameters reported per architecture
DEFAULT_HIDDEN = {"gcrn": 176, "vgrnn": 176, "dysat": 89, "roland": 160}
DEFAULT_LR = {"gcrn": 3e-4, "vgrnn": 3e-4, "dysat": 3e-4, "roland": 3e-5}


@dataclass
class ModelConfig:
    architecture: str
    hidden_dim: int | None = None
    chebyshev_K: int = 3
    learning_rate: float | None = None
    loss_weighting: float = 1.0  # negative-edge term weight (positive = 1)
    neg_ratio: int = 10
    patience: int = 20
    batch_subgraphs: int = 100
    max_epochs: int = 100
    rng_seed: int = 0
    train_seeds: int | None = None  # None: whole graph as one sequence
    subgraph_hops: int = 3
    window: int = 4  # rEdgeBank baseline only

    def resolved(self) -> "ModelConfig":
        if self.architecture not in ARCHITECTURES + ("redgebank",):
            raise GraphStoreError(f"unknown architecture {self.architecture!r}")
        out = self
        if self.hidden_dim is None:
            out = replace(out, hidden_dim=DEFAULT_HIDDEN.get(self.architecture, 32))
        if self.learning_rate is None:
            out = replace(out, learning_rate=DEFAULT_LR.get(self.architecture, 1e-3))
        if out.hidden_dim is not None and out.hidden_dim <= 0:
            raise GraphStoreError("hidden_dim must be positive")
        if out.learning_rate is not None and out.learning_rate <= 0:
            raise GraphStoreError("learning_rate must be positive")
        if out.neg_ratio < 0:
            raise GraphStoreError("neg_ratio must be >= 0")
        if out.chebyshev_K < 1:
            raise GraphStoreError("chebyshev_K must be >= 1")
        return out


@dataclass
class MonthInputs:
    src: np.ndarray  # local source indices
    dst: np.ndarray
    edge_feat: np.ndarray  # (m, 4) standardized
    pairs: list  # local (s, d) pairs in the same order


@dataclass
class SeqInputs:
    """Model-ready view of one (sub)graph's snapshot sequence."""

    node_ids: list
    node_feat: np.ndarray  # (n, 4)
    months: list  # MonthInputs per month 1..T
    raw_snapshots: list  # dict local-(s, d) -> EdgeAttr per month

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_months(self) -> int:
        return len(self.months)


def prepare_sequence(ng: NormalizedGraph, node_subset=None) -> SeqInputs:
    """Index-map a normalized graph (optionally restricted to a node set)."""
    if node_subset is None:
        node_ids = list(ng.node_ids)
    else:
        node_ids = sorted(node_subset)
    local = {v: i for i, v in enumerate(node_ids)}
    rows = [ng.node_index[v] for v in node_ids]
    node_feat = ng.node_feat[rows]
    months, raw = [], []
    for t, snap in enumerate(ng.graph.snapshots):
        pairs, feats = [], []
        raw_edges = {}
        for (s, d), z in sorted(ng.edge_feat[t].items()):
            if s in local and d in local:
                p = (local[s], local[d])
                pairs.append(p)
                feats.append(z)
                raw_edges[p] = snap.edges[(s, d)]
        src = np.array([p[0] for p in pairs], dtype=np.int64)
        dst = np.array([p[1] for p in pairs], dtype=np.int64)
        feat = np.array(feats) if feats else np.zeros((0, 4))
        months.append(MonthInputs(src=src, dst=dst, edge_feat=feat, pairs=pairs))
        raw.append(raw_edges)
    return SeqInputs(node_ids=node_ids, node_feat=node_feat, months=months, raw_snapshots=raw)


class TemporalModel(L.Module):
    """Common surface of the four architectures."""

    architecture: str

    def outputs(self, seq: SeqInputs, upto: int) -> list:
        raise NotImplementedError

    def decode(self, o_t: Tensor, src, dst) -> Tensor:
        raise NotImplementedError

    def set_training(self, flag: bool) -> None:
        pass


def _month_laplacian(edge_mlp, seq: SeqInputs, t: int) -> Tensor:
    m = seq.months[t - 1]
    n = seq.n_nodes
    if len(m.src) == 0:
        return L.scaled_laplacian(Tensor(np.zeros((n, n))))
    adj = L.weighted_adjacency(edge_mlp, n, m.src, m.dst, Tensor(m.edge_feat))
    return L.scaled_laplacian(adj)


class GCRN(TemporalModel):
    """Chebyshev-convolutional LSTM with an inner-product decoder.

    Edge 4-vectors are compressed to scalar weights by a two-layer MLP
    before entering the weighted Laplacian.
    """

    architecture = "gcrn"

    def __init__(self, config: ModelConfig):
        super().__init__()
        rng = seeding.stream(config.rng_seed, "init-gcrn")
        h = config.hidden_dim
        self.edge_mlp = L.EdgeWeightMLP(rng, hidden=h, name="edge_mlp")
        self.lstm = L.GraphLSTMCell(rng, 4, h, config.chebyshev_K, "lstm")
        self.decoder = L.InnerProductDecoder(rng, h, h, "decoder")
        self.collect(self.edge_mlp, self.lstm, self.decoder)

    def outputs(self, seq: SeqInputs, upto: int) -> list:
        x = Tensor(seq.node_feat)
        state = None
        outs = []
        for t in range(1, upto + 1):
            l_scaled = _month_laplacian(self.edge_mlp, seq, t)
            h, c = self.lstm(l_scaled, x, state)
            state = (h, c)
            outs.append(h)
        return outs

    def decode(self, o_t, src, dst):
        return self.decoder(o_t[np.asarray(src)], o_t[np.asarray(dst)])


class VGRNN(TemporalModel):
    """Variational recurrent graph model.

    Each step keeps a GRU carry; a prior MLP on the carry and a posterior
    graph encoder on the next snapshot parameterize per-node Gaussians over
    the latent. Predictions decode the prior mean (training reconstruction
    decodes a reparameterized posterior sample); the carry is updated from
    the encoded features and latent.
    """

    architecture = "vgrnn"

    def __init__(self, config: ModelConfig):
        super().__init__()
        rng = seeding.stream(config.rng_seed, "init-vgrnn")
        h = config.hidden_dim
        K = config.chebyshev_K
        self.h = h
        self.edge_mlp = L.EdgeWeightMLP(rng, hidden=h, name="edge_mlp")
        self.phi_x = L.Linear(rng, 4, h, "phi_x")
        self.phi_z = L.Linear(rng, h, h, "phi_z")
        self.enc = L.ChebConv(rng, 2 * h, h, K, "enc")
        self.enc_mu = L.ChebConv(rng, h, h, K, "enc_mu")
        self.enc_logvar = L.ChebConv(rng, h, h, K, "enc_logvar")
        self.prior_fc = L.Linear(rng, h, h, "prior_fc")
        self.prior_mu = L.Linear(rng, h, h, "prior_mu")
        self.prior_logvar = L.Linear(rng, h, h, "prior_logvar")
        self.gru = L.GraphGRUCell(rng, 2 * h, h, K, "gru")
        self.decoder = L.InnerProductDecoder(rng, h, h, "decoder")
        self.collect(
            self.edge_mlp, self.phi_x, self.phi_z, self.enc, self.enc_mu,
            self.enc_logvar, self.prior_fc, self.prior_mu, self.prior_logvar,
            self.gru, self.decoder,
        )
        self.training = False
        self._noise = None

    def set_training(self, flag: bool) -> None:
        self.training = flag

    def set_noise(self, noise) -> None:
        """Fixed per-month reparameterization noise (training mode)."""
        self._noise = noise

    def prior_params(self, carry: Tensor):
        hid = T.relu(self.prior_fc(carry))
        return self.prior_mu(hid), self.prior_logvar(hid)

    def posterior_params(self, seq: SeqInputs, t: int, carry: Tensor):
        l_scaled = _month_laplacian(self.edge_mlp, seq, t)
        feat = T.relu(self.phi_x(Tensor(seq.node_feat)))
        enc = T.relu(self.enc(l_scaled, T.concat([feat, carry], axis=1)))
        return self.enc_mu(l_scaled, enc), self.enc_logvar(l_scaled, enc), l_scaled, feat

    def step(self, seq: SeqInputs, t: int, carry: Tensor | None):
        """Process month t; returns (new_carry, z_t, kl_t)."""
        n = seq.n_nodes
        if carry is None:
            carry = Tensor(np.zeros((n, self.h)))
        mu_p, logvar_p = self.prior_params(carry)
        mu_q, logvar_q, l_scaled, feat = self.posterior_params(seq, t, carry)
        if self.training:
            eps = self._noise[t - 1] if self._noise is not None else np.zeros((n, self.h))
            z = mu_q + T.exp(0.5 * logvar_q) * Tensor(eps)
            kl = gaussian_kl(mu_q, logvar_q, mu_p, logvar_p)
        else:
            z = mu_q
            kl = None
        zfeat = T.relu(self.phi_z(z))
        new_carry = self.gru(l_scaled, T.concat([feat, zfeat], axis=1), carry)
        return new_carry, kl

    def outputs(self, seq: SeqInputs, upto: int) -> list:
        """O^(t) is the prior mean conditioned on the carry after month t."""
        carry = None
        outs = []
        for t in range(1, upto + 1):
            carry, _ = self.step(seq, t, carry)
            mu_p, _ = self.prior_params(carry)
            outs.append(mu_p)
        return outs

    def rollout_training(self, seq: SeqInputs, upto: int):
        """Per-month (prior-sample latent, KL) pairs for the ELBO.

        The latent decoded for month t+1 queries is a reparameterized draw
        from the prior at the carry after month t.
        """
        carry = None
        steps = []
        n = seq.n_nodes
        for t in range(1, upto + 1):
            carry, kl = self.step(seq, t, carry)
            mu_p, logvar_p = self.prior_params(carry)
            eps = (
                self._noise[upto + t - 1]
                if self._noise is not None
                else np.zeros((n, self.h))
            )
            z_pred = mu_p + T.exp(0.5 * logvar_p) * Tensor(eps)
            steps.append((z_pred, kl))
        return steps

    def decode(self, o_t, src, dst):
        return self.decoder(o_t[np.asarray(src)], o_t[np.asarray(dst)])


class StructuralAttention(L.Module):
    """Per-snapshot attention over in-neighbors, modulated by edge weights."""

    def __init__(self, rng, d_in: int, d_out: int, name: str):
        super().__init__()
        self.W = self._weight(rng, (d_in, d_out), f"{name}.W")
        self.a_src = self._weight(rng, (d_out, 1), f"{name}.a_src")
        self.a_dst = self._weight(rng, (d_out, 1), f"{name}.a_dst")

    def __call__(self, x: Tensor, src, dst, weights: Tensor) -> Tensor:
        n = x.shape[0]
        src = np.concatenate([np.asarray(src, dtype=np.int64), np.arange(n)])
        dst = np.concatenate([np.asarray(dst, dtype=np.int64), np.arange(n)])
        wx = x @ self.W
        w_all = T.concat([weights.reshape(-1, 1), Tensor(np.ones((n, 1)))], axis=0)
        logits = T.leaky_relu((wx @ self.a_src)[src] + (wx @ self.a_dst)[dst]) * w_all
        # per-destination softmax (constant max-shift for stability)
        shift = np.full(n, -np.inf)
        np.maximum.at(shift, dst, logits.data[:, 0])
        e = T.exp(logits - Tensor(shift[dst, None]))
        denom = T.segment_sum(e, dst, n)
        alpha = e / denom[dst]
        return T.relu(T.segment_sum(alpha * wx[src], dst, n))


class DySAT(TemporalModel):
    """Structural attention per snapshot, temporal self-attention across
    snapshots with a linear relative-time penalty, inner-product decoder."""

    architecture = "dysat"

    def __init__(self, config: ModelConfig):
        super().__init__()
        rng = seeding.stream(config.rng_seed, "init-dysat")
        h = config.hidden_dim
        self.edge_mlp = L.EdgeWeightMLP(rng, hidden=h, name="edge_mlp")
        self.structural = StructuralAttention(rng, 4, h, "structural")
        self.temporal = L.TemporalSelfAttention(rng, h, h, "temporal")
        self.decoder = L.InnerProductDecoder(rng, h, h, "decoder")
        self.collect(self.edge_mlp, self.structural, self.temporal, self.decoder)

    def outputs(self, seq: SeqInputs, upto: int) -> list:
        x = Tensor(seq.node_feat)
        per_month = []
        for t in range(1, upto + 1):
            m = seq.months[t - 1]
            if len(m.src) == 0:
                weights = Tensor(np.zeros((0, 1)))
            else:
                weights = self.edge_mlp(Tensor(m.edge_feat))
            per_month.append(self.structural(x, m.src, m.dst, weights))
        h_seq = T.stack(per_month, axis=0)
        z_seq = self.temporal(h_seq)
        return [z_seq[t] for t in range(upto)]

    def decode(self, o_t, src, dst):
        return self.decoder(o_t[np.asarray(src)], o_t[np.asarray(dst)])


class RolandConvBlock(L.Module):
    """Message-passing layer with batch normalization, activation, and a
    residual skip when the width allows it."""

    def __init__(self, rng, d_in: int, d_out: int, name: str):
        super().__init__()
        self.mpa = L.MPALayer(rng, d_in, 4, d_out, f"{name}.mpa")
        self.bn = L.BatchNorm(d_out, f"{name}.bn")
        self.residual = d_in == d_out
        self.collect(self.mpa, self.bn)

    def __call__(self, x: Tensor, src, dst, edge_feat) -> Tensor:
        y = T.relu(self.bn(self.mpa(x, src, dst, edge_feat)))
        return x + y if self.residual else y

    def set_training(self, flag: bool) -> None:
        self.bn.training = flag


class ROLAND(TemporalModel):
    """Deep message-passing stack with per-node recurrent embedding updates.

    Two convolutional blocks, then two blocks of alternating GRU and
    convolution, then two more convolutional blocks and an MLP readout.
    The message function consumes the full 4-vector edge features; batch
    normalization keeps shared running statistics across temporal steps.
    """

    architecture = "roland"

    def __init__(self, config: ModelConfig):
        super().__init__()
        rng = seeding.stream(config.rng_seed, "init-roland")
        h = config.hidden_dim
        self.h = h
        self.conv_in = [
            RolandConvBlock(rng, 4, h, "conv_in0"),
            RolandConvBlock(rng, h, h, "conv_in1"),
        ]
        # per-node dense GRUs (K=1 convolutions are plain linear maps)
        self.grus = [
            L.GraphGRUCell(rng, h, h, 1, "gru0"),
            L.GraphGRUCell(rng, h, h, 1, "gru1"),
        ]
        self.conv_mid = [
            RolandConvBlock(rng, h, h, "conv_mid0"),
            RolandConvBlock(rng, h, h, "conv_mid1"),
        ]
        self.conv_out = [
            RolandConvBlock(rng, h, h, "conv_out0"),
            RolandConvBlock(rng, h, h, "conv_out1"),
        ]
        self.readout = L.MLPReadout(rng, h, h, "readout")
        self.collect(*self.conv_in, *self.grus, *self.conv_mid, *self.conv_out,
                     self.readout)

    def set_training(self, flag: bool) -> None:
        for blk in self.conv_in + self.conv_mid + self.conv_out:
            blk.set_training(flag)

    def outputs(self, seq: SeqInputs, upto: int) -> list:
        carries = [None, None]
        outs = []
        for t in range(1, upto + 1):
            m = seq.months[t - 1]
            ef = Tensor(m.edge_feat) if len(m.src) else None
            x = Tensor(seq.node_feat)
            for blk in self.conv_in:
                x = blk(x, m.src, m.dst, ef)
            for i in range(2):
                carries[i] = self.grus[i](None, x, carries[i])
                x = self.conv_mid[i](carries[i], m.src, m.dst, ef)
            for blk in self.conv_out:
                x = blk(x, m.src, m.dst, ef)
            outs.append(x)
        return outs

    def decode(self, o_t, src, dst):
        return self.readout(o_t[np.asarray(src)], o_t[np.asarray(dst)])


def gaussian_kl(mu_q, logvar_q, mu_p, logvar_p) -> Tensor:
    """KL(N(mu_q, var_q) || N(mu_p, var_p)), summed per node then meaned."""
    var_q = T.exp(logvar_q)
    var_p = T.exp(logvar_p)
    per_dim = 0.5 * (
        logvar_p - logvar_q + (var_q + (mu_q - mu_p) ** 2) / var_p - 1.0
    )
    return per_dim.sum(axis=1).mean()


def build(config: ModelConfig) -> TemporalModel:
    """Instantiate an architecture with deterministically seeded parameters."""
    config = config.resolved()
    cls = {"gcrn": GCRN, "vgrnn": VGRNN, "dysat": DySAT, "roland": ROLAND}
    if config.architecture not in cls:
        raise GraphStoreError(f"cannot build architecture {config.architecture!r}")
    model = cls[config.architecture](config)
    names = [e.name for e in model.state_entries()]
    assert len(set(names)) == len(names), "duplicate parameter registration"
    return model
