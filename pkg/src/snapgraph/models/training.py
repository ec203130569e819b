"""Training harness, losses, and evaluation for the temporal models.

The loop is deterministic end to end: parameter initialization, negative
sampling, reparameterization noise, and subgraph choice all come from named
seed streams, so identical configs produce bitwise-identical checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import seeding
from ..edgebank import EdgeHistory, redgebank_predict
from ..graphstore import GraphStoreError, NormalizedGraph, Split, sample_khop
from ..neural import tensor as T
from ..neural.tensor import Tensor
from ..tempometrics import EvalReport, mae, stratified_mae
from .architectures import (
    ModelConfig,
    SeqInputs,
    TemporalModel,
    VGRNN,
    build,
    prepare_sequence,
)
from .negatives import sample_negatives


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def mse_loss(preds: Tensor, targets, weights) -> Tensor:
    """Weighted mean over query edges of the channel-mean squared error.

    Weights scale each edge's term directly (sum divided by the edge count,
    not the weight total), so doubling a weight doubles that contribution.
    """
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if preds.shape != targets.shape:
        raise GraphStoreError(
            f"prediction/target shape mismatch: {preds.shape} vs {targets.shape}"
        )
    per_edge = ((preds - Tensor(targets)) ** 2).mean(axis=1)
    return (per_edge * Tensor(weights)).sum() / len(weights)


def elbo_loss(preds: Tensor, targets, weights, kl_terms) -> Tensor:
    """Negative evidence lower bound: unit-variance Gaussian reconstruction
    negative log-likelihood plus the mean of the per-month KL terms.

    With unit observation variance the NLL is 0.5 * squared error plus the
    constant 0.5*log(2*pi) per channel.
    """
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    per_edge = 0.5 * ((preds - Tensor(targets)) ** 2).mean(axis=1) + 0.5 * math.log(
        2.0 * math.pi
    )
    nll = (per_edge * Tensor(weights)).sum() / len(weights)
    if not kl_terms:
        return nll
    kl = kl_terms[0]
    for term in kl_terms[1:]:
        kl = kl + term
    return nll + kl / len(kl_terms)


# ---------------------------------------------------------------------------
# Query assembly
# ---------------------------------------------------------------------------


def _month_queries(seq: SeqInputs, month: int, neg_pairs, neg_weight: float):
    """(src, dst, targets, weights) for one query month.

    Positives carry their forward (call, sms) counts; negatives carry zero
    targets and the configured loss weight.
    """
    pos = seq.months[month - 1].pairs
    src = [p[0] for p in pos] + [p[0] for p in neg_pairs]
    dst = [p[1] for p in pos] + [p[1] for p in neg_pairs]
    targets = np.zeros((len(src), 2))
    for i, p in enumerate(pos):
        targets[i] = seq.raw_snapshots[month - 1][p].as_array()[:2]
    weights = np.concatenate(
        [np.ones(len(pos)), np.full(len(neg_pairs), neg_weight)]
    )
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64), targets, weights


def _sequence_loss(model: TemporalModel, seq: SeqInputs, query_months,
                   config: ModelConfig, neg_rng, noise_rng) -> Tensor | None:
    query_months = [m for m in query_months if m >= 2]
    if not query_months:
        return None
    upto = max(query_months) - 1
    if isinstance(model, VGRNN):
        noise = noise_rng.standard_normal((2 * upto, seq.n_nodes, model.h))
        model.set_noise(noise)
        steps = model.rollout_training(seq, upto)
        outs = [z for z, _ in steps]
        kls = [kl for _, kl in steps if kl is not None]
    else:
        outs = model.outputs(seq, upto)
        kls = None
    total = None
    used = 0
    for m in query_months:
        negs = sample_negatives(seq, m, "random", config.neg_ratio, neg_rng)
        src, dst, targets, weights = _month_queries(
            seq, m, negs.pairs, config.loss_weighting
        )
        if len(src) == 0:
            continue
        preds = model.decode(outs[m - 2], src, dst)
        if kls is not None:
            term = elbo_loss(preds, targets, weights, [])
        else:
            term = mse_loss(preds, targets, weights)
        total = term if total is None else total + term
        used += 1
    if total is None:
        return None
    total = total / used
    if kls:
        kl = kls[0]
        for term in kls[1:]:
            kl = kl + term
        total = total + kl / len(kls)
    return total


# ---------------------------------------------------------------------------
# Predictors (shared by validation and final evaluation)
# ---------------------------------------------------------------------------


class ModelPredictor:
    """Rolls a trained model once over the sequence; serves month queries."""

    def __init__(self, model: TemporalModel, stats=None):
        self.model = model
        self.stats = stats
        self._seq = None
        self._outs = None
        self._local = None

    def bind(self, ng: NormalizedGraph) -> "ModelPredictor":
        if self.stats is not None:
            if not (
                np.allclose(self.stats.edge_mean, ng.stats.edge_mean)
                and np.allclose(self.stats.edge_std, ng.stats.edge_std)
                and np.allclose(self.stats.node_min, ng.stats.node_min)
                and np.allclose(self.stats.node_max, ng.stats.node_max)
            ):
                raise GraphStoreError(
                    "normalization statistics of the graph do not match the "
                    "statistics the model was trained with"
                )
        self.model.set_training(False)
        self._seq = prepare_sequence(ng)
        self._local = {v: i for i, v in enumerate(self._seq.node_ids)}
        self._outs = self.model.outputs(self._seq, self._seq.n_months - 1)
        return self

    @property
    def seq(self) -> SeqInputs:
        return self._seq

    def predict(self, month: int, pairs) -> np.ndarray:
        """(m, 2) raw-scale predictions for global-id pairs at ``month``."""
        if self._outs is None:
            raise GraphStoreError("predictor is not bound to a graph")
        if month < 2 or month > len(self._outs) + 1:
            raise GraphStoreError(f"cannot predict month {month}")
        if not pairs:
            return np.zeros((0, 2))
        try:
            src = np.array([self._local[s] for s, _ in pairs], dtype=np.int64)
            dst = np.array([self._local[d] for _, d in pairs], dtype=np.int64)
        except KeyError as exc:
            raise GraphStoreError(f"query node {exc.args[0]} is not in the graph")
        return self.model.decode(self._outs[month - 2], src, dst).data.copy()


class RedgeBankPredictor:
    """Windowed-mean memorization baseline behind the same predict surface."""

    def __init__(self, window: int):
        self.window = window
        self._history = None

    def bind(self, ng: NormalizedGraph) -> "RedgeBankPredictor":
        self._history = EdgeHistory.from_graph(ng.graph)
        return self

    def predict(self, month: int, pairs) -> np.ndarray:
        if self._history is None:
            raise GraphStoreError("predictor is not bound to a graph")
        out = np.zeros((len(pairs), 2))
        for i, pair in enumerate(pairs):
            out[i] = redgebank_predict(self._history, pair, month, self.window)[:2]
        return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float


@dataclass
class TrainedModel:
    config: ModelConfig
    model: TemporalModel
    stats: object  # NormStats captured at training time
    curves: list = field(default_factory=list)
    best_epoch: int = 0

    def predictor(self) -> ModelPredictor:
        return ModelPredictor(self.model, self.stats)


def _to_global(seq: SeqInputs, pairs):
    return [(seq.node_ids[s], seq.node_ids[d]) for s, d in pairs]


def _eval_months_mae(predict, seq: SeqInputs, months, neg_ratio: int, rng):
    """Per-edge-set MAE cells over a set of months; negatives fixed by rng."""
    buckets = {"positive": ([], []), "r_negative": ([], []), "h_negative": ([], [])}
    for m in months:
        if m < 2:
            continue
        pos = seq.months[m - 1].pairs
        sets = {
            "positive": pos,
            "r_negative": sample_negatives(seq, m, "random", neg_ratio, rng).pairs,
            "h_negative": sample_negatives(seq, m, "historical").pairs,
        }
        for name, pairs in sets.items():
            if not pairs:
                continue
            preds = predict(m, _to_global(seq, pairs))
            truths = np.zeros((len(pairs), 2))
            if name == "positive":
                for i, p in enumerate(pairs):
                    truths[i] = seq.raw_snapshots[m - 1][p].as_array()[:2]
            buckets[name][0].append(preds)
            buckets[name][1].append(truths)
    cells = {}
    for name, (preds, truths) in buckets.items():
        if preds:
            mean, std = mae(np.concatenate(preds), np.concatenate(truths))
            count = sum(len(p) for p in preds)
        else:
            mean, std, count = np.zeros(2), np.zeros(2), 0
        cells[name] = (mean, std, count)
    return cells


def _ave_scalar(cells) -> float:
    means = [cells[k][0] for k in ("positive", "r_negative", "h_negative")]
    return float(np.mean(means))


def train(ng: NormalizedGraph, split: Split, config: ModelConfig,
          log=None) -> TrainedModel:
    """Fit one architecture with early stopping on validation averaged MAE.

    Best parameters (lowest validation score) are restored before returning,
    so the returned model reflects the recorded best epoch.
    """
    from ..neural.optim import Adam

    config = config.resolved()
    model = build(config)
    optimizer = Adam(model.params, lr=config.learning_rate)

    if config.train_seeds:
        seed_rng = seeding.stream(config.rng_seed, "train-subgraph-seeds")
        picks = seed_rng.choice(
            len(ng.node_ids), size=min(config.train_seeds, len(ng.node_ids)),
            replace=False,
        )
        sequences = []
        for i in sorted(picks.tolist()):
            sub = sample_khop(ng.graph, ng.node_ids[i], config.subgraph_hops)
            sequences.append(prepare_sequence(ng, sub.nodes))
    else:
        sequences = [prepare_sequence(ng)]

    full_seq = prepare_sequence(ng)
    val_months = list(split.val_months)
    train_query_months = [m for m in split.train_months if m >= 2]
    if not train_query_months:
        raise TrainingError("the training span has no predictable months")

    noise_rng = seeding.stream(config.rng_seed, "train-noise")
    best_state = None
    best_score = None
    best_epoch = 0
    curves = []
    for epoch in range(1, config.max_epochs + 1):
        model.set_training(True)
        neg_rng = seeding.stream(config.rng_seed, f"train-negatives-{epoch}")
        epoch_losses = []
        for start in range(0, len(sequences), config.batch_subgraphs):
            batch = sequences[start : start + config.batch_subgraphs]
            optimizer.zero_grad()
            terms = []
            for seq in batch:
                loss = _sequence_loss(
                    model, seq, train_query_months, config, neg_rng, noise_rng
                )
                if loss is not None:
                    terms.append(loss)
            if not terms:
                continue
            total = terms[0]
            for term in terms[1:]:
                total = total + term
            total = total / len(terms)
            if not np.isfinite(total.data):
                norms = {p.name: float(np.abs(p.data).max()) for p in model.params}
                worst = sorted(norms, key=norms.get, reverse=True)[:3]
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_subgraphs}"
                    f" (lr={config.learning_rate}); largest parameters: "
                    + ", ".join(f"{k}={norms[k]:.3g}" for k in worst)
                )
            T.backward(total)
            optimizer.step()
            epoch_losses.append(float(total.data))

        model.set_training(False)
        val_neg_rng = seeding.stream(config.rng_seed, "val-negatives")
        predictor = ModelPredictor(model).bind(ng)
        cells = _eval_months_mae(
            predictor.predict, full_seq, val_months, config.neg_ratio, val_neg_rng
        )
        score = _ave_scalar(cells)
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        curves.append(EpochRecord(epoch, train_loss, score))
        if log is not None:
            log(f"epoch {epoch}: train_loss={train_loss:.6f} val_mae={score:.6f}")
        if best_score is None or score < best_score:
            best_score = score
            best_epoch = epoch
            best_state = {e.name: e.data.copy() for e in model.state_entries()}
        elif epoch - best_epoch >= config.patience:
            break

    for e in model.state_entries():
        e.data = best_state[e.name].copy()
    return TrainedModel(
        config=config, model=model, stats=ng.stats, curves=curves, best_epoch=best_epoch
    )


# ---------------------------------------------------------------------------
# Final evaluation
# ---------------------------------------------------------------------------


def evaluate(predictor, ng: NormalizedGraph, split: Split, model_name: str,
             neg_ratio: int = 10, rng_seed: int = 0) -> EvalReport:
    """Test-month MAE decomposition plus per-month and strata tables.

    ``predictor`` is a bound ModelPredictor or RedgeBankPredictor. Strata
    tables cover positive test edges; negatives enter only the summary
    cells. Negative sampling is fixed by ``rng_seed``, so two evaluations
    with the same seed face the same negative queries.
    """
    seq = prepare_sequence(ng)
    test_months = list(split.test_months)
    rng = seeding.stream(rng_seed, "eval-negatives")
    cells = _eval_months_mae(predictor.predict, seq, test_months, neg_ratio, rng)

    preds, truths, srcs, dsts, months = [], [], [], [], []
    for m in test_months:
        pairs = seq.months[m - 1].pairs
        if not pairs:
            continue
        g_pairs = _to_global(seq, pairs)
        preds.append(predictor.predict(m, g_pairs))
        truths.append(
            np.array([seq.raw_snapshots[m - 1][p].as_array()[:2] for p in pairs])
        )
        srcs.extend(s for s, _ in g_pairs)
        dsts.extend(d for _, d in g_pairs)
        months.extend([m] * len(pairs))
    if preds:
        preds = np.concatenate(preds)
        truths = np.concatenate(truths)
        attrs = ng.graph.nodes
        per_month = stratified_mae(
            preds, truths, srcs, dsts, attrs, "per_month", months=months,
            test_months=test_months,
        )
        by_gender = stratified_mae(preds, truths, srcs, dsts, attrs, "gender_pairs")
        by_age = stratified_mae(preds, truths, srcs, dsts, attrs, "age_grid")
    else:
        per_month, by_gender, by_age = {}, {}, {}
    return EvalReport(
        model=model_name, cells=cells, per_month=per_month,
        by_gender=by_gender, by_age=by_age,
    )


def positive_errors(predictor, ng: NormalizedGraph, split: Split) -> np.ndarray:
    """Per-edge channel-mean absolute errors on positive test edges.

    Aligned across predictors evaluated on the same graph and split, which
    is what the paired significance test consumes.
    """
    seq = prepare_sequence(ng)
    errs = []
    for m in split.test_months:
        pairs = seq.months[m - 1].pairs
        if not pairs:
            continue
        preds = predictor.predict(m, _to_global(seq, pairs))
        truths = np.array([seq.raw_snapshots[m - 1][p].as_array()[:2] for p in pairs])
        errs.append(np.abs(truths - preds).mean(axis=1))
    return np.concatenate(errs) if errs else np.zeros(0)
