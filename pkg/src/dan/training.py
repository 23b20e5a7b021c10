"""Adversarial Predictor/Judge training and the supervised baselines.

The Judge maximises

    V = mean log J(x, y_true) + mean log(1 - J(x, P(x)))

over human-labeled pairs and predicted pairs; the Predictor minimises the
second term (``minimax``) or maximises ``mean log J(x, P(x))``
(``non_saturating``, the default). All terms are evaluated from Judge logits
through ``log_sigmoid``.
"""
from __future__ import annotations

import contextlib
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, NumericFault, Tape, Tensor
from .data import ClassificationInstance, RankingInstance
from .encoders import Vocabulary
from .metrics import RankedResult, accuracy, ranking_report
from .models import (ClassBatch, ClassJudge, ClassPredictor, RankBatch, RankJudge, RankPredictor,
                     encode_classification, encode_ranking, make_class_batch, make_rank_batch,
                     one_hot)
from .optim import Adam

log = logging.getLogger(__name__)

NLL_FLOOR = 1e-12

# learning rates used when training on the full labeled set, and in the
# semi-supervised regime (P updated 10 times per Judge update)
FULL_DATA_LR = {"ranking": 5e-4, "classification": 1e-4}
SEMISUP_LR_P = 5e-5
SEMISUP_LR_J = 1e-4
SEMISUP_RATIO = 10


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ArchConfig:
    d_emb: int = 400
    d_proj: int = 200
    filters: int = 400
    window: int | None = None        # None: 3 for ranking, 5 for classification
    hidden: int = 200                # classification predictor MLP width
    dropout: float = 0.0
    freeze_embeddings: bool = False

    def window_for(self, task: str) -> int:
        if self.window is not None:
            return self.window
        return 3 if task == "ranking" else 5


@dataclass
class GameConfig:
    p_updates_per_j_update: int = 1
    lr_p: float = 5e-4
    lr_j: float = 5e-4
    predictor_loss: str = "non_saturating"
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    margin: float = 1.0
    seed: int = 0
    clip_norm: float | None = None
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr_p <= 0 or self.lr_j <= 0:
            raise ContractError("learning rates must be positive")
        if self.p_updates_per_j_update < 1:
            raise ContractError("p_updates_per_j_update must be at least 1")
        if self.predictor_loss not in ("minimax", "non_saturating"):
            raise ContractError(f"unknown predictor loss {self.predictor_loss!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ContractError("batch_size, max_epochs and patience must be positive")

    @classmethod
    def schedule_defaults(cls, task: str, semi_supervised: bool, **overrides) -> "GameConfig":
        """1:1 schedule at the full-data rate, or 10:1 with the smaller semi-supervised rates."""
        if semi_supervised:
            base = dict(p_updates_per_j_update=SEMISUP_RATIO, lr_p=SEMISUP_LR_P, lr_j=SEMISUP_LR_J)
        else:
            lr = FULL_DATA_LR[task]
            base = dict(p_updates_per_j_update=1, lr_p=lr, lr_j=lr)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class EpochRecord:
    epoch: int
    v_estimate: float | None
    loss_p: float | None
    loss_j: float | None
    validation: float

    def row(self) -> list:
        fmt = lambda x: "" if x is None else repr(float(x))
        return [self.epoch, fmt(self.v_estimate), fmt(self.loss_p), fmt(self.loss_j),
                fmt(self.validation)]


HISTORY_COLUMNS = ["epoch", "v_estimate", "loss_p", "loss_j", "validation_metric"]


def write_history_csv(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for rec in history:
            w.writerow(rec.row())


@dataclass
class TrainState:
    task: str
    vocab: Vocabulary
    predictor: object
    judge: object | None = None
    p_optimizer: Adam | None = None
    j_optimizer: Adam | None = None
    epoch: int = 0
    best_metric: float = -math.inf
    best_epoch: int = 0
    p_steps: int = 0
    j_steps: int = 0
    history: list = field(default_factory=list)
    config: GameConfig | None = None


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record ``metric``; returns True when training should stop."""
        if metric > self.best:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


# losses

def hinge_loss(s_pos, s_neg, margin: float = 1.0) -> Tensor:
    """Mean of ``max(0, margin - s_pos + s_neg)`` over pairs."""
    return ad.mean(ad.relu(ad.add(ad.sub(margin, s_pos), s_neg)))


def nll_loss(distribution, label) -> Tensor:
    """Mean ``-log p[label]`` with probabilities floored at 1e-12.

    ``distribution`` is ``[N]`` with a scalar label or ``[B, N]`` with ``B`` labels.
    """
    dist = ad.as_tensor(distribution)
    if dist.ndim == 1:
        dist = ad.reshape(dist, (1, -1))
        label = [label]
    p = ad.pick(dist, np.asarray(label, dtype=np.int64))
    return ad.neg(ad.mean(ad.log(ad.clamp_min(p, NLL_FLOOR))))


# task adapters

class _Task:
    name = ""
    metric = ""

    def __init__(self, vocab: Vocabulary, window: int):
        self.vocab, self.window = vocab, window


class _ClassificationTask(_Task):
    name, metric = "classification", "accuracy"

    def __init__(self, vocab, window, num_classes):
        super().__init__(vocab, window)
        self.num_classes = num_classes

    def encode(self, instances):
        return encode_classification(instances, self.vocab)

    def batch(self, encoded) -> ClassBatch:
        return make_class_batch(encoded, self.window)

    def unlabeled(self, encoded):
        return [(e[0], None) for e in encoded]

    def real_labels(self, batch: ClassBatch):
        return one_hot(batch.labels, self.num_classes)

    def predict(self, P, batch, rng=None):
        return P.forward(batch, rng)

    def evaluate(self, P, encoded, batch_size=256) -> dict:
        preds, labels = [], []
        for i in range(0, len(encoded), batch_size):
            b = self.batch(encoded[i:i + batch_size])
            preds.append(np.argmax(P.logits(b).data, axis=1))
            labels.append(b.labels)
        return {"accuracy": accuracy(np.concatenate(preds), np.concatenate(labels))}

    def supervised_loss(self, P, batch, cfg, rng):
        return nll_loss(P.forward(batch, rng), batch.labels)


class _RankingTask(_Task):
    name, metric = "ranking", "map"

    def encode(self, instances):
        return encode_ranking(instances, self.vocab)

    def batch(self, encoded) -> RankBatch:
        return make_rank_batch(encoded, self.window)

    def unlabeled(self, encoded):
        return [(e[0], e[1], None) for e in encoded]

    def real_labels(self, batch: RankBatch):
        return batch.relevance

    def predict(self, P, batch, rng=None):
        return P.forward(batch, rng)

    def scores(self, P, encoded, batch_size=256) -> list[np.ndarray]:
        out = []
        for i in range(0, len(encoded), batch_size):
            b = self.batch(encoded[i:i + batch_size])
            out.extend(b.split(P.logits(b).data))
        return out

    def evaluate(self, P, encoded, batch_size=256) -> dict:
        results = [RankedResult(s, e[2]) for s, e in zip(self.scores(P, encoded, batch_size),
                                                        encoded)]
        return ranking_report(results)

    def hinge_pairs(self, batch: RankBatch, rng) -> tuple[np.ndarray, np.ndarray]:
        """Every positive candidate paired with one sampled negative of its question."""
        pos_idx, neg_idx = [], []
        start = 0
        for size in batch.sizes:
            rel = batch.relevance[start:start + size]
            pos = np.flatnonzero(rel > 0) + start
            neg = np.flatnonzero(rel <= 0) + start
            if len(pos) and len(neg):
                pos_idx.extend(pos)
                neg_idx.extend(neg[rng.integers(0, len(neg), size=len(pos))])
            start += size
        return np.asarray(pos_idx, dtype=np.int64), np.asarray(neg_idx, dtype=np.int64)

    def supervised_loss(self, P, batch, cfg, rng):
        pos, neg = self.hinge_pairs(batch, rng)
        if len(pos) == 0:
            return None
        s = P.forward(batch, rng)
        return hinge_loss(ad.take_rows(ad.reshape(s, (-1, 1)), pos),
                          ad.take_rows(ad.reshape(s, (-1, 1)), neg), cfg.margin)


def _task_name(instances) -> str:
    first = instances[0]
    if isinstance(first, RankingInstance):
        return "ranking"
    if isinstance(first, ClassificationInstance):
        return "classification"
    raise ContractError(f"unsupported instance type {type(first).__name__}")


def _make_task(name, vocab, arch: ArchConfig, num_classes=None) -> _Task:
    window = arch.window_for(name)
    if name == "ranking":
        return _RankingTask(vocab, window)
    return _ClassificationTask(vocab, window, num_classes)


def _tokens(inst):
    if isinstance(inst, RankingInstance):
        return [inst.question, *inst.candidates]
    return [inst.tokens]


def build_vocab(instances) -> Vocabulary:
    return Vocabulary.build(t for inst in instances for t in _tokens(inst))


def _init_predictor(task: _Task, arch: ArchConfig, rng, embedding=None):
    kw = dict(d_emb=arch.d_emb, d_proj=arch.d_proj, filters=arch.filters, window=task.window,
              embedding=embedding, freeze_embeddings=arch.freeze_embeddings, dropout=arch.dropout)
    if task.name == "ranking":
        return RankPredictor.init(len(task.vocab), rng, **kw)
    return ClassPredictor.init(len(task.vocab), task.num_classes, rng, hidden=arch.hidden, **kw)


def _init_judge(task: _Task, arch: ArchConfig, rng, embedding=None):
    kw = dict(d_emb=arch.d_emb, d_proj=arch.d_proj, filters=arch.filters, window=task.window,
              embedding=embedding, freeze_embeddings=arch.freeze_embeddings, dropout=arch.dropout)
    if task.name == "ranking":
        return RankJudge.init(len(task.vocab), rng, **kw)
    return ClassJudge.init(len(task.vocab), task.num_classes, rng, **kw)


@contextlib.contextmanager
def frozen(params: Sequence[Tensor]):
    """Temporarily exclude ``params`` from gradient recording."""
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def dan_value(labeled_batch, fake_batch, predictor, judge,
              predictor_loss: str = "non_saturating") -> tuple[Tensor, Tensor, Tensor]:
    """Estimate ``(V, loss_J, loss_P)`` on one real and one predicted batch.

    ``labeled_batch`` must carry true labels; labels for ``fake_batch`` come
    from ``predictor``. ``loss_J = -V``; ``loss_P`` depends on ``predictor_loss``.
    """
    if len(labeled_batch) == 0 or len(fake_batch) == 0:
        raise ContractError("dan_value needs non-empty real and fake batches")
    if isinstance(labeled_batch, ClassBatch):
        if labeled_batch.labels is None:
            raise ContractError("the real batch must carry labels")
        real = one_hot(labeled_batch.labels, judge.num_classes)
    else:
        if labeled_batch.relevance is None:
            raise ContractError("the real batch must carry relevance labels")
        real = labeled_batch.relevance
    z_real = judge.logits(labeled_batch, real)
    z_fake = judge.logits(fake_batch, predictor.forward(fake_batch))
    term_real = ad.mean(ad.log_sigmoid(z_real))
    term_fake = ad.mean(ad.log_sigmoid(ad.neg(z_fake)))
    value = ad.add(term_real, term_fake)
    loss_j = ad.neg(value)
    if predictor_loss == "minimax":
        loss_p = term_fake
    elif predictor_loss == "non_saturating":
        loss_p = ad.neg(ad.mean(ad.log_sigmoid(z_fake)))
    else:
        raise ContractError(f"unknown predictor loss {predictor_loss!r}")
    return value, loss_j, loss_p


def _predictor_loss(task, P, J, batch, variant, rng):
    z = J.logits(batch, task.predict(P, batch, rng))
    if variant == "minimax":
        return ad.mean(ad.log_sigmoid(ad.neg(z)))
    return ad.neg(ad.mean(ad.log_sigmoid(z)))


def _judge_objective(task, J, real_batch, fake_batch, fake_labels, rng):
    z_real = J.logits(real_batch, task.real_labels(real_batch), rng)
    z_fake = J.logits(fake_batch, fake_labels, rng)
    value = ad.add(ad.mean(ad.log_sigmoid(z_real)), ad.mean(ad.log_sigmoid(ad.neg(z_fake))))
    return value


class _Cycler:
    """Endless reshuffled pass over a list of items."""

    def __init__(self, items, rng):
        self.items, self.rng = items, rng
        self.order, self.pos = [], 0

    def take(self, n):
        out = []
        while len(out) < n:
            if self.pos >= len(self.order):
                self.order = list(self.rng.permutation(len(self.items)))
                self.pos = 0
            take = min(n - len(out), len(self.order) - self.pos)
            out.extend(self.items[i] for i in self.order[self.pos:self.pos + take])
            self.pos += take
        return out


def _prepare(labeled, unlabeled, validation, arch, vocab):
    if not labeled:
        raise ContractError("training needs at least one labeled instance")
    name = _task_name(labeled)
    vocab = vocab if vocab is not None else build_vocab(list(labeled) + list(unlabeled or []))
    n_cls = None
    if name == "classification":
        n_cls = max(x.label for x in list(labeled) + list(validation or []) if x.label is not None) + 1
        n_cls = max(n_cls, 2)
    return _make_task(name, vocab, arch, n_cls)


def _metric_fn(task, validation, metric_fn, eval_batch_size):
    if metric_fn is not None:
        return metric_fn
    if not validation:
        return None
    encoded = task.encode(validation)
    return lambda P: task.evaluate(P, encoded, eval_batch_size)[task.metric]


def _finish_epoch(state, stopper, P, metric_fn, record_args, snapshot):
    metric = metric_fn(P) if metric_fn is not None else -state.epoch
    rec = EpochRecord(state.epoch, *record_args, metric)
    state.history.append(rec)
    improved = metric > stopper.best
    stop = stopper.update(state.epoch, metric)
    if improved:
        snapshot.clear()
        snapshot.update(P.state_dict())
        state.best_metric, state.best_epoch = stopper.best, stopper.best_epoch
    return stop


def _mean_or_none(xs):
    return float(np.mean(xs)) if xs else None


def train_dan(labeled_data: Sequence, unlabeled_data: Sequence | None, config: GameConfig,
              validation_data: Sequence | None = None, *, arch: ArchConfig | None = None,
              vocab: Vocabulary | None = None, embedding: np.ndarray | None = None,
              metric_fn: Callable | None = None, update_judge: bool = True,
              on_epoch: Callable | None = None) -> tuple[TrainState, list[EpochRecord]]:
    """Train a Predictor/Judge pair.

    Each round is one Judge step (a real batch of labeled pairs against a batch
    of predicted pairs) followed by ``config.p_updates_per_j_update`` Predictor
    steps. Predictor inputs are the labeled instances plus, when given, the
    unlabeled ones. An epoch is one pass of Predictor steps over that pool.
    The Predictor with the best validation metric is restored at the end.
    """
    arch = arch or ArchConfig()
    task = _prepare(labeled_data, unlabeled_data, validation_data, arch, vocab)
    rng = np.random.default_rng(config.seed)
    P = _init_predictor(task, arch, rng, embedding)
    J = _init_judge(task, arch, rng, embedding)
    state = TrainState(task.name, task.vocab, P, J,
                       Adam(P.parameters(), config.lr_p, clip_norm=config.clip_norm),
                       Adam(J.parameters(), config.lr_j, clip_norm=config.clip_norm),
                       config=config)
    real = task.encode(labeled_data)
    pool = task.unlabeled(real) + task.unlabeled(task.encode(unlabeled_data or []))
    real_cycle = _Cycler(real, rng)
    fake_cycle = _Cycler(pool, rng)
    evaluate = _metric_fn(task, validation_data, metric_fn, config.eval_batch_size)
    stopper = EarlyStopping(config.patience)
    best = {}
    bs, ratio = config.batch_size, config.p_updates_per_j_update
    steps_per_epoch = math.ceil(len(pool) / bs)
    j_params, p_params = J.parameters(), P.parameters()

    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        order = rng.permutation(len(pool))
        vs, lps, ljs = [], [], []
        for step in range(steps_per_epoch):
            try:
                if step % ratio == 0:
                    real_b = task.batch(real_cycle.take(min(bs, len(real))))
                    fake_b = task.batch(fake_cycle.take(min(bs, len(pool))))
                    # no gradient into P on Judge steps
                    fake_labels = task.predict(P, fake_b).data
                    with Tape() as tape:
                        value = _judge_objective(task, J, real_b, fake_b, fake_labels, rng)
                        loss_j = ad.neg(value)
                    vs.append(value.item())
                    ljs.append(loss_j.item())
                    if update_judge:
                        state.j_optimizer.step(ad.backward(tape, loss_j, j_params))
                        state.j_steps += 1
                idx = order[step * bs:(step + 1) * bs]
                batch = task.batch([pool[i] for i in idx])
                with frozen(j_params), Tape() as tape:
                    loss_p = _predictor_loss(task, P, J, batch, config.predictor_loss, rng)
                lps.append(loss_p.item())
                state.p_optimizer.step(ad.backward(tape, loss_p, p_params))
                state.p_steps += 1
            except NumericFault as e:
                raise TrainingDiverged(f"diverged at epoch {epoch}, step {step + 1}: {e}") from e
        stop = _finish_epoch(state, stopper, P, evaluate,
                             (_mean_or_none(vs), _mean_or_none(lps), _mean_or_none(ljs)), best)
        if on_epoch is not None:
            on_epoch(state)
        if stop:
            break
    if best:
        P.load_state_dict(best)
    return state, state.history


def _train_supervised(labeled, config, validation, arch, vocab, embedding, metric_fn, kind):
    arch = arch or ArchConfig()
    task = _prepare(labeled, None, validation, arch, vocab)
    rng = np.random.default_rng(config.seed)
    P = _init_predictor(task, arch, rng, embedding)
    state = TrainState(task.name, task.vocab, P,
                       p_optimizer=Adam(P.parameters(), config.lr_p, clip_norm=config.clip_norm),
                       config=config)
    data = task.encode(labeled)
    if kind == "hinge":
        bad = sum(1 for e in data if all(r > 0 for r in e[2]) or not any(r > 0 for r in e[2]))
        if bad:
            log.warning("hinge baseline: skipping %d questions without both a correct "
                        "and an incorrect candidate", bad)
    evaluate = _metric_fn(task, validation, metric_fn, config.eval_batch_size)
    stopper = EarlyStopping(config.patience)
    best = {}
    params = P.parameters()
    bs = config.batch_size
    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(data), bs):
            batch = task.batch([data[i] for i in order[start:start + bs]])
            try:
                with Tape() as tape:
                    loss = task.supervised_loss(P, batch, config, rng)
                if loss is None:
                    continue
                losses.append(loss.item())
                state.p_optimizer.step(ad.backward(tape, loss, params))
                state.p_steps += 1
            except NumericFault as e:
                raise TrainingDiverged(
                    f"diverged at epoch {epoch}, step {start // bs + 1}: {e}") from e
        if _finish_epoch(state, stopper, P, evaluate, (None, _mean_or_none(losses), None), best):
            break
    if best:
        P.load_state_dict(best)
    return state, state.history


def train_hinge_baseline(labeled: Sequence[RankingInstance], config: GameConfig,
                         validation: Sequence | None = None, *, arch: ArchConfig | None = None,
                         vocab: Vocabulary | None = None, embedding=None,
                         metric_fn: Callable | None = None):
    """Ranking predictor trained on sampled (question, positive, negative) triples."""
    if labeled and _task_name(labeled) != "ranking":
        raise ContractError("the hinge baseline is a ranking model")
    return _train_supervised(labeled, config, validation, arch, vocab, embedding, metric_fn,
                             "hinge")


def train_nll_baseline(labeled: Sequence[ClassificationInstance], config: GameConfig,
                       validation: Sequence | None = None, *, arch: ArchConfig | None = None,
                       vocab: Vocabulary | None = None, embedding=None,
                       metric_fn: Callable | None = None):
    """Classification predictor trained with negative log-likelihood."""
    if labeled and _task_name(labeled) != "classification":
        raise ContractError("the NLL baseline is a classification model")
    return _train_supervised(labeled, config, validation, arch, vocab, embedding, metric_fn, "nll")


def evaluate_predictor(state_or_predictor, instances, vocab: Vocabulary | None = None,
                       window: int | None = None) -> dict:
    """Metrics of a trained predictor on labeled ``instances``."""
    if not instances:
        raise ContractError("cannot evaluate on an empty dataset")
    if isinstance(state_or_predictor, TrainState):
        P, vocab = state_or_predictor.predictor, state_or_predictor.vocab
    else:
        P = state_or_predictor
    name = _task_name(instances)
    expected = "rank_predictor" if name == "ranking" else "class_predictor"
    if P.kind != expected:
        raise ContractError(f"a {P.kind} cannot score {name} instances")
    w = window or P.encoder.window
    if name == "ranking":
        task = _RankingTask(vocab, w)
    else:
        task = _ClassificationTask(vocab, w, P.num_classes)
    return task.evaluate(P, task.encode(instances))
