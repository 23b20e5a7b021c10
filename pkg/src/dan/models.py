"""Predictor and Judge networks for classification and answer ranking.

Classification (one sentence, N classes):
    predictor: encoder -> tanh hidden layer -> softmax over N classes
    judge:     sigmoid(r_s' U r_pos - r_s' U r_neg), with r_pos = W_lab' y and
               r_neg = W_lab' (1 - y) / (N - 1)

Ranking (one question, M candidates):
    predictor: score_i = sigmoid(r_q' W r_a_i), encoder shared by q and a_i
    judge:     sigmoid(r_q' U r_pos - r_q' U r_neg), with r_pos = sum_i r_a_i s_i
               and r_neg = sum_i r_a_i (1 - s_i)

Judges never share parameters with predictors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .encoders import EncoderParams, Vocabulary, encode_batch, glorot_uniform, pad_batch

CHECKPOINT_FORMAT = "dan-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


# batches

@dataclass
class ClassBatch:
    ids: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self):
        return len(self.lengths)


@dataclass
class RankBatch:
    q_ids: np.ndarray
    q_lengths: np.ndarray
    a_ids: np.ndarray
    a_lengths: np.ndarray
    segments: np.ndarray          # question index of every candidate
    sizes: np.ndarray             # candidates per question
    relevance: np.ndarray | None = None

    def __len__(self):
        return len(self.q_lengths)

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        """Cut a per-candidate array into per-question pieces."""
        return np.split(np.asarray(values), np.cumsum(self.sizes)[:-1])


def encode_classification(instances, vocab: Vocabulary) -> list[tuple]:
    return [(vocab.encode(x.tokens), x.label) for x in instances]


def encode_ranking(instances, vocab: Vocabulary) -> list[tuple]:
    return [(vocab.encode(x.question), [vocab.encode(c) for c in x.candidates], x.relevance)
            for x in instances]


def make_class_batch(encoded: Sequence[tuple], window: int) -> ClassBatch:
    ids, lengths = pad_batch([e[0] for e in encoded], window)
    labels = [e[1] for e in encoded]
    return ClassBatch(ids, lengths, None if any(l is None for l in labels)
                      else np.asarray(labels, dtype=np.int64))


def make_rank_batch(encoded: Sequence[tuple], window: int) -> RankBatch:
    if any(len(e[1]) == 0 for e in encoded):
        raise ContractError("every question needs at least one candidate")
    q_ids, q_len = pad_batch([e[0] for e in encoded], window)
    a_ids, a_len = pad_batch([c for e in encoded for c in e[1]], window)
    sizes = np.array([len(e[1]) for e in encoded], dtype=np.int64)
    segments = np.repeat(np.arange(len(encoded)), sizes)
    rel = None
    if all(e[2] is not None for e in encoded):
        rel = np.concatenate([np.asarray(e[2], dtype=np.float64) for e in encoded])
    return RankBatch(q_ids, q_len, a_ids, a_len, segments, sizes, rel)


# parameter plumbing shared by all four networks

class _Module:
    kind = ""

    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [t for t in self.named_parameters().values() if t.requires_grad]

    def config(self) -> dict:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = set(named) - set(state)
        if missing:
            raise CheckpointError(f"{self.kind}: checkpoint lacks tensors {sorted(missing)}")
        for name, t in named.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise CheckpointError(
                    f"{self.kind}: tensor {name!r} has shape {arr.shape}, model expects {t.shape}")
            t.data[...] = arr


def _encoder_config(enc: EncoderParams) -> dict:
    return {"vocab_size": enc.embedding.shape[0], "d_emb": enc.embedding.shape[1],
            "d_proj": enc.proj_W.shape[1], "filters": enc.out_dim, "window": enc.window,
            "freeze_embeddings": enc.freeze_embeddings}


def _param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


class ClassPredictor(_Module):
    kind = "class_predictor"

    def __init__(self, encoder: EncoderParams, hidden_W, hidden_b, out_W, out_b,
                 dropout: float = 0.0):
        self.encoder = encoder
        self.hidden_W, self.hidden_b = hidden_W, hidden_b
        self.out_W, self.out_b = out_W, out_b
        self.dropout = dropout

    @classmethod
    def init(cls, vocab_size: int, num_classes: int, rng: np.random.Generator, d_emb=400,
             d_proj=200, filters=400, window=5, hidden=200, embedding=None,
             freeze_embeddings=False, dropout=0.0) -> "ClassPredictor":
        enc = EncoderParams.init(vocab_size, rng, d_emb, d_proj, filters, window, embedding,
                                 freeze_embeddings)
        return cls(enc, _param(glorot_uniform(rng, filters, hidden)), _param(np.zeros(hidden)),
                   _param(glorot_uniform(rng, hidden, num_classes)),
                   _param(np.zeros(num_classes)), dropout)

    @property
    def num_classes(self) -> int:
        return self.out_W.shape[1]

    def config(self) -> dict:
        return {**_encoder_config(self.encoder), "num_classes": self.num_classes,
                "hidden": self.hidden_W.shape[1], "dropout": self.dropout}

    def named_parameters(self):
        return {**self.encoder.named_parameters("encoder."), "hidden_W": self.hidden_W,
                "hidden_b": self.hidden_b, "out_W": self.out_W, "out_b": self.out_b}

    def logits(self, batch: ClassBatch, rng=None) -> Tensor:
        rate = self.dropout if rng is not None else 0.0
        r = encode_batch(batch.ids, batch.lengths, self.encoder, rate, rng)
        h = ad.tanh(ad.affine(r, self.hidden_W, self.hidden_b))
        return ad.affine(h, self.out_W, self.out_b)

    def forward(self, batch: ClassBatch, rng=None) -> Tensor:
        """Class distributions ``[B, N]``."""
        return ad.softmax(self.logits(batch, rng), axis=-1)


class RankPredictor(_Module):
    kind = "rank_predictor"

    def __init__(self, encoder: EncoderParams, W, dropout: float = 0.0):
        self.encoder, self.W, self.dropout = encoder, W, dropout

    @classmethod
    def init(cls, vocab_size: int, rng: np.random.Generator, d_emb=400, d_proj=200, filters=400,
             window=3, embedding=None, freeze_embeddings=False, dropout=0.0) -> "RankPredictor":
        enc = EncoderParams.init(vocab_size, rng, d_emb, d_proj, filters, window, embedding,
                                 freeze_embeddings)
        return cls(enc, _param(glorot_uniform(rng, filters, filters)), dropout)

    def config(self) -> dict:
        return {**_encoder_config(self.encoder), "dropout": self.dropout}

    def named_parameters(self):
        return {**self.encoder.named_parameters("encoder."), "W": self.W}

    def logits(self, batch: RankBatch, rng=None) -> Tensor:
        rate = self.dropout if rng is not None else 0.0
        rq = encode_batch(batch.q_ids, batch.q_lengths, self.encoder, rate, rng)
        ra = encode_batch(batch.a_ids, batch.a_lengths, self.encoder, rate, rng)
        rq_w = ad.take_rows(ad.matmul(rq, self.W), batch.segments)
        return ad.rowdot(rq_w, ra)

    def forward(self, batch: RankBatch, rng=None) -> Tensor:
        """Candidate scores in (0, 1), concatenated over questions ``[C]``."""
        return ad.sigmoid(self.logits(batch, rng))


def aggregate_pos_neg(reps, scores, segments=None, num_segments: int | None = None):
    """Score-weighted sums ``r_pos = sum r_i s_i`` and ``r_neg = sum r_i (1 - s_i)``.

    With ``segments`` the sums run per segment and the results are
    ``[num_segments, d]``; otherwise over all rows, giving ``[d]`` vectors.
    """
    reps, scores = ad.as_tensor(reps), ad.as_tensor(scores)
    if reps.ndim != 2 or scores.shape != (reps.shape[0],):
        raise ContractError(
            f"need one score per representation, got reps {reps.shape} and scores {scores.shape}")
    if scores.size and (scores.data.min() < 0.0 or scores.data.max() > 1.0):
        raise ContractError("scores must lie in [0, 1]")
    s = ad.reshape(scores, (-1, 1))
    pos = ad.mul(reps, s)
    neg = ad.mul(reps, ad.sub(1.0, s))
    if segments is None:
        return ad.sum_(pos, axis=0), ad.sum_(neg, axis=0)
    return (ad.segment_sum(pos, segments, num_segments),
            ad.segment_sum(neg, segments, num_segments))


class RankJudge(_Module):
    kind = "rank_judge"

    def __init__(self, encoder: EncoderParams, U, dropout: float = 0.0):
        self.encoder, self.U, self.dropout = encoder, U, dropout

    @classmethod
    def init(cls, vocab_size: int, rng: np.random.Generator, d_emb=400, d_proj=200, filters=400,
             window=3, embedding=None, freeze_embeddings=False, dropout=0.0) -> "RankJudge":
        enc = EncoderParams.init(vocab_size, rng, d_emb, d_proj, filters, window, embedding,
                                 freeze_embeddings)
        return cls(enc, _param(glorot_uniform(rng, filters, filters)), dropout)

    def config(self) -> dict:
        return {**_encoder_config(self.encoder), "dropout": self.dropout}

    def named_parameters(self):
        return {**self.encoder.named_parameters("encoder."), "U": self.U}

    def logits(self, batch: RankBatch, scores, rng=None) -> Tensor:
        """Judge logits ``[Q]`` for candidate ``scores`` ``[C]`` (tensor or array)."""
        rate = self.dropout if rng is not None else 0.0
        rq = encode_batch(batch.q_ids, batch.q_lengths, self.encoder, rate, rng)
        ra = encode_batch(batch.a_ids, batch.a_lengths, self.encoder, rate, rng)
        r_pos, r_neg = aggregate_pos_neg(ra, scores, batch.segments, len(batch))
        return ad.rowdot(ad.matmul(rq, self.U), ad.sub(r_pos, r_neg))

    def forward(self, batch: RankBatch, scores, rng=None) -> Tensor:
        return ad.sigmoid(self.logits(batch, scores, rng))


def label_representations(y, label_emb):
    """``r_pos = W_lab' y`` and ``r_neg = W_lab' (1 - y) / (N - 1)`` for ``y`` ``[B, N]``."""
    n = label_emb.shape[0]
    if n < 2:
        raise ContractError("the class judge needs at least two classes")
    r_pos = ad.matmul(y, label_emb)
    r_neg = ad.mul(ad.matmul(ad.sub(1.0, y), label_emb), 1.0 / (n - 1))
    return r_pos, r_neg


def label_difference(y, label_emb):
    """``r_pos - r_neg`` in one product, ``(N y - 1) W_lab / (N - 1)``.

    The coefficients vanish exactly for a uniform ``y`` whenever ``N * (1/N)``
    rounds to 1, so the neutral Judge output is exactly 0.5 there.
    """
    n = label_emb.shape[0]
    if n < 2:
        raise ContractError("the class judge needs at least two classes")
    return ad.mul(ad.matmul(ad.sub(ad.mul(y, float(n)), 1.0), label_emb), 1.0 / (n - 1))


class ClassJudge(_Module):
    kind = "class_judge"

    def __init__(self, encoder: EncoderParams, label_emb, U, dropout: float = 0.0):
        self.encoder, self.label_emb, self.U, self.dropout = encoder, label_emb, U, dropout

    @classmethod
    def init(cls, vocab_size: int, num_classes: int, rng: np.random.Generator, d_emb=400,
             d_proj=200, filters=400, window=5, embedding=None, freeze_embeddings=False,
             dropout=0.0) -> "ClassJudge":
        enc = EncoderParams.init(vocab_size, rng, d_emb, d_proj, filters, window, embedding,
                                 freeze_embeddings)
        return cls(enc, _param(glorot_uniform(rng, num_classes, filters)),
                   _param(glorot_uniform(rng, filters, filters)), dropout)

    @property
    def num_classes(self) -> int:
        return self.label_emb.shape[0]

    def config(self) -> dict:
        return {**_encoder_config(self.encoder), "num_classes": self.num_classes,
                "dropout": self.dropout}

    def named_parameters(self):
        return {**self.encoder.named_parameters("encoder."), "label_emb": self.label_emb,
                "U": self.U}

    def logits(self, batch: ClassBatch, y, rng=None) -> Tensor:
        """Judge logits ``[B]`` for label distributions ``y`` ``[B, N]``."""
        y = ad.as_tensor(y)
        if y.ndim != 2 or y.shape[1] != self.num_classes:
            raise ContractError(f"label vectors must be [B, {self.num_classes}], got {y.shape}")
        rate = self.dropout if rng is not None else 0.0
        rs = encode_batch(batch.ids, batch.lengths, self.encoder, rate, rng)
        return ad.rowdot(ad.matmul(rs, self.U), label_difference(y, self.label_emb))

    def forward(self, batch: ClassBatch, y, rng=None) -> Tensor:
        return ad.sigmoid(self.logits(batch, y, rng))


def one_hot(labels, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


# single-instance entry points

def predict_class(tokens: Sequence[int], params: ClassPredictor) -> Tensor:
    batch = make_class_batch([(tokens, None)], params.encoder.window)
    return ad.reshape(params.forward(batch), (params.num_classes,))


def predict_rank(question_tokens: Sequence[int], candidates: Sequence[Sequence[int]],
                 params: RankPredictor) -> Tensor:
    if len(candidates) == 0:
        raise ContractError("predict_rank needs at least one candidate")
    return params.forward(make_rank_batch([(question_tokens, candidates, None)],
                                          params.encoder.window))


def judge_rank(question_tokens: Sequence[int], candidates: Sequence[Sequence[int]], scores,
               params: RankJudge) -> Tensor:
    scores = ad.as_tensor(scores)
    if scores.shape != (len(candidates),):
        raise ContractError(f"need {len(candidates)} scores, got shape {scores.shape}")
    batch = make_rank_batch([(question_tokens, candidates, None)], params.encoder.window)
    return ad.reshape(params.forward(batch, scores), ())


def judge_class(tokens: Sequence[int], y, params: ClassJudge) -> Tensor:
    y = ad.as_tensor(y)
    if y.shape != (params.num_classes,):
        raise ContractError(f"label vector must have length {params.num_classes}, got {y.shape}")
    if y.data.min() < 0.0 or y.data.max() > 1.0:
        raise ContractError("label vector entries must lie in [0, 1]")
    batch = make_class_batch([(tokens, None)], params.encoder.window)
    return ad.reshape(params.forward(batch, ad.reshape(y, (1, -1))), ())


# checkpoints

MODEL_KINDS = {c.kind: c for c in (ClassPredictor, RankPredictor, ClassJudge, RankJudge)}


def build_model(kind: str, config: dict, rng: np.random.Generator | None = None):
    """Fresh network of ``kind`` with the dimensions stored in ``config``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    cfg = dict(config)
    cls = MODEL_KINDS[kind]
    vocab_size = cfg.pop("vocab_size")
    if kind in ("class_predictor", "class_judge"):
        return cls.init(vocab_size, cfg.pop("num_classes"), rng, **cfg)
    return cls.init(vocab_size, rng, **cfg)


def save_checkpoint(path, models: dict[str, _Module], meta: dict | None = None) -> None:
    """Write named models to an ``.npz`` container.

    Tensors are stored as ``<model name>/<tensor name>``; the ``__meta__``
    entry is a UTF-8 JSON document with the format tag, version, each model's
    kind and dimensions, and any caller ``meta`` (e.g. the vocabulary).
    """
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "models": {name: {"kind": m.kind, "config": m.config()} for name, m in models.items()},
              "meta": meta or {}}
    arrays = {f"{name}/{k}": v for name, m in models.items() for k, v in m.state_dict().items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"),
                                       dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, _Module], dict]:
    """Rebuild the models saved by :func:`save_checkpoint`; returns ``(models, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as e:
        raise CheckpointError(f"{path}: not a readable checkpoint ({e})") from None
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path}: missing __meta__ header")
    header = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    models = {}
    for name, spec in header["models"].items():
        model = build_model(spec["kind"], spec["config"])
        prefix = name + "/"
        model.load_state_dict({k[len(prefix):]: v for k, v in arrays.items()
                               if k.startswith(prefix)})
        models[name] = model
    return models, header["meta"]
