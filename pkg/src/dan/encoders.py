"""Sentence encoder: embeddings -> linear projection -> convolution -> tanh -> max over time."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


class EmbeddingFormatError(ValueError):
    pass


class Vocabulary:
    """Dense token ids. Id 0 is padding, id 1 is the unknown token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        counts = Counter()
        order = []
        for toks in token_lists:
            for t in toks:
                if t not in counts:
                    order.append(t)
                counts[t] += 1
        return cls(t for t in order if counts[t] >= min_count)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def random_embeddings(rng: np.random.Generator, vocab_size: int, dim: int) -> np.ndarray:
    table = rng.uniform(-0.25, 0.25, size=(vocab_size, dim))
    table[PAD] = 0.0
    return table


@dataclass
class EncoderParams:
    embedding: Tensor
    proj_W: Tensor
    proj_b: Tensor
    conv_W: Tensor
    conv_b: Tensor
    window: int
    freeze_embeddings: bool = False

    @classmethod
    def init(cls, vocab_size: int, rng: np.random.Generator, d_emb: int = 400, d_proj: int = 200,
             filters: int = 400, window: int = 3, embedding: np.ndarray | None = None,
             freeze_embeddings: bool = False) -> "EncoderParams":
        if min(vocab_size, d_emb, d_proj, filters) < 1 or window < 1:
            raise ContractError("encoder dimensions and window must be positive")
        if embedding is None:
            embedding = random_embeddings(rng, vocab_size, d_emb)
        elif embedding.shape != (vocab_size, d_emb):
            raise ContractError(
                f"embedding table {embedding.shape} does not match ({vocab_size}, {d_emb})")
        return cls(
            embedding=Tensor(embedding.copy(), requires_grad=not freeze_embeddings),
            proj_W=Tensor(glorot_uniform(rng, d_emb, d_proj), requires_grad=True),
            proj_b=Tensor(np.zeros(d_proj), requires_grad=True),
            conv_W=Tensor(glorot_uniform(rng, window * d_proj, filters), requires_grad=True),
            conv_b=Tensor(np.zeros(filters), requires_grad=True),
            window=window,
            freeze_embeddings=freeze_embeddings,
        )

    @property
    def out_dim(self) -> int:
        return self.conv_W.shape[1]

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        named = {"embedding": self.embedding, "proj_W": self.proj_W, "proj_b": self.proj_b,
                 "conv_W": self.conv_W, "conv_b": self.conv_b}
        return {prefix + k: v for k, v in named.items()}

    def parameters(self) -> list[Tensor]:
        """Trainable tensors (the embedding table is left out when frozen)."""
        return [t for t in self.named_parameters().values() if t.requires_grad]


def pad_batch(sequences: Sequence[Sequence[int]], window: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with PAD to a common length of at least ``window``."""
    if not sequences:
        raise ContractError("cannot pad an empty batch")
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    if lengths.min() == 0:
        raise ContractError("empty token sequence; callers must supply at least one token")
    width = max(int(lengths.max()), window)
    ids = np.full((len(sequences), width), PAD, dtype=np.int64)
    for i, s in enumerate(sequences):
        ids[i, :len(s)] = s
    return ids, lengths


def encode_batch(ids: np.ndarray, lengths: np.ndarray, params: EncoderParams,
                 dropout: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    """Encode padded ``ids`` ``[B, L]`` into ``[B, filters]``.

    Each row is pooled only over windows that start inside its own padded
    length ``max(len, window)``, so results do not depend on batch company.
    """
    w = params.window
    counts = np.maximum(lengths, w) - w + 1
    x = ad.embedding_lookup(params.embedding, ids, padding_idx=PAD)
    h = ad.affine(x, params.proj_W, params.proj_b)
    c = ad.tanh(ad.conv1d_seq(h, params.conv_W, params.conv_b, w))
    out = ad.max_over_time(c, counts)
    if dropout > 0.0:
        out = ad.dropout(out, dropout, rng)
    return out


def encode(tokens: Sequence[int], params: EncoderParams) -> Tensor:
    """Encode one id sequence into a vector of length ``params.out_dim``."""
    ids, lengths = pad_batch([tokens], params.window)
    return ad.reshape(encode_batch(ids, lengths, params), (params.out_dim,))


def load_pretrained(path, vocab: Vocabulary, rng: np.random.Generator | None = None,
                    seed: int = 0) -> np.ndarray:
    """Read a word2vec text file into a ``[len(vocab), dim]`` table.

    Tokens missing from the file get rows drawn uniformly from [-0.25, 0.25];
    the PAD row is zero.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise EmbeddingFormatError(f"{path}: line 1: expected header 'count dim'")
        count, dim = int(header[0]), int(header[1])
        table = random_embeddings(rng, len(vocab), dim)
        seen = 0
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}: line {lineno}: expected token plus {dim} values, got {len(parts) - 1}")
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"{path}: line {lineno}: non-numeric value") from None
            seen += 1
            tok = parts[0]
            if tok in vocab and vocab[tok] != PAD:
                table[vocab[tok]] = vec
    if seen != count:
        raise EmbeddingFormatError(f"{path}: header declares {count} vectors, found {seen}")
    table[PAD] = 0.0
    return table
