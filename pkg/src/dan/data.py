"""Datasets for answer selection (ranking) and sentence classification.

Canonical TSV formats
---------------------
Ranking: ``question_id <TAB> question_text <TAB> answer_text <TAB> label`` with
label in {0, 1}; rows of one question form its candidate list. Classification:
``sentence_text <TAB> label``. An optional first line starting with the column
names is skipped. Text is lowercased and split on whitespace.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .autodiff import ContractError
from .encoders import UNK_TOKEN

log = logging.getLogger(__name__)

QA_HEADER = ("question_id", "question_text", "answer_text", "label")
CLS_HEADER = ("sentence_text", "label")


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RankingInstance:
    question: tuple
    candidates: tuple
    relevance: tuple | None = None
    qid: str = ""

    def __post_init__(self):
        if not self.candidates:
            raise ContractError("a ranking instance needs at least one candidate")
        if self.relevance is not None and len(self.relevance) != len(self.candidates):
            raise ContractError("relevance and candidate lists differ in length")

    @property
    def labeled(self) -> bool:
        return self.relevance is not None

    def without_labels(self) -> "RankingInstance":
        return replace(self, relevance=None)


@dataclass(frozen=True)
class ClassificationInstance:
    tokens: tuple
    label: int | None = None

    @property
    def labeled(self) -> bool:
        return self.label is not None

    def without_labels(self) -> "ClassificationInstance":
        return replace(self, label=None)


@dataclass(frozen=True)
class SemiSupSplit:
    labeled: list
    unlabeled: list
    seed: int


def tokenize(text: str) -> tuple:
    return tuple(text.lower().split())


def _open_tsv(path):
    fh = open(path, encoding="utf-8", newline="")
    return fh, csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)


def _parse_label(raw: str, allowed, path, lineno) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise DataFormatError(f"{path}: line {lineno}: label {raw!r} is not an integer") from None
    if allowed is not None and value not in allowed:
        raise DataFormatError(f"{path}: line {lineno}: label {value} not in {sorted(allowed)}")
    if value < 0:
        raise DataFormatError(f"{path}: line {lineno}: negative label {value}")
    return value


def load_qa_tsv(path) -> list[RankingInstance]:
    """One instance per question id, candidates in file order.

    Questions without any correct candidate are dropped (with a warning).
    """
    groups: dict[str, list] = {}
    fh, reader = _open_tsv(path)
    with fh:
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and tuple(c.lower() for c in row) == QA_HEADER:
                continue
            if not row or row == [""]:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}: line {lineno}: expected 4 columns, got {len(row)}")
            qid, question, answer, raw = row
            label = _parse_label(raw, {0, 1}, path, lineno)
            entry = groups.setdefault(qid, [tokenize(question), [], []])
            entry[1].append(tokenize(answer))
            entry[2].append(label)
    out, dropped = [], 0
    for qid, (question, cands, rel) in groups.items():
        if not any(rel):
            dropped += 1
            continue
        out.append(RankingInstance(question, tuple(cands), tuple(rel), qid))
    if dropped:
        log.warning("%s: excluded %d questions with no correct answer", path, dropped)
    return out


def load_cls_tsv(path, num_classes: int | None = None) -> list[ClassificationInstance]:
    allowed = set(range(num_classes)) if num_classes is not None else None
    out, empty = [], 0
    fh, reader = _open_tsv(path)
    with fh:
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and tuple(c.lower() for c in row) == CLS_HEADER:
                continue
            if not row or row == [""]:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}: line {lineno}: expected 2 columns, got {len(row)}")
            tokens = tokenize(row[0])
            if not tokens:
                empty += 1
                tokens = (UNK_TOKEN,)
            out.append(ClassificationInstance(tokens, _parse_label(row[1], allowed, path, lineno)))
    if empty:
        log.warning("%s: %d empty sentences replaced by a single unknown token", path, empty)
    return out


def num_classes(instances: Sequence[ClassificationInstance]) -> int:
    labels = [x.label for x in instances if x.label is not None]
    if not labels:
        raise ContractError("no labeled instances to infer the class count from")
    return max(labels) + 1


def write_qa_tsv(path, instances: Sequence[RankingInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(QA_HEADER) + "\n")
        for i, inst in enumerate(instances):
            qid = inst.qid or f"q{i}"
            for cand, rel in zip(inst.candidates, inst.relevance):
                fh.write(f"{qid}\t{' '.join(inst.question)}\t{' '.join(cand)}\t{rel}\n")


def write_cls_tsv(path, instances: Sequence[ClassificationInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(CLS_HEADER) + "\n")
        for inst in instances:
            fh.write(f"{' '.join(inst.tokens)}\t{inst.label}\n")


def convert_wikiqa(src, dst) -> int:
    """Convert an original WikiQA ``.tsv`` (QuestionID, Question, DocumentID,
    DocumentTitle, SentenceID, Sentence, Label) to the canonical ranking format.
    Returns the number of rows written."""
    n = 0
    with open(src, encoding="utf-8", newline="") as fin, \
            open(dst, "w", encoding="utf-8", newline="") as fout:
        reader = csv.DictReader(fin, delimiter="\t", quoting=csv.QUOTE_NONE)
        fout.write("\t".join(QA_HEADER) + "\n")
        for row in reader:
            clean = [" ".join(row[c].split()) for c in ("QuestionID", "Question", "Sentence")]
            fout.write("\t".join(clean + [row["Label"].strip()]) + "\n")
            n += 1
    return n


def split_semisup(train_set: Sequence, k: int, seed: int) -> SemiSupSplit:
    """Sample ``k`` labeled instances without replacement; the rest lose their labels."""
    n = len(train_set)
    if not 1 <= k <= n:
        raise ContractError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    labeled = [train_set[i] for i in chosen]
    unlabeled = [train_set[i].without_labels() for i in np.flatnonzero(~mask)]
    return SemiSupSplit(labeled, unlabeled, seed)


# synthetic planted-token tasks

def _fillers(rng, pool, length):
    return [pool[i] for i in rng.integers(0, len(pool), size=length)]


def _plant(rng, tokens, planted):
    tokens = list(tokens)
    for tok in planted:
        tokens.insert(int(rng.integers(0, len(tokens) + 1)), tok)
    return tuple(tokens)


def synth_classification(num_instances: int, num_classes: int = 2, vocab_size: int = 200,
                         seed: int = 0, planted_per_instance: int = 3,
                         tokens_per_class: int | None = None,
                         length: tuple = (6, 12)) -> list[ClassificationInstance]:
    """Sentences whose class is fixed by which class-owned token subset they contain.

    Tokens ``w0 .. w{vocab_size-1}``: class ``c`` owns a disjoint block of
    ``tokens_per_class`` tokens (default: half the vocabulary split evenly);
    the remaining tokens are class-neutral filler. Each sentence holds
    ``planted_per_instance`` tokens from its class block among random filler,
    so a token-presence rule classifies every instance correctly.
    """
    if min(num_instances, num_classes, vocab_size, planted_per_instance) < 1:
        raise ContractError("sizes must be at least 1")
    per_class = tokens_per_class or (vocab_size // 2) // num_classes
    if per_class < 1 or vocab_size - per_class * num_classes < 1:
        raise ContractError(
            f"vocabulary of {vocab_size} is too small to plant {num_classes} classes")
    vocab = [f"w{i}" for i in range(vocab_size)]
    blocks = [vocab[c * per_class:(c + 1) * per_class] for c in range(num_classes)]
    filler = vocab[per_class * num_classes:]
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(num_instances):
        label = int(rng.integers(0, num_classes))
        base = _fillers(rng, filler, int(rng.integers(length[0], length[1] + 1)))
        block = blocks[label]
        planted = [block[i] for i in rng.integers(0, len(block), size=planted_per_instance)]
        out.append(ClassificationInstance(_plant(rng, base, planted), label))
    return out


def synth_ranking(num_questions: int, num_candidates: int = 4, vocab_size: int = 200,
                  seed: int = 0, num_keywords: int | None = None,
                  length: tuple = (4, 8),
                  distractor_keywords: bool = False) -> list[RankingInstance]:
    """Questions with one correct candidate sharing the question's keyword.

    Tokens ``w0 .. w{vocab_size-1}``; the first ``num_keywords`` (default half
    the vocabulary) are keywords, the rest filler. A question carries one
    keyword; its correct candidate carries the same keyword, each distractor a
    different keyword. Keyword matching ranks every list perfectly.
    """
    if min(num_questions, num_candidates, vocab_size) < 1:
        raise ContractError("sizes must be at least 1")
    n_kw = num_keywords or vocab_size // 2
    if n_kw < min(2, num_candidates) or vocab_size - n_kw < 1:
        raise ContractError(f"vocabulary of {vocab_size} is too small to plant keywords")
    vocab = [f"w{i}" for i in range(vocab_size)]
    keywords, filler = vocab[:n_kw], vocab[n_kw:]
    rng = np.random.default_rng(seed)

    def sentence(kw):
        base = _fillers(rng, filler, int(rng.integers(length[0], length[1] + 1)))
        return _plant(rng, base, [kw])

    out = []
    for q in range(num_questions):
        kq = int(rng.integers(0, n_kw))
        others = [i for i in range(n_kw) if i != kq]
        correct = int(rng.integers(0, num_candidates))
        cands, rel = [], []
        for j in range(num_candidates):
            if j == correct:
                cands.append(sentence(keywords[kq]))
                rel.append(1)
            else:
                if distractor_keywords:
                    cands.append(sentence(keywords[others[int(rng.integers(0, len(others)))]]))
                else:
                    base = _fillers(rng, filler, int(rng.integers(length[0], length[1] + 2)))
                    cands.append(tuple(base))
                rel.append(0)
        out.append(RankingInstance(sentence(keywords[kq]), tuple(cands), tuple(rel), f"s{q}"))
    return out
