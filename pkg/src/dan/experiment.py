"""Experiment runner: k-labeled sweeps over seeds, result files and checkpoint evaluation.

A sweep trains one model per ``(k, seed)`` pair: split the training set into
``k`` labeled instances (the rest unlabeled), train with early stopping on the
dev set, and score the restored predictor on the test set. Outputs in
``config.out``:

* ``runs.csv``: one row per run (task, model, k, seed, metrics, epochs, steps, wall time)
* ``aggregate.json``: mean and sample std of every metric per k
* ``plot.csv``: k against mean/std of every metric
* ``runs/``: per-run JSON rows and training-history CSVs

Every file carries the resolved configuration (all defaults filled in).
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import ContractError
from .data import (load_cls_tsv, load_qa_tsv, split_semisup, synth_classification,
                   synth_ranking)
from .encoders import PAD_TOKEN, UNK_TOKEN, Vocabulary, load_pretrained
from .metrics import metric_report
from .models import CheckpointError, load_checkpoint, save_checkpoint
from .training import (ArchConfig, GameConfig, build_vocab, evaluate_predictor,
                       train_dan, train_hinge_baseline, train_nll_baseline, write_history_csv)

log = logging.getLogger(__name__)

TASKS = ("ranking", "classification")
MODELS = ("dan", "dan_unlab", "hinge_baseline", "nll_baseline")
METRICS = {"ranking": ("map", "mrr", "ndcg"), "classification": ("accuracy",)}
DEFAULT_K = (10, 50, 100, 500, "full")
SYNTH_SIZES = {"train": 1000, "dev": 200, "test": 500}


class ConfigError(ValueError):
    """Invalid experiment configuration (reported before any training)."""


class SweepFailed(RuntimeError):
    def __init__(self, failures):
        self.failures = failures
        super().__init__(f"{len(failures)} run(s) failed: "
                         + "; ".join(f"k={f['k']} seed={f['seed']}: {f['error']}" for f in failures))


@dataclass
class ExperimentConfig:
    task: str = "ranking"
    model: str = "dan"
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    embeddings_path: str | None = None
    synthetic: dict | None = None
    num_classes: int | None = None
    k: list = field(default_factory=lambda: list(DEFAULT_K))
    seeds: list = field(default_factory=lambda: list(range(10)))
    global_seed: int = 0
    game: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    out: str = "results"
    jobs: int = 1
    save_checkpoints: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: the config must be a JSON object")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.model == "hinge_baseline" and self.task != "ranking":
            raise ConfigError("hinge_baseline is a ranking model")
        if self.model == "nll_baseline" and self.task != "classification":
            raise ConfigError("nll_baseline is a classification model")
        paths = (self.train_path, self.dev_path, self.test_path)
        if self.synthetic is None and not all(paths):
            raise ConfigError("give train_path, dev_path and test_path, or a synthetic block")
        if self.synthetic is not None and any(paths):
            raise ConfigError("synthetic data and dataset paths are mutually exclusive")
        if not isinstance(self.k, list) or not self.k:
            raise ConfigError("k must be a non-empty list")
        for k in self.k:
            if k != "full" and not (isinstance(k, int) and not isinstance(k, bool) and k >= 1):
                raise ConfigError(f"k values must be positive integers or 'full', got {k!r}")
        if self.model == "dan_unlab" and "full" in self.k:
            raise ConfigError("dan_unlab needs unlabeled data, so k cannot be 'full'")
        if not isinstance(self.seeds, list) or not self.seeds or \
                not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise ConfigError("jobs must be a positive integer")
        for name, obj, kind in (("game", self.game, GameConfig), ("arch", self.arch, ArchConfig)):
            if not isinstance(obj, dict):
                raise ConfigError(f"{name} must be an object")
            bad = set(obj) - {f.name for f in fields(kind)}
            if bad:
                raise ConfigError(f"unknown {name} keys: {sorted(bad)}")
        if "seed" in self.game:
            raise ConfigError("per-run seeds are derived from global_seed; drop game.seed")
        try:
            self.game_config(0)
        except ContractError as e:
            raise ConfigError(str(e)) from None

    @property
    def semi_supervised(self) -> bool:
        return self.model == "dan_unlab"

    def game_config(self, seed: int) -> GameConfig:
        """Schedule and rates for one run: 10:1 with the small rates for
        ``dan_unlab``, otherwise 1:1 at the full-data rate; ``game`` overrides both."""
        return GameConfig.schedule_defaults(self.task, self.semi_supervised,
                                         **{**self.game, "seed": seed})

    def arch_config(self, d_emb: int | None = None) -> ArchConfig:
        arch = dict(self.arch)
        if d_emb is not None:
            if arch.get("d_emb", d_emb) != d_emb:
                raise ConfigError(f"arch.d_emb={arch['d_emb']} but the embedding file has "
                                  f"dimension {d_emb}")
            arch["d_emb"] = d_emb
        return ArchConfig(**arch)

    def resolved(self, d_emb: int | None = None) -> dict:
        """The configuration with game and arch defaults materialised."""
        d = asdict(self)
        game = self.game_config(0).to_dict()
        game.pop("seed")
        d["game"] = game
        arch = asdict(self.arch_config(d_emb))
        arch["window"] = self.arch_config(d_emb).window_for(self.task)
        d["arch"] = arch
        return d


def run_seed(global_seed: int, k: int, run_index: int) -> int:
    """Per-run seed; independent of which other k values or runs exist."""
    return int(np.random.SeedSequence([global_seed, k, run_index]).generate_state(1)[0])


# data

def _synthetic(cfg: ExperimentConfig):
    gen_kw = dict(cfg.synthetic)
    sizes = {s: gen_kw.pop(s, SYNTH_SIZES[s]) for s in SYNTH_SIZES}
    seed = gen_kw.pop("seed", 0)
    gen = synth_ranking if cfg.task == "ranking" else synth_classification
    try:
        return tuple(gen(sizes[s], seed=seed + i, **gen_kw) for i, s in enumerate(SYNTH_SIZES))
    except TypeError as e:
        raise ConfigError(f"bad synthetic block: {e}") from None


def load_data(cfg: ExperimentConfig):
    """``(train, dev, test)`` instance lists for ``cfg``."""
    if cfg.synthetic is not None:
        return _synthetic(cfg)
    if cfg.task == "ranking":
        return tuple(load_qa_tsv(p) for p in (cfg.train_path, cfg.dev_path, cfg.test_path))
    return tuple(load_cls_tsv(p, cfg.num_classes)
                 for p in (cfg.train_path, cfg.dev_path, cfg.test_path))


@dataclass
class Prepared:
    cfg: ExperimentConfig
    train: list
    dev: list
    test: list
    vocab: Vocabulary
    embedding: np.ndarray | None
    arch: ArchConfig

    def k_value(self, k) -> int:
        return len(self.train) if k == "full" else int(k)


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Load data and embeddings and check data-dependent constraints."""
    train, dev, test = load_data(cfg)
    if not train or not dev or not test:
        raise ConfigError("train, dev and test sets must all be non-empty")
    for k in cfg.k:
        kv = len(train) if k == "full" else k
        if kv > len(train):
            raise ConfigError(f"k={k} exceeds the {len(train)} training instances")
        if cfg.semi_supervised and kv >= len(train):
            raise ConfigError(f"dan_unlab needs k < {len(train)} (got {k})")
    vocab = build_vocab(train)
    embedding = None
    if cfg.embeddings_path:
        embedding = load_pretrained(cfg.embeddings_path, vocab, seed=cfg.global_seed)
    arch = cfg.arch_config(None if embedding is None else embedding.shape[1])
    return Prepared(cfg, train, dev, test, vocab, embedding, arch)


# single runs

def _run_name(k, seed) -> str:
    return f"k{k}_seed{seed}"


def _train_run(prep: Prepared, k, seed: int):
    cfg = prep.cfg
    kv = prep.k_value(k)
    rs = run_seed(cfg.global_seed, kv, seed)
    game = cfg.game_config(rs)
    split = split_semisup(prep.train, kv, rs)
    kw = dict(arch=prep.arch, vocab=prep.vocab, embedding=prep.embedding)
    t0 = time.perf_counter()
    if cfg.model == "hinge_baseline":
        state, history = train_hinge_baseline(split.labeled, game, prep.dev, **kw)
    elif cfg.model == "nll_baseline":
        state, history = train_nll_baseline(split.labeled, game, prep.dev, **kw)
    else:
        unlabeled = split.unlabeled if cfg.model == "dan_unlab" else None
        state, history = train_dan(split.labeled, unlabeled, game, prep.dev, **kw)
    metrics = evaluate_predictor(state, prep.test)
    row = {"task": cfg.task, "model": cfg.model, "k": k, "seed": seed, "run_seed": rs,
           **{m: metrics[m] for m in METRICS[cfg.task]},
           "epochs": state.epoch, "best_epoch": state.best_epoch,
           "p_steps": state.p_steps, "j_steps": state.j_steps,
           "p_updates_per_j_update": game.p_updates_per_j_update,
           "lr_p": game.lr_p, "lr_j": game.lr_j, "wall_time": time.perf_counter() - t0}
    return state, history, row


def run_one(prep: Prepared, k, seed: int, out_dir: Path | None = None) -> dict:
    """Split, train, early-stop and test one ``(k, seed)`` run; returns its CSV row."""
    state, history, row = _train_run(prep, k, seed)
    if out_dir is not None:
        runs = out_dir / "runs"
        runs.mkdir(parents=True, exist_ok=True)
        name = _run_name(k, seed)
        write_history_csv(runs / f"{name}.history.csv", history)
        if prep.cfg.save_checkpoints:
            save_run_checkpoint(runs / f"{name}.npz", state, prep, row)
        # per-run file first, merged once the sweep ends
        (runs / f"{name}.json").write_text(json.dumps(row, sort_keys=True))
    return row


def save_run_checkpoint(path, state, prep: Prepared, row: dict) -> None:
    models = {"predictor": state.predictor}
    if state.judge is not None:
        models["judge"] = state.judge
    meta = {"task": prep.cfg.task, "vocab": prep.vocab.itos, "run": row,
            "config": prep.cfg.resolved(prep.arch.d_emb)}
    save_checkpoint(path, models, meta)


# sweeps

def _columns(task) -> list[str]:
    return ["task", "model", "k", "seed", "run_seed", *METRICS[task], "epochs", "best_epoch",
            "p_steps", "j_steps", "p_updates_per_j_update", "lr_p", "lr_j", "wall_time"]


def _config_line(resolved: dict) -> str:
    return "# config=" + json.dumps(resolved, sort_keys=True) + "\n"


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_runs_csv(path, rows, task, resolved) -> None:
    cols = _columns(task)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_config_line(resolved))
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def read_runs_csv(path) -> tuple[dict, list[dict]]:
    """``(resolved config, rows)`` from a ``runs.csv`` file (values as strings)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# config="):
            raise ValueError(f"{path}: missing config line")
        rows = list(csv.DictReader(fh))
    return json.loads(first[len("# config="):]), rows


def aggregate(rows, task) -> dict:
    """``{k: {metric: {mean, std, samples}}}`` keyed by ``str(k)`` in sweep order."""
    out: dict = {}
    for r in rows:
        per = out.setdefault(str(r["k"]), {m: [] for m in METRICS[task]})
        for m in METRICS[task]:
            per[m].append(r[m])
    return {k: metric_report(v) for k, v in out.items()}


def write_plot_csv(path, agg: dict, task, resolved) -> None:
    metrics = METRICS[task]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_config_line(resolved))
        w = csv.writer(fh)
        w.writerow(["k", "n_runs", *[f"{m}_{s}" for m in metrics for s in ("mean", "std")]])
        for k, rep in agg.items():
            n = len(rep[metrics[0]]["samples"])
            w.writerow([k, n, *[repr(rep[m][s]) for m in metrics for s in ("mean", "std")]])


def _sort_key(cfg, row_or_failure):
    return cfg.k.index(row_or_failure["k"]), cfg.seeds.index(row_or_failure["seed"])


def _worker(prep, k, seed, out_dir):
    return run_one(prep, k, seed, out_dir)


def run(cfg: ExperimentConfig, prep: Prepared | None = None) -> dict:
    """Execute every ``(k, seed)`` run of ``cfg`` and write the result files.

    Failed runs do not stop the others; whatever finished is written out and
    :class:`SweepFailed` is raised at the end.
    """
    cfg.validate()
    prep = prep or prepare(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved(prep.arch.d_emb)
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    jobs = [(k, s) for k in cfg.k for s in cfg.seeds]
    rows, failures = [], []

    def failed(k, s, e):
        log.error("run k=%s seed=%s failed: %s", k, s, e)
        failures.append({"k": k, "seed": s, "error": f"{type(e).__name__}: {e}"})

    if cfg.jobs == 1:
        for k, s in jobs:
            try:
                rows.append(run_one(prep, k, s, out))
            except Exception as e:  # keep going; reported below
                failed(k, s, e)
    else:
        with cf.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = {pool.submit(_worker, prep, k, s, out): (k, s) for k, s in jobs}
            for fut in cf.as_completed(futures):
                k, s = futures[fut]
                try:
                    rows.append(fut.result())
                except Exception as e:
                    failed(k, s, e)
    rows.sort(key=lambda r: _sort_key(cfg, r))
    failures.sort(key=lambda f: _sort_key(cfg, f))
    write_runs_csv(out / "runs.csv", rows, cfg.task, resolved)
    agg = aggregate(rows, cfg.task)
    write_plot_csv(out / "plot.csv", agg, cfg.task, resolved)
    report = {"config": resolved, "results": agg, "failures": failures}
    (out / "aggregate.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if failures:
        raise SweepFailed(failures)
    return report


def train_single(cfg: ExperimentConfig) -> dict:
    """One run (first k, first seed) with a checkpoint written to ``out/model.npz``."""
    cfg.validate()
    prep = prepare(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    state, history, row = _train_run(prep, cfg.k[0], cfg.seeds[0])
    write_history_csv(out / "history.csv", history)
    save_run_checkpoint(out / "model.npz", state, prep, row)
    report = {"config": cfg.resolved(prep.arch.d_emb), "run": row}
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


# checkpoint evaluation

def load_instances(path, task: str):
    return load_qa_tsv(path) if task == "ranking" else load_cls_tsv(path)


def evaluate(checkpoint, dataset) -> dict:
    """Metric report ``{metric: {mean, std, samples}}`` of a saved predictor.

    ``dataset`` is a list of instances or a path to a canonical TSV file of the
    checkpoint's task.
    """
    models, meta = load_checkpoint(checkpoint)
    if "predictor" not in models or "vocab" not in meta or "task" not in meta:
        raise CheckpointError(f"{checkpoint}: not a predictor checkpoint written by the runner")
    task = meta["task"]
    itos = meta["vocab"]
    if itos[:2] != [PAD_TOKEN, UNK_TOKEN]:
        raise CheckpointError(f"{checkpoint}: vocabulary does not start with pad/unk tokens")
    vocab = Vocabulary(itos[2:])
    P = models["predictor"]
    if len(vocab) != P.encoder.embedding.shape[0]:
        raise CheckpointError(f"{checkpoint}: vocabulary of {len(vocab)} tokens does not match "
                              f"the embedding table {P.encoder.embedding.shape}")
    if isinstance(dataset, (str, os.PathLike)):
        dataset = load_instances(dataset, task)
    if not dataset:
        raise ContractError("cannot evaluate on an empty dataset")
    expected = "rank_predictor" if task == "ranking" else "class_predictor"
    if P.kind != expected:
        raise CheckpointError(f"{checkpoint}: {P.kind} cannot score {task} data")
    metrics = evaluate_predictor(P, dataset, vocab)
    return metric_report({m: [v] for m, v in metrics.items()})
