"""Synthetic data, retrieval metrics and the end-to-end experiment runner."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .codec import LossWeights, QuantizerConfig, VectorSet, compression_ratio, read_vectors
from .lut import asym_distance_matrix, build_class_lut, build_sym_lut, classify_codes, sym_distance_matrix
from .model import DpqModel, encode_many, forward, intra_normalize, train
from .pq import pq_encode_many, pq_train, quantization_error

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    dim: int = 64
    points_per_class: int = 500
    cluster_spread: float = 0.3
    seed: int = 7

    def __post_init__(self):
        if min(self.num_classes, self.dim, self.points_per_class) <= 0:
            raise ValueError("num_classes, dim and points_per_class must be positive")
        if not self.cluster_spread > 0:
            raise ValueError("cluster_spread must be positive")


def gen_synthetic(spec: SyntheticSpec) -> VectorSet:
    """Gaussian class blobs.

    Class means are N(0, I/dim), so their expected norm is 1; points are the
    class mean plus isotropic noise of standard deviation ``cluster_spread``.
    Rows are grouped by class.
    """
    rng = np.random.default_rng(spec.seed)
    means = rng.normal(0.0, 1.0 / math.sqrt(spec.dim), size=(spec.num_classes, spec.dim))
    labels = np.repeat(np.arange(spec.num_classes), spec.points_per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.size, spec.dim))
    return VectorSet(means[labels] + spec.cluster_spread * noise, labels)


# -- retrieval metrics --------------------------------------------------------


def average_precision(ranked_relevance: Sequence[bool], num_relevant: Optional[int] = None) -> float:
    """Mean of precision@i over relevant positions i, divided by R.

    ``num_relevant`` is the total relevant count in the database; it defaults
    to the number of relevant items in the ranking.
    """
    rel = np.asarray(ranked_relevance, dtype=bool)
    if rel.size == 0:
        raise ValueError("ranked relevance sequence is empty")
    R = int(rel.sum()) if num_relevant is None else num_relevant
    if R <= 0:
        raise ValueError("average precision is undefined without relevant items")
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, rel.size + 1)
    return float(precision[rel].sum() / R)


@dataclass(frozen=True, eq=False)
class RetrievalRun:
    query_labels: np.ndarray
    rankings: np.ndarray  # (Q, n) database indices, best first
    db_labels: np.ndarray
    mode: str = ""

    def __post_init__(self):
        r = np.asarray(self.rankings)
        if r.ndim != 2 or r.shape[0] != len(self.query_labels):
            raise ValueError("one ranking row per query is required")
        if r.shape[1] > len(self.db_labels) or (r.size and (r.min() < 0 or r.max() >= len(self.db_labels))):
            raise ValueError("rankings must index the database")


def rankings_from_distances(dist: np.ndarray) -> np.ndarray:
    """Row-wise ascending order; ties broken by ascending database index."""
    return np.argsort(dist, axis=1, kind="stable")


def eval_map(run: RetrievalRun) -> float:
    """Mean AP with relevance = label match, skipping queries with no relevant items."""
    db_labels = np.asarray(run.db_labels)
    aps = []
    for q_label, ranking in zip(np.asarray(run.query_labels), np.asarray(run.rankings)):
        R = int(np.sum(db_labels == q_label))
        if R == 0:
            continue
        aps.append(average_precision(db_labels[ranking] == q_label, R))
    if not aps:
        raise ValueError("no query has a relevant database item")
    return float(np.mean(aps))


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    # rank by descending score, lower class index first on ties
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(order == np.asarray(labels)[:, None], axis=1)))


# -- experiment config --------------------------------------------------------


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_classes(v: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in v.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "single"
    input: Optional[str] = None
    classes: int = 10
    dim: int = 64
    per_class: int = 500
    spread: float = 0.3
    data_seed: int = 7
    seed: int = 7
    queries: int = 1000
    methods: tuple[str, ...] = ("pq", "dpq")
    M: int = 4
    K: int = 16
    D: Optional[int] = None
    hidden: int = 128
    front_dim: int = 128
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    w_softmax: float = 1.0
    w_central: float = 0.5
    w_gini_batch: float = 0.1
    w_gini_sample: float = 0.1
    w_weight_decay: float = 5e-4
    soft_only: bool = False
    pq_iters: int = 100
    normalize: bool = False
    train_classes: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6)
    eval_classes: tuple[int, ...] = (7, 8, 9)
    threads: int = 1

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_softmax, self.w_central, self.w_gini_batch, self.w_gini_sample, self.w_weight_decay)

    def quantizer(self, input_dim: int, num_classes: int) -> QuantizerConfig:
        return QuantizerConfig(
            M=self.M,
            K=self.K,
            D=self.D,
            input_dim=input_dim,
            num_classes=num_classes,
            hidden_dim=self.hidden,
            front_dim=self.front_dim,
            weights=self.weights,
            seed=self.seed,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.lr,
            momentum=self.momentum,
            hard_path=not self.soft_only,
        )


_PARSERS = {
    "mode": str,
    "input": str,
    "methods": lambda v: tuple(m.strip() for m in v.split(",") if m.strip()),
    "D": int,
    "soft_only": _parse_bool,
    "normalize": _parse_bool,
    "train_classes": _parse_classes,
    "eval_classes": _parse_classes,
}


def parse_config(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    defaults = ExperimentConfig()
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ExperimentConfig.__dataclass_fields__:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = _PARSERS.get(key) or type(getattr(defaults, key))
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    values.update(overrides or {})
    cfg = ExperimentConfig(**values)
    if cfg.mode not in ("single", "crossdomain"):
        raise ConfigError(f"mode must be 'single' or 'crossdomain', got {cfg.mode!r}")
    unknown = set(cfg.methods) - {"pq", "dpq"}
    if unknown or not cfg.methods:
        raise ConfigError(f"methods must be drawn from pq, dpq; got {cfg.methods}")
    if cfg.mode == "crossdomain" and set(cfg.train_classes) & set(cfg.eval_classes):
        raise ConfigError("train_classes and eval_classes must be disjoint")
    return cfg


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


# -- experiment ---------------------------------------------------------------


@dataclass
class Report:
    config: dict
    metrics: list = field(default_factory=list)
    usage: dict = field(default_factory=dict)

    def add(self, metric: str, mode: str, bits: int, value: float) -> None:
        self.metrics.append({"metric": metric, "mode": mode, "bits": bits, "value": float(value)})

    def value(self, metric: str, mode: str) -> float:
        for rec in self.metrics:
            if rec["metric"] == metric and rec["mode"] == mode:
                return rec["value"]
        raise KeyError((metric, mode))

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "metrics": self.metrics, "usage": self.usage}, indent=2, sort_keys=True)

    def json_lines(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.metrics)

    def table(self) -> str:
        rows = [("metric", "mode", "bits", "value")]
        rows += [(r["metric"], r["mode"], str(r["bits"]), f"{r['value']:.6f}") for r in self.metrics]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in rows)


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, (StageError, ConfigError)):
            raise StageError(self.name, exc) from exc
        return False


def _relabel(labels: np.ndarray) -> np.ndarray:
    _, inverse = np.unique(labels, return_inverse=True)
    return inverse


def _split(n: int, n_queries: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < n_queries < n:
        raise ConfigError(f"need 0 < queries < {n}, got {n_queries}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_queries]), np.sort(perm[n_queries:])


def dpq_retrieval(model: DpqModel, queries: VectorSet, database: VectorSet) -> dict[str, float]:
    """Symmetric and asymmetric mAP of ``database`` codes against ``queries``."""
    db_codes = encode_many(database.vectors, model)
    trace = forward(queries.vectors, model)
    sym = sym_distance_matrix(trace.kstar, db_codes, build_sym_lut(model.codebook))
    asym = asym_distance_matrix(trace.soft, db_codes, model.codebook)
    return {
        mode: eval_map(RetrievalRun(queries.labels, rankings_from_distances(d), database.labels, mode))
        for mode, d in (("sym", sym), ("asym", asym))
    }


def run_experiment(cfg: ExperimentConfig) -> Report:
    report = Report(config={k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()})
    bits = cfg.M * (cfg.K.bit_length() - 1)

    with _Stage("data"):
        if cfg.input:
            data = read_vectors(cfg.input)
            if data.labels is None:
                raise ConfigError("experiment input must carry labels")
        else:
            data = gen_synthetic(SyntheticSpec(cfg.classes, cfg.dim, cfg.per_class, cfg.spread, cfg.data_seed))

    with _Stage("split"):
        if cfg.mode == "single":
            q_idx, db_idx = _split(len(data), cfg.queries, cfg.seed)
            train_set = data.subset(db_idx)
            queries, database = data.subset(q_idx), train_set
        else:
            in_train = np.isin(data.labels, cfg.train_classes)
            in_eval = np.isin(data.labels, cfg.eval_classes)
            if not in_train.any() or not in_eval.any():
                raise ConfigError("train_classes / eval_classes select no data")
            train_set = data.subset(np.flatnonzero(in_train))
            eval_set = data.subset(np.flatnonzero(in_eval))
            q_idx, db_idx = _split(len(eval_set), cfg.queries, cfg.seed)
            queries, database = eval_set.subset(q_idx), eval_set.subset(db_idx)
        train_labels = _relabel(train_set.labels)
        train_set = VectorSet(train_set.vectors, train_labels)
        num_classes = int(train_labels.max()) + 1

    report.add("compression_ratio", "all", bits, compression_ratio(data.dim, cfg.M, cfg.K))

    if "pq" in cfg.methods:
        with _Stage("train-pq"):
            codebook = pq_train(train_set.vectors, cfg.M, cfg.K, cfg.pq_iters, cfg.seed, cfg.threads)
        with _Stage("eval-pq"):
            db_codes = pq_encode_many(database.vectors, codebook)
            q_codes = pq_encode_many(queries.vectors, codebook)
            report.add("quantization_error", "pq", bits, quantization_error(database.vectors, codebook))
            sym = sym_distance_matrix(q_codes, db_codes, build_sym_lut(codebook))
            asym = asym_distance_matrix(queries.vectors, db_codes, codebook)
            for mode, d in (("sym", sym), ("asym", asym)):
                run = RetrievalRun(queries.labels, rankings_from_distances(d), database.labels, f"pq-{mode}")
                report.add("mAP", f"pq-{mode}", bits, eval_map(run))

    if "dpq" in cfg.methods:
        with _Stage("train-dpq"):
            qcfg = cfg.quantizer(data.dim, num_classes)
            last: dict = {}
            model = train(train_set, qcfg, callback=lambda s: last.update(stats=s))
            stats = last["stats"]
            report.usage["dpq"] = stats.usage.tolist()
            report.add("train_loss", "dpq", bits, stats.terms.total)
            report.add("max_cluster_usage", "dpq", bits, stats.max_usage_fraction)
        with _Stage("eval-dpq"):
            variants = [("dpq", model)]
            if cfg.normalize or cfg.mode == "crossdomain":
                variants.append(("dpq-norm", intra_normalize(model)))
            for tag, m in variants:
                for mode, value in dpq_retrieval(m, queries, database).items():
                    report.add("mAP", f"{tag}-{mode}", bits, value)
            if cfg.mode == "single":
                scores = classify_codes(encode_many(queries.vectors, model), build_class_lut(model))
                report.add("top1", "dpq-hard", bits, topk_accuracy(scores, queries.labels, 1))
                report.add("top5", "dpq-hard", bits, topk_accuracy(scores, queries.labels, min(5, num_classes)))
    return report
