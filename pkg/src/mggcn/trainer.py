"""Mini-batch training with Adam, early stopping on validation accuracy, and trials."""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dense
from .data import Dataset, Split, UNLABELED
from .graph import Graph
from .models import Model, ModelParams, make_model
from .sampler import derive_stream

__all__ = ["TrainConfig", "Split", "EpochMetrics", "TrainingDiverged", "ConfigError", "train",
           "evaluate", "run_trials", "TrialSummary"]

# Sub-stream ids under the run seed.
_SHUFFLE, _SAMPLE, _EVAL, _INIT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    hidden_dim: int = 16
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    sample_size: int = 6
    max_epochs: int = 200
    early_stop_window: int = 30
    leaky_slope: float = dense.DEFAULT_SLOPE
    seed: int = 0
    num_layers: int = 2
    sgc_k: int = 2
    sampled_sizes: tuple[int, ...] = (25, 10)

    def __post_init__(self):
        object.__setattr__(self, "sampled_sizes", tuple(int(s) for s in self.sampled_sizes))
        for name in ("batch_size", "hidden_dim", "sample_size", "max_epochs", "early_stop_window",
                     "num_layers", "sgc_k"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 < self.leaky_slope < 1:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if not self.sampled_sizes or min(self.sampled_sizes) < 1:
            raise ConfigError("sampled_sizes must be positive")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampled_sizes"] = list(self.sampled_sizes)
        return d


@dataclass(frozen=True)
class EpochMetrics:
    """One epoch's record. ``involved_embedding_nodes`` is the per-batch maximum."""
    epoch: int
    train_loss: float
    val_accuracy: float
    epoch_seconds: float
    involved_embedding_nodes: int
    optimizer_steps: int = 0


def _labels_for(labels: np.ndarray, ids, what: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= len(labels)):
        raise ValueError(f"{what} ids outside [0, {len(labels)})")
    out = labels[ids]
    if (out == UNLABELED).any():
        bad = int(ids[np.flatnonzero(out == UNLABELED)[0]])
        raise ValueError(f"{what} node {bad} has no label")
    return out


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise ValueError("cannot score an empty id set")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(g: Graph, features, labels, ids, params: ModelParams, model_kind: str,
             config: TrainConfig, model: Model | None = None) -> float:
    """Fraction of ``ids`` whose arg-max logit equals the label.

    Sampled models draw with a seed derived from ``config.seed``, so the
    number is reproducible.
    """
    ids = np.asarray(ids, dtype=np.int64)
    y = _labels_for(np.asarray(labels), ids, "evaluation")
    model = model or make_model(model_kind, g, features, config)
    if params.model != model.name:
        raise ValueError(f"parameters belong to {params.model!r}, not {model.name!r}")
    return accuracy(model.logits(params, ids, derive_stream(config.seed, _EVAL)), y)


def train(g: Graph, features, labels, split: Split, model_kind: str, config: TrainConfig,
          model: Model | None = None, num_classes: int | None = None):
    """Train one model; returns ``(best_params, [EpochMetrics, ...])``.

    Every epoch shuffles the training ids, cuts them into batches, draws fresh
    samples, and takes one Adam step per batch. Training stops after
    ``early_stop_window`` epochs without a new best validation accuracy, and
    the parameters of the best epoch (earliest on ties) are returned.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(split.train) == 0:
        raise ValueError("training split is empty")
    if len(split.val) == 0:
        raise ValueError("validation split is empty; early stopping needs it")
    train_ids = np.asarray(split.train, dtype=np.int64)
    val_ids = np.asarray(split.val, dtype=np.int64)
    train_y = _labels_for(labels, train_ids, "train")
    val_y = _labels_for(labels, val_ids, "validation")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    model = model or make_model(model_kind, g, features, config)

    seed = config.seed
    params = model.init_params(num_classes, np.random.default_rng(derive_stream(seed, _INIT)))
    states = [dense.AdamState.zeros_like(w) for w in params.weights]
    eval_seed = derive_stream(seed, _EVAL)
    label_of = np.full(len(labels), UNLABELED, dtype=np.int64)
    label_of[train_ids] = train_y

    best_params, best_acc, since_best = params.copy(), -1.0, 0
    history: list[EpochMetrics] = []
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        order = np.random.default_rng(derive_stream(seed, _SHUFFLE, epoch)).permutation(train_ids)
        losses, sizes, involved, steps = [], [], 0, 0
        for k in range(0, len(order), config.batch_size):
            batch = order[k:k + config.batch_size]
            loss, grads, n_inv = model.loss_and_grads(params, batch, label_of[batch],
                                                      derive_stream(seed, _SAMPLE, epoch, k))
            if not math.isfinite(loss) or not all(np.all(np.isfinite(gr)) for gr in grads):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, batch offset {k} "
                                       f"(learning_rate={config.learning_rate})")
            new_weights = []
            for i, (w, gr) in enumerate(zip(params.weights, grads)):
                w2, states[i] = dense.adam_step(w, gr, states[i], config.learning_rate,
                                                config.weight_decay)
                new_weights.append(w2)
            params = replace(params, weights=new_weights)
            losses.append(loss)
            sizes.append(len(batch))
            involved = max(involved, int(n_inv))
            steps += 1
        val_acc = accuracy(model.logits(params, val_ids, eval_seed), val_y)
        elapsed = time.perf_counter() - start
        history.append(EpochMetrics(epoch, float(np.average(losses, weights=sizes)), val_acc,
                                    elapsed, involved, steps))
        if val_acc > best_acc:
            best_params, best_acc, since_best = params.copy(), val_acc, 0
        else:
            since_best += 1
            if since_best >= config.early_stop_window:
                break
    return best_params, history


@dataclass
class TrialResult:
    seed: int
    test_accuracy: float
    best_epoch: int
    best_val_accuracy: float
    metrics: list[EpochMetrics]
    params: ModelParams
    seconds: float


@dataclass
class TrialSummary:
    model: str
    config: TrainConfig
    trials: list[TrialResult] = field(default_factory=list)
    total_seconds: float = 0.0

    @property
    def accuracies(self) -> list[float]:
        return [t.test_accuracy for t in self.trials]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        # Sample standard deviation; a single trial reports 0.
        return float(np.std(self.accuracies, ddof=1)) if len(self.trials) > 1 else 0.0

    def best_trial(self) -> TrialResult:
        return max(self.trials, key=lambda t: (t.best_val_accuracy, -t.seed))

    def to_dict(self) -> dict:
        return {"model": self.model, "config": self.config.to_dict(), "num_trials": len(self.trials),
                "mean_accuracy": self.mean, "std_accuracy": self.std,
                "accuracies": self.accuracies, "seeds": [t.seed for t in self.trials],
                "best_epochs": [t.best_epoch for t in self.trials],
                "total_seconds": self.total_seconds}


def run_trials(ds: Dataset, model_kind: str, config: TrainConfig, num_trials: int,
               base_seed: int | None = None) -> TrialSummary:
    """Independent train+test runs with seeds ``base_seed .. base_seed+num_trials-1``.

    Test accuracy is taken with the best-validation parameters of each run.
    """
    if num_trials < 1:
        raise ConfigError("num_trials must be >= 1")
    base = config.seed if base_seed is None else int(base_seed)
    model = make_model(model_kind, ds.graph, ds.features, config)
    summary = TrialSummary(model_kind, config)
    start = time.perf_counter()
    for i in range(num_trials):
        t0 = time.perf_counter()
        cfg = config.with_seed(base + i)
        params, history = train(ds.graph, ds.features, ds.labels, ds.split, model_kind, cfg,
                                model=model, num_classes=ds.num_classes)
        best = max(history, key=lambda m: (m.val_accuracy, -m.epoch))
        acc = evaluate(ds.graph, ds.features, ds.labels, ds.split.test, params, model_kind, cfg,
                       model=model) if ds.split.test else float("nan")
        summary.trials.append(TrialResult(cfg.seed, acc, best.epoch, best.val_accuracy, history,
                                          params, time.perf_counter() - t0))
    summary.total_seconds = time.perf_counter() - start
    return summary


# ---------------------------------------------------------------- writers

def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows) -> str:
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_metrics_csv(path, summary: TrialSummary, trials: Sequence[TrialResult] | None = None) -> None:
    """Deterministic per-epoch metrics; wall-clock times go to :func:`write_timing_csv`.

    ``trials`` defaults to every trial of the summary.
    """
    trials = summary.trials if trials is None else trials
    rows = [(t.seed, m.epoch, repr(m.train_loss), repr(m.val_accuracy), m.involved_embedding_nodes)
            for t in trials for m in t.metrics]
    atomic_write_text(path, _csv_text(("trial_seed", "epoch", "train_loss", "val_accuracy",
                                       "involved_nodes"), rows))


def write_timing_csv(path, summary: TrialSummary) -> None:
    rows = [(t.seed, m.epoch, f"{m.epoch_seconds:.6f}") for t in summary.trials for m in t.metrics]
    atomic_write_text(path, _csv_text(("trial_seed", "epoch", "epoch_seconds"), rows))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
