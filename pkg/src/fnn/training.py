"""Losses, SGD, metrics and the epoch loop for FNN classifiers."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .backprop import GradientSet, cc_gradients, ldos_gradients
from .greens import EvaluationPoint, cc_output, ldos_output, recursive_forward
from .model import FnnParameters, InputEncoding, assemble

log = logging.getLogger(__name__)

HEADS = ("ldos", "cc")
LOSSES = ("cross_entropy", "mean_square")
CC_CLAMP = 1e-12


@dataclass
class TrainConfig:
    """Hyperparameters of the SGD loop; defaults follow the MNIST recipe."""

    learning_rate: float = 0.005
    weight_decay: float = 0.001
    broadening: float = 0.005
    energy: float = 0.0
    batch_size: int = 10
    epochs: int = 10
    seed: int = 0
    head: str = "ldos"
    loss: str = "cross_entropy"
    track_train_accuracy: bool = False
    output_scale: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        if not self.broadening > 0:
            raise ValueError("broadening must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")
        if not self.output_scale > 0:
            raise ValueError("output scale must be positive")
        if self.head not in HEADS or self.loss not in LOSSES:
            raise ValueError(f"unknown head/loss {self.head!r}/{self.loss!r}")


def softmax(y: np.ndarray) -> np.ndarray:
    e = np.exp(y - np.max(y))
    return e / e.sum()


def cc_probability(y: float, y0: float) -> float:
    """Ratio map s = y / (y + y0) of a non-negative conductance."""
    return float(y / (y + y0))


def loss_and_grad_seed(y, target, *, loss: str = "cross_entropy", head: str = "ldos",
                       y0: Optional[float] = None, scale: float = 1.0):
    """Loss value and dL/dy for one sample.

    LDOS head: ``target`` is a class index (or a target vector for the
    mean-square loss); cross-entropy acts on the logits ``scale * y``.
    CC head: ``target`` is 0 or 1 and ``y0`` the scale of the ratio map; the
    loss is binary cross-entropy on the clamped map.
    """
    if head == "cc":
        if y0 is None or y0 <= 0:
            raise ValueError("CC loss needs a positive scale y0")
        if target not in (0, 1):
            raise ValueError("CC target must be 0 or 1")
        y = float(y)
        s = cc_probability(y, y0)
        ds = y0 / (y + y0) ** 2
        if s < CC_CLAMP or s > 1 - CC_CLAMP:
            s, ds = min(max(s, CC_CLAMP), 1 - CC_CLAMP), 0.0
        value = -np.log(s) if target == 1 else -np.log1p(-s)
        dval = -1.0 / s if target == 1 else 1.0 / (1.0 - s)
        return float(value), float(dval * ds)
    y = np.asarray(y, dtype=float)
    if np.ndim(target) == 0:
        k = int(target)
        if not 0 <= k < y.size:
            raise ValueError(f"class index {k} out of range for {y.size} outputs")
        y_tar = np.zeros_like(y)
        y_tar[k] = 1.0
    else:
        y_tar = np.asarray(target, dtype=float)
        if loss == "cross_entropy":
            raise ValueError("cross-entropy needs a class index")
    if loss == "mean_square":
        diff = y - y_tar
        return float(0.5 * diff @ diff), diff
    p = softmax(scale * y)
    return float(-np.log(max(p[k], 1e-300))), scale * (p - y_tar)


def sgd_step(params: FnnParameters, grads: GradientSet, config) -> FnnParameters:
    """p <- p - eta (dL/dp + lambda p) on every free, masked-in parameter."""
    eta, lam = config.learning_rate, config.weight_decay
    out = params.copy()
    for l, (h, m) in enumerate(zip(out.intra, out.intra_masks), start=1):
        g = grads.intra[l] if grads.intra[l] is not None else 0.0
        h -= eta * np.where(m, g + lam * h, 0.0)
        np.fill_diagonal(h, h.diagonal().real)
    for l, (t, m) in enumerate(zip(out.inter, out.inter_masks)):
        t -= eta * np.where(m, grads.inter[l] + lam * t, 0.0)
    return out


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counting one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def macro_auroc(probs: np.ndarray, labels) -> float:
    """One-vs-rest AUROC averaged over classes present in ``labels``."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape[1] == 2:
        return auroc(probs[:, 1], labels == 1)
    vals = [auroc(probs[:, k], labels == k) for k in range(probs.shape[1])
            if 0 < np.sum(labels == k) < len(labels)]
    if not vals:
        raise ValueError("AUROC needs both classes")
    return float(np.mean(vals))


class RetardedEvaluator:
    """Forward/backward of a non-interacting FNN at a single retarded energy."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.point = EvaluationPoint.retarded(config.energy, config.broadening)

    def forward(self, params: FnnParameters, encoding: InputEncoding, *, retain: bool = False):
        system = assemble(params, encoding, z=self.point.z)
        cache = recursive_forward(system, self.point, with_corner=self.config.head == "cc",
                                  retain=retain)
        y = cc_output(cache) if self.config.head == "cc" else ldos_output(cache)
        return y, cache

    def backward(self, cache, loss_grad) -> GradientSet:
        if self.config.head == "cc":
            return cc_gradients(cache, loss_grad)
        return ldos_gradients(cache, loss_grad)


@dataclass
class Metrics:
    """Per-epoch history; each record carries epoch, loss, accuracy and auroc."""

    history: list = field(default_factory=list)

    @property
    def best(self) -> dict:
        return max(self.history, key=lambda r: (r["accuracy"], -r["epoch"]))

    def last(self) -> dict:
        return self.history[-1]


@dataclass
class TrainResult:
    params: FnnParameters
    final_params: FnnParameters
    metrics: Metrics
    best_epoch: int
    skipped: list = field(default_factory=list)


class SampleSkipped(RuntimeError):
    """Raised by an evaluator when a sample cannot be evaluated (e.g. DMFT failure)."""


def _scores(ys, head: str, y0: Optional[float], scale: float = 1.0):
    if head == "cc":
        s = np.array([cc_probability(float(y), y0) for y in ys])
        return s, (s > 0.5).astype(int)
    probs = np.array([softmax(scale * np.asarray(y)) for y in ys])
    return probs, probs.argmax(axis=1)


def predict(params: FnnParameters, samples: Sequence, config: TrainConfig, evaluator=None):
    """Raw outputs, scores and predicted labels; skipped samples are dropped."""
    evaluator = evaluator or RetardedEvaluator(config)
    ys, kept = [], []
    for i, (enc, _) in enumerate(samples):
        try:
            ys.append(evaluator.forward(params, enc)[0])
            kept.append(i)
        except SampleSkipped as exc:
            log.warning("prediction skipped sample %d: %s", i, exc)
    scores, pred = _scores(ys, config.head, params.metadata.get("y0"), config.output_scale)
    return ys, scores, pred, kept


def score_predictions(scores, pred, labels, head: str) -> dict:
    """Accuracy and AUROC from ``predict`` outputs (AUROC is NaN for one class)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return {"accuracy": float("nan"), "auroc": float("nan"), "count": 0}
    accuracy = float(np.mean(pred == labels))
    try:
        score = auroc(scores, labels == 1) if head == "cc" else macro_auroc(scores, labels)
    except ValueError:
        score = float("nan")
    return {"accuracy": accuracy, "auroc": score, "count": int(len(labels))}


def evaluate(params: FnnParameters, samples: Sequence, config: TrainConfig, evaluator=None) -> dict:
    """Accuracy and AUROC on labelled samples."""
    ys, scores, pred, kept = predict(params, samples, config, evaluator)
    return score_predictions(scores, pred, [samples[i][1] for i in kept], config.head)


def batch_gradient(params: FnnParameters, batch: Sequence, config: TrainConfig, evaluator):
    """Mean loss and mean gradient over a batch; returns also the skipped indices."""
    total, grads, count, skipped = 0.0, None, 0, []
    y0 = params.metadata.get("y0")
    for idx, (enc, target) in batch:
        try:
            y, cache = evaluator.forward(params, enc, retain=True)
        except SampleSkipped as exc:
            skipped.append((idx, str(exc)))
            continue
        value, seed = loss_and_grad_seed(y, target, loss=config.loss, head=config.head, y0=y0,
                                         scale=config.output_scale)
        g = evaluator.backward(cache, seed)
        total += value
        grads = g if grads is None else grads + g
        count += 1
    if count == 0:
        return float("nan"), None, skipped
    return total / count, grads.scaled(1.0 / count), skipped


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def timing_path(metrics_path) -> Path:
    """Wall-clock times live beside the metrics so reruns leave metrics byte-identical."""
    metrics_path = Path(metrics_path)
    return metrics_path.with_name(metrics_path.stem + ".timing.jsonl")


def train(params: FnnParameters, train_set: Sequence, test_set: Sequence, config: TrainConfig, *,
          evaluator=None, metrics_path=None,
          on_batch: Optional[Callable] = None, on_epoch: Optional[Callable] = None) -> TrainResult:
    """Shuffled mini-batch SGD; keeps the parameters with the best test accuracy.

    ``train_set`` and ``test_set`` hold (InputEncoding, label) pairs.  For the
    CC head the ratio-map scale y0 is fixed to the median output over the first
    batch and stored in the parameter metadata.  ``on_batch(epoch, step,
    grads)`` and ``on_epoch(record, params)`` are optional hooks.  Records go
    to ``metrics_path`` as JSON lines; wall times go to ``timing_path``.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    evaluator = evaluator or RetardedEvaluator(config)
    rng = np.random.default_rng(config.seed)
    params = params.copy()
    params.metadata.update(head=config.head, energy=config.energy, broadening=config.broadening,
                           output_scale=config.output_scale)
    if config.head == "cc" and "y0" not in params.metadata:
        first = rng.permutation(len(train_set))[:config.batch_size]
        ys = [float(evaluator.forward(params, train_set[i][0])[0]) for i in first]
        params.metadata["y0"] = float(np.median(ys)) or 1e-12
    sink = timing = None
    if metrics_path is not None:
        metrics_path = Path(metrics_path)
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        sink = open(metrics_path, "w")
        timing = open(timing_path(metrics_path), "w")
    metrics = Metrics()
    best, best_acc, best_epoch = params.copy(), -1.0, 0
    skipped_all = []
    start = time.perf_counter()
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train_set))
            losses = []
            for step, lo in enumerate(range(0, len(order), config.batch_size)):
                batch = [(int(i), train_set[int(i)]) for i in order[lo:lo + config.batch_size]]
                loss, grads, skipped = batch_gradient(params, batch, config, evaluator)
                for idx, reason in skipped:
                    log.warning("epoch %d: skipped training sample %d (%s)", epoch, idx, reason)
                skipped_all.extend((epoch, idx) for idx, _ in skipped)
                if grads is None:
                    continue
                if on_batch is not None:
                    on_batch(epoch, step, grads)
                params = sgd_step(params, grads, config)
                losses.append(loss)
            test = evaluate(params, test_set, config, evaluator) if len(test_set) else {}
            record = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else float("nan"),
                      "accuracy": test.get("accuracy", float("nan")),
                      "auroc": test.get("auroc", float("nan"))}
            if config.track_train_accuracy:
                record["train_accuracy"] = evaluate(params, train_set, config, evaluator)["accuracy"]
            metrics.history.append(record)
            if sink is not None:
                sink.write(json.dumps(record, default=_json_default) + "\n")
                sink.flush()
                timing.write(json.dumps({"epoch": epoch, "wall_time": time.perf_counter() - start}) + "\n")
                timing.flush()
            acc = record["accuracy"] if np.isfinite(record["accuracy"]) else record.get("train_accuracy", -1.0)
            if acc > best_acc:
                best, best_acc, best_epoch = params.copy(), acc, epoch
            if on_epoch is not None:
                on_epoch(record, params)
            log.info("epoch %d loss %.4f acc %.4f auroc %.4f", epoch, record["loss"],
                     record["accuracy"], record["auroc"])
    finally:
        if sink is not None:
            sink.close()
            timing.close()
    if config.epochs == 0:
        best = params.copy()
    best.metadata.update(best_epoch=best_epoch)
    return TrainResult(params=best, final_params=params, metrics=metrics,
                       best_epoch=best_epoch, skipped=skipped_all)


def config_dict(config) -> dict:
    return asdict(config)
