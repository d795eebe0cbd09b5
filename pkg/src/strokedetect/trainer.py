"""Mini-batch SGD training with Nesterov momentum and best-epoch selection."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as net
from .dataset import epoch_iterator, stack_batch
from .errors import DivergenceError
from .tensor_core import OptimState, sgd_nesterov_step, softmax_cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    lr: float = 0.001
    batch_size: int = 10
    weight_decay: float = 0.005
    momentum: float = 0.5
    shuffle: bool = True
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs, batch_size and eval_every must be >= 1")
        if min(self.lr, self.weight_decay, self.momentum) < 0:
            raise ValueError("lr, weight_decay and momentum must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float | None  # None on epochs without validation


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = -1

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
            for r in self.records:
                val = "" if r.val_acc is None else repr(r.val_acc)
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), val])


def predict_labels(params, samples, batch_size=10):
    labels = []
    for i in range(0, len(samples), batch_size):
        rgb, flow, _ = stack_batch(samples[i:i + batch_size])
        logits, _ = net.forward(params, rgb, flow)
        # argmax ties resolve to class 0
        labels.append(np.argmax(logits, axis=1))
    return np.concatenate(labels) if labels else np.empty(0, dtype=np.intp)


def evaluate_classification(params, samples, batch_size=10):
    """Fraction of samples whose argmax logit equals the label."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample set")
    pred = predict_labels(params, samples, batch_size)
    truth = np.array([s.label for s in samples])
    return float(np.mean(pred == truth))


def batch_gradients(params, batch):
    """Mean loss, number correct and mean parameter gradients over one batch."""
    rgb, flow, labels = stack_batch(batch)
    logits, cache = net.forward(params, rgb, flow)
    losses, g_logits = softmax_cross_entropy(logits, labels)
    grads = net.backward(params, cache, g_logits / len(batch))
    correct = int(np.sum(np.argmax(logits, axis=1) == labels))
    return float(np.mean(losses)), correct, grads


def train(model_cfg, train_samples, val_samples, cfg, params=None, on_epoch=None):
    """Train and return ``(best_params, history)``.

    The best parameters are those after the epoch with the highest
    validation accuracy (earliest epoch on ties); without validation data
    the final parameters are returned.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    params = net.init_params(model_cfg) if params is None else dict(params)
    state = OptimState.zeros_like(params)
    history = TrainHistory()
    best_params, best_acc = params, -1.0

    for epoch in range(cfg.epochs):
        loss_sum, correct = 0.0, 0
        batches = epoch_iterator(train_samples, cfg.batch_size, cfg.seed, cfg.shuffle, epoch)
        for b, batch in enumerate(batches):
            loss, n_ok, grads = batch_gradients(params, batch)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            loss_sum += loss * len(batch)
            correct += n_ok
            params, state = sgd_nesterov_step(params, grads, state, cfg.lr, cfg.momentum, cfg.weight_decay)

        val_acc = None
        if val_samples and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            val_acc = evaluate_classification(params, val_samples, cfg.batch_size)
            if val_acc > best_acc:
                best_acc, best_params = val_acc, params
                history.best_epoch = epoch
        rec = EpochRecord(epoch, loss_sum / len(train_samples), correct / len(train_samples), val_acc)
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)

    if not val_samples:
        best_params, history.best_epoch = params, cfg.epochs - 1
    return best_params, history
