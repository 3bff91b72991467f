"""The recombinant training loop: per-epoch grammar sampling plus plain SGD
ascent on the marginalized log-likelihood, with a stepwise-halved learning
rate."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import scfg
from .neural import clip_gradients, sequence_log_likelihood, sgd_ascent_step
from .streams import substream


class TrainingError(Exception):
    pass


class TrainingDivergedError(TrainingError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    initial_lr: float = 0.1
    halve_every: int = 5
    halve_start_epoch: int = 15
    recombinant_per_epoch: int = None  # None means |D| when a grammar is given
    rng_seed: int = 0
    grad_clip: float = 5.0  # None disables clipping
    max_derivation_depth: int = 20

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.initial_lr <= 0:
            raise TrainingError("initial_lr must be positive")


def learning_rate(epoch, config):
    """Rate for 1-based `epoch`: halved every `halve_every` epochs starting
    after `halve_start_epoch` (defaults: halvings at 16, 21, 26)."""
    if not 1 <= epoch <= config.epochs:
        raise TrainingError("epoch %d outside 1..%d" % (epoch, config.epochs))
    halvings = max(0, (epoch - 1 - config.halve_start_epoch) // config.halve_every + 1)
    return config.initial_lr * 2.0 ** (-halvings)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    mean_train_loglik: float
    seconds: float


def write_metrics_csv(metrics, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,lr,mean_train_loglik,seconds\n")
        for row in metrics:
            f.write("%d,%.10g,%.10g,%.3f\n"
                    % (row.epoch, row.lr, row.mean_train_loglik, row.seconds))


def train(dataset, grammar, model, config, on_epoch=None):
    """Train `model` in place; returns per-epoch metrics.

    Each epoch trains on the base examples plus `recombinant_per_epoch`
    freshly sampled recombinant examples (resampled every epoch), shuffled.
    With grammar=None this is the plain no-recombination baseline.
    """
    base = list(dataset.examples)
    n_recombinant = 0
    if grammar is not None:
        grammar.check()
        n_recombinant = (config.recombinant_per_epoch
                         if config.recombinant_per_epoch is not None else len(base))
    sample_rng = substream(config.rng_seed, "grammar-sampling")
    shuffle_rng = substream(config.rng_seed, "shuffle")

    metrics = []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        lr = learning_rate(epoch, config)
        epoch_data = list(base)
        for _ in range(n_recombinant):
            epoch_data.append(scfg.sample_example(
                grammar, sample_rng, max_depth=config.max_derivation_depth))
        order = shuffle_rng.permutation(len(epoch_data))
        total_ll = 0.0
        for idx in order:
            ll, grads = sequence_log_likelihood(model, epoch_data[idx])
            if not np.isfinite(ll):
                raise TrainingDivergedError(
                    "non-finite log-likelihood at epoch %d" % epoch)
            clip_gradients(grads, config.grad_clip)
            sgd_ascent_step(model.params, grads, lr)
            total_ll += ll
        row = EpochMetrics(epoch, lr, total_ll / len(epoch_data),
                           time.perf_counter() - start)
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(row, model)
    return metrics
