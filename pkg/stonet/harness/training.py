"""
Mini-batch training of an operator network on a record table.

Inputs and targets are normalized with the dataset's stats, batches come
from a seeded `torch.randperm` per epoch, and the loss is the mean squared
error on the normalized rate. The epoch loss is the batch-size weighted mean
of the batch losses.
"""

import csv
from dataclasses import dataclass, field
import logging
import os
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from stonet.autodiff import AdamState, DTYPE, adam_step, backward, ops_forward, zero_grad
from stonet.dataset import NormalizationStats, RecordTable, read_dataset
from stonet.errors import ConfigError, GradientError, TrainingError
from stonet.operator.checkpoint import save_checkpoint
from stonet.operator.networks import OperatorConfig, OperatorNetwork, build_operator
from stonet.utils.config import Config, require
from stonet.utils.rng import derive_seed

logger = logging.getLogger(__name__)

LR_SCHEDULES = ('constant', 'exponential')


@dataclass
class TrainConfig(Config):
    epochs: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    lr_schedule: str = 'constant'
    lr_decay: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0
    dataset: str = ''
    checkpoint_every: int = 0
    log_every: int = 100
    windows: Tuple[int, int] = (20, 100)
    operator: OperatorConfig = field(default_factory=OperatorConfig)

    def validate(self):
        require(self.epochs >= 1, 'epochs must be at least 1')
        require(self.batch_size >= 1, 'batch_size must be at least 1')
        require(self.lr >= 0, 'lr must be non-negative')
        require(self.lr_schedule in LR_SCHEDULES, f'lr_schedule must be one of {LR_SCHEDULES}')
        require(0 < self.lr_decay <= 1, 'lr_decay must be in (0, 1]')
        require(self.checkpoint_every >= 0, 'checkpoint_every must be non-negative')
        require(all(w >= 1 for w in self.windows), 'windows must be positive')


@dataclass
class TrainResult:
    model: OperatorNetwork
    history: List[float]
    optimizer: AdamState

    def final_window(self, width: int) -> float:
        return final_window_loss(self.history, width)


def final_window_loss(history, width: int) -> float:
    """ Mean of the last `width` epoch losses (all of them when fewer). """
    if not len(history):
        return float('nan')
    return float(np.mean(history[-width:]))


def normalized_tensors(model: OperatorNetwork, records: RecordTable,
                       stats: NormalizationStats):
    as_t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=DTYPE)
    c_now = as_t(records.c_now) if model.config.with_concentration else None
    u, x = model.normalize_inputs(as_t(records.u), as_t(records.x), c_now)
    y = as_t(stats.target.normalize(records.target.reshape(-1, 1)))
    return u, x, y


def write_history(path, history: List[float]):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['epoch', 'loss'])
        for epoch, loss in enumerate(history, start=1):
            writer.writerow([epoch, repr(float(loss))])


def train(records: RecordTable, stats: NormalizationStats, config: TrainConfig,
          out_dir=None, model: Optional[OperatorNetwork] = None) -> TrainResult:
    """
    Train an operator network.

    :param records: training records
    :param stats: normalization stats stored with the dataset
    :param config: epochs, batching, Adam and the operator config
    :param out_dir: where `loss_history.csv` and checkpoints go; nothing is
        written when None
    :param model: continue training this model instead of building one
    :raises TrainingError: on a non-finite loss or gradient
    """
    if len(records) == 0:
        raise ConfigError('no training records')
    if config.operator.with_velocity != records.with_velocity:
        raise ConfigError('operator velocity features do not match the dataset columns')
    if model is None:
        model = build_operator(config.operator, stats)
    params = list(model.parameters())
    optimizer = AdamState(params, lr=config.lr, weight_decay=config.weight_decay)
    scheduler = None
    if config.lr_schedule == 'exponential':
        scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer.optimizer, gamma=config.lr_decay)

    u, x, y = normalized_tensors(model, records, stats)
    n = len(records)
    generator = torch.Generator().manual_seed(derive_seed(config.seed, 'shuffle'))
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    history = []
    for epoch in range(1, config.epochs + 1):
        order = torch.randperm(n, generator=generator)
        total = 0.0
        for batch, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss = ops_forward('mse', model(u[idx], x[idx]), y[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError('non-finite loss', epoch, batch)
            zero_grad(params)
            backward(loss, params)
            try:
                adam_step(params, None, optimizer)
            except GradientError as e:
                raise TrainingError(str(e), epoch, batch) from e
            total += value * len(idx)
        if scheduler is not None:
            scheduler.step()
        history.append(total / n)

        if epoch == 1 or epoch % config.log_every == 0 or epoch == config.epochs:
            logger.info('epoch %d/%d: loss %.6e', epoch, config.epochs, history[-1])
        if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0 \
                and epoch != config.epochs:
            save_checkpoint(model, out_dir / 'checkpoint', optimizer, extra={'epoch': epoch})

    if out_dir is not None:
        write_history(out_dir / 'loss_history.csv', history)
        save_checkpoint(model, out_dir / 'checkpoint', optimizer,
                        extra={'epoch': config.epochs,
                               'final_window': {str(w): final_window_loss(history, w)
                                                for w in config.windows}})
    return TrainResult(model=model, history=history, optimizer=optimizer)


def train_from_path(dataset_path, config: TrainConfig, out_dir=None) -> TrainResult:
    records, stats, _ = read_dataset(dataset_path)
    return train(records, stats, config, out_dir)
