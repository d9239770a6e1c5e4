"""
Hyper-parameter sweeps over operator architectures.

A sweep trains every combination of architecture, width, depth (branch and
trunk alike), root depth and attention blocks for a fixed epoch budget and
tabulates the parameter count and final-window training losses. Entries run
in worker processes; results are keyed by a hash of the entry's config, so
the table does not depend on completion order. A failed entry is recorded
with its error and the sweep goes on.
"""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass
import hashlib
import itertools
import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from stonet.dataset import read_dataset
from stonet.harness.training import TrainConfig, final_window_loss, train
from stonet.operator.networks import ARCHITECTURES, OperatorConfig, parameter_count
from stonet.utils.config import Config, require

logger = logging.getLogger(__name__)

CSV_COLUMNS = ('config_hash', 'arch', 'width', 'depth', 'root_depth', 'blocks', 'params',
               'loss_w20', 'loss_w100', 'status', 'error')


@dataclass
class SweepSpec(Config):
    archs: Tuple[str, ...] = ('stonet', 'endeeponet')
    widths: Tuple[int, ...] = (50, 100)
    depths: Tuple[int, ...] = (4, 8, 12)
    root_depths: Tuple[int, ...] = (4, 8, 12)
    blocks: Tuple[int, ...] = (4, 8)
    epochs: int = 500

    def validate(self):
        for name in ('archs', 'widths', 'depths', 'root_depths', 'blocks'):
            require(len(getattr(self, name)) > 0, f'sweep grid {name} is empty')
        require(all(a in ARCHITECTURES for a in self.archs), f'archs must be in {ARCHITECTURES}')
        require(self.epochs >= 1, 'epochs must be at least 1')


def config_hash(config: OperatorConfig) -> str:
    text = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def enumerate_configs(spec: SweepSpec, base: OperatorConfig = None) -> List[OperatorConfig]:
    """
    Every combination of the grid. Attention blocks only apply to STONet, so
    other architectures appear once per (width, depth, root depth).
    """
    base = base or OperatorConfig()
    configs, seen = [], set()
    for arch, width, depth, root, blocks in itertools.product(
            spec.archs, spec.widths, spec.depths, spec.root_depths, spec.blocks):
        if arch != 'stonet':
            blocks = 0
        config = base.merged({'arch': arch, 'width': width, 'branch_depth': depth,
                              'trunk_depth': depth, 'root_depth': root, 'blocks': blocks})
        key = config_hash(config)
        if key not in seen:
            seen.add(key)
            configs.append(config)
    return configs


@dataclass
class SweepEntry:
    config: OperatorConfig
    params: int
    loss_w20: float = float('nan')
    loss_w100: float = float('nan')
    status: str = 'ok'
    error: str = ''

    @property
    def key(self) -> str:
        return config_hash(self.config)

    def row(self) -> Dict:
        c = self.config
        return {'config_hash': self.key, 'arch': c.arch, 'width': c.width, 'depth': c.branch_depth,
                'root_depth': c.root_depth, 'blocks': c.blocks, 'params': self.params,
                'loss_w20': repr(self.loss_w20), 'loss_w100': repr(self.loss_w100),
                'status': self.status, 'error': self.error}


_records = None


def _load_dataset(dataset_path: str):
    global _records
    _records = read_dataset(dataset_path)


def _run_entry(args) -> SweepEntry:
    config, train_config = args
    records, stats, _ = _records
    entry = SweepEntry(config=config, params=parameter_count(config))
    try:
        result = train(records, stats, train_config.merged({'operator': config.to_dict()}))
        entry.loss_w20 = final_window_loss(result.history, 20)
        entry.loss_w100 = final_window_loss(result.history, 100)
    except Exception as e:
        logger.warning('sweep entry %s (%s) failed: %s', entry.key, config.arch, e)
        entry.status = 'failed'
        entry.error = f'{type(e).__name__}: {e}'
    return entry


def sweep(spec: SweepSpec, dataset_path, train_config: TrainConfig = None, out_dir=None,
          jobs: int = 1) -> List[SweepEntry]:
    """
    Train every grid entry and return the entries sorted by parameter count
    (ties by config hash). Writes `sweep.csv` to `out_dir` when given.
    """
    train_config = (train_config or TrainConfig()).merged({'epochs': spec.epochs})
    configs = enumerate_configs(spec, train_config.operator)
    work = [(c, train_config) for c in configs]
    logger.info('sweep: %d configurations, %d epochs each, %d worker(s)', len(work), spec.epochs, jobs)

    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_load_dataset,
                                 initargs=(str(dataset_path),)) as pool:
            entries = list(pool.map(_run_entry, work))
    else:
        _load_dataset(str(dataset_path))
        entries = [_run_entry(w) for w in work]

    entries = sorted(entries, key=lambda e: (e.params, e.key))
    if out_dir is not None:
        write_sweep(entries, Path(out_dir) / 'sweep.csv')
    return entries


def write_sweep(entries: Sequence[SweepEntry], path) -> Path:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for entry in entries:
            writer.writerow(entry.row())
    return path


def read_sweep(path) -> List[Dict]:
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def matched_pairs(entries: Sequence[SweepEntry]) -> List[Tuple[SweepEntry, SweepEntry]]:
    """ (stonet, endeeponet) pairs sharing width, depth and root depth. """
    baseline = {(e.config.width, e.config.branch_depth, e.config.root_depth): e
                for e in entries if e.config.arch == 'endeeponet' and e.status == 'ok'}
    pairs = []
    for e in entries:
        if e.config.arch != 'stonet' or e.status != 'ok':
            continue
        other = baseline.get((e.config.width, e.config.branch_depth, e.config.root_depth))
        if other is not None:
            pairs.append((e, other))
    return pairs


def stonet_win_fraction(entries: Sequence[SweepEntry], window: str = 'loss_w20') -> float:
    pairs = matched_pairs(entries)
    if not pairs:
        return float('nan')
    wins = [getattr(s, window) <= getattr(b, window) for s, b in pairs]
    return float(np.mean(wins))
