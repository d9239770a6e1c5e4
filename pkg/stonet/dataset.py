"""
Training records built from simulation snapshots.

A record is one (node, snapshot) pair of one scenario:

    u       branch features  kxx, kyy, kxy at the node (m^2), dp (Pa)
            [, vx, vy (m/s) when velocity features are on]
    x       trunk query      node x (m), node y (m), snapshot time t_k (h)
    c_now   mass fraction at the node at t_{k-1}
    target  backward-difference rate (c(t_k) - c(t_{k-1})) / (t_k - t_{k-1}) (1/h)

Records are stored as one float64 matrix, one row per record, with three
bookkeeping columns (scenario index, node, snapshot) in front. The column
list is written to `manifest.json`, so the stride of `records.bin` is
self-describing.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import os
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from stonet._version import __version__
from stonet.errors import DatasetFormatError, StonetError
from stonet.scenario import PermeabilityField
from stonet.simulator.grid import Grid
from stonet.simulator.run import TimeSeries
from stonet.simulator.store import read_snapshots
from stonet.utils.arrayio import DTYPE, read_json, write_json
from stonet.utils.config import Config, require
from stonet.utils.rng import stream

logger = logging.getLogger(__name__)

STD_GUARD = 1e-12
CONCENTRATION_FLOOR = 1e-3

KEY_COLUMNS = ('scenario', 'node', 'snapshot')
PERMEABILITY_COLUMNS = ('kxx', 'kyy', 'kxy', 'dp')
VELOCITY_COLUMNS = ('vx', 'vy')
TRUNK_COLUMNS = ('x', 'y', 't')
TAIL_COLUMNS = ('c_now', 'target')


@dataclass
class SamplingConfig(Config):
    n_dense: int = 1000
    n_uniform: int = 500
    floor: float = CONCENTRATION_FLOOR
    seed: int = 0
    with_velocity: bool = False
    redraw_per_epoch: bool = False

    def validate(self):
        require(self.n_dense >= 0 and self.n_uniform >= 0, 'sample counts must be non-negative')
        require(self.n_dense + self.n_uniform > 0, 'at least one point per snapshot is needed')
        require(self.floor > 0, 'floor must be positive')
        require(not self.redraw_per_epoch, 'redrawing points per epoch is not implemented')


@dataclass(frozen=True)
class TrainingRecord:
    u: np.ndarray
    x: np.ndarray
    c_now: float
    target: float
    scenario: int = -1
    node: int = -1
    snapshot: int = -1


def columns_for(with_velocity: bool) -> Tuple[str, ...]:
    branch = PERMEABILITY_COLUMNS + (VELOCITY_COLUMNS if with_velocity else ())
    return KEY_COLUMNS + branch + TRUNK_COLUMNS + TAIL_COLUMNS


class RecordTable:
    """ A sequence of `TrainingRecord`s backed by one (n, stride) matrix. """

    def __init__(self, data: np.ndarray, columns: Sequence[str]):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(columns):
            raise DatasetFormatError(f'record matrix of shape {data.shape} does not match {len(columns)} columns')
        self.data = data
        self.columns = tuple(columns)
        self._index = {name: i for i, name in enumerate(self.columns)}

    @property
    def branch_columns(self) -> Tuple[str, ...]:
        return tuple(c for c in self.columns
                     if c in PERMEABILITY_COLUMNS or c in VELOCITY_COLUMNS)

    @property
    def with_velocity(self) -> bool:
        return 'vx' in self._index

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self._index[name]]

    def select(self, names: Sequence[str]) -> np.ndarray:
        return self.data[:, [self._index[n] for n in names]]

    @property
    def u(self) -> np.ndarray:
        return self.select(self.branch_columns)

    @property
    def x(self) -> np.ndarray:
        return self.select(TRUNK_COLUMNS)

    @property
    def c_now(self) -> np.ndarray:
        return self.column('c_now')

    @property
    def target(self) -> np.ndarray:
        return self.column('target')

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i: int) -> TrainingRecord:
        row = self.data[i]
        return TrainingRecord(
            u=row[[self._index[n] for n in self.branch_columns]],
            x=row[[self._index[n] for n in TRUNK_COLUMNS]],
            c_now=float(row[self._index['c_now']]),
            target=float(row[self._index['target']]),
            scenario=int(row[0]), node=int(row[1]), snapshot=int(row[2]))

    def __iter__(self) -> Iterator[TrainingRecord]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def concatenate(cls, tables: Sequence['RecordTable']) -> 'RecordTable':
        columns = tables[0].columns
        if any(t.columns != columns for t in tables):
            raise DatasetFormatError('cannot concatenate record tables with different columns')
        return cls(np.concatenate([t.data for t in tables]), columns)


@dataclass
class FeatureStats:
    names: List[str]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def of(cls, names: Sequence[str], values: np.ndarray) -> 'FeatureStats':
        values = values.reshape(len(values), -1)
        return cls(list(names), values.mean(axis=0),
                   np.maximum(values.std(axis=0), STD_GUARD))

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_dict(self) -> Dict:
        return {'names': list(self.names), 'mean': self.mean.tolist(), 'std': self.std.tolist()}

    @classmethod
    def from_dict(cls, d: Dict) -> 'FeatureStats':
        return cls(list(d['names']), np.array(d['mean'], dtype=float),
                   np.array(d['std'], dtype=float))


@dataclass
class NormalizationStats:
    branch: FeatureStats
    trunk: FeatureStats
    concentration: FeatureStats
    target: FeatureStats

    GROUPS = ('branch', 'trunk', 'concentration', 'target')

    @classmethod
    def of(cls, table: RecordTable) -> 'NormalizationStats':
        return cls(branch=FeatureStats.of(table.branch_columns, table.u),
                   trunk=FeatureStats.of(TRUNK_COLUMNS, table.x),
                   concentration=FeatureStats.of(('c_now',), table.c_now),
                   target=FeatureStats.of(('target',), table.target))

    def to_dict(self) -> Dict:
        return {g: getattr(self, g).to_dict() for g in self.GROUPS}

    @classmethod
    def from_dict(cls, d: Dict) -> 'NormalizationStats':
        missing = [g for g in cls.GROUPS if g not in d]
        if missing:
            raise DatasetFormatError(f'normalization stats missing {missing}')
        return cls(**{g: FeatureStats.from_dict(d[g]) for g in cls.GROUPS})


@dataclass
class DatasetManifest:
    train_ids: List[int]
    test_ids: List[int] = field(default_factory=list)
    points_per_snapshot: Tuple[int, int] = (1000, 500)
    seed: int = 0
    with_velocity: bool = False
    grid: Dict = field(default_factory=dict)

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise StonetError(f'train and test scenarios overlap: {sorted(overlap)}')

    @property
    def n_scenarios(self) -> int:
        return len(self.train_ids) + len(self.test_ids)


def concentration_rate(series: TimeSeries) -> np.ndarray:
    """
    Backward-difference concentration rates in 1/h.

    :return: (K - 1, n_nodes); row k - 1 holds the rate at snapshot k
    """
    if len(series) < 2:
        raise StonetError(f'need at least two snapshots for a rate, got {len(series)}')
    dt = np.diff(series.times_h)
    return np.diff(series.c, axis=0) / dt[:, None]


def importance_sample(c_snapshot: np.ndarray, n_dense: int = 1000, n_uniform: int = 500,
                      rng: np.random.Generator = None,
                      floor: float = CONCENTRATION_FLOOR) -> np.ndarray:
    """
    Pick `n_dense` nodes with probability proportional to c + floor, then
    `n_uniform` more uniformly among the rest, all without replacement.

    :return: sorted node indices, length n_dense + n_uniform
    """
    n = len(c_snapshot)
    if n_dense + n_uniform > n:
        raise StonetError(f'cannot sample {n_dense} + {n_uniform} points from {n} nodes')
    rng = rng or np.random.default_rng()
    weight = np.clip(c_snapshot, 0.0, None) + floor
    dense = rng.choice(n, size=n_dense, replace=False, p=weight / weight.sum())
    remaining = np.setdiff1d(np.arange(n), dense, assume_unique=True)
    uniform = rng.choice(remaining, size=n_uniform, replace=False)
    return np.sort(np.concatenate([dense, uniform]))


def nodal_permeability(k_field: PermeabilityField, grid: Grid) -> np.ndarray:
    """ (n_nodes, 3) area-weighted average of the surrounding quadrature values. """
    return grid.quad_to_node @ k_field.as_array()


def build_records(series: TimeSeries, k_field: PermeabilityField, delta_p: float,
                  samples: Sequence[np.ndarray], grid: Grid,
                  scenario_index: int = 0, with_velocity: bool = False) -> RecordTable:
    """
    :param samples: node indices per snapshot; `samples[k]` is used for
        target snapshot k >= 1, `samples[0]` is ignored
    """
    rates = concentration_rate(series)
    k_nodes = nodal_permeability(k_field, grid)
    columns = columns_for(with_velocity)
    blocks = []
    for k in range(1, len(series)):
        nodes = np.asarray(samples[k])
        n = len(nodes)
        parts = [
            np.full(n, scenario_index, dtype=float), nodes.astype(float), np.full(n, k, dtype=float),
            k_nodes[nodes], np.full((n, 1), delta_p),
        ]
        if with_velocity:
            parts.append((grid.quad_to_node @ series.v[k - 1])[nodes])
        parts += [grid.nodes[nodes], np.full((n, 1), series.times_h[k]),
                  series.c[k - 1][nodes, None], rates[k - 1][nodes, None]]
        blocks.append(np.column_stack(parts))
    return RecordTable(np.concatenate(blocks), columns)


def sample_series(series: TimeSeries, scenario_index: int, config: SamplingConfig) \
        -> List[Optional[np.ndarray]]:
    """ Independent node draws for every target snapshot of one scenario. """
    samples = [None]
    for k in range(1, len(series)):
        rng = stream(config.seed, scenario_index, k, 'importance')
        samples.append(importance_sample(series.c[k], config.n_dense, config.n_uniform,
                                         rng, config.floor))
    return samples


def records_from_directory(directory, config: SamplingConfig) -> RecordTable:
    snap = read_snapshots(directory)
    index = int(snap.meta['scenario']['index'])
    samples = sample_series(snap.series, index, config)
    return build_records(snap.series, snap.permeability, snap.delta_p, samples, snap.grid,
                         scenario_index=index, with_velocity=config.with_velocity)


def build_dataset(directories: Sequence, config: SamplingConfig,
                  test_ids: Sequence[int] = (), jobs: int = 1) \
        -> Tuple[RecordTable, NormalizationStats, DatasetManifest]:
    """
    Build the training table from simulation directories, in parallel over
    scenarios. Results are concatenated in the order of `directories`.
    """
    directories = [Path(d) for d in directories]
    if jobs > 1 and len(directories) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            tables = list(pool.map(records_from_directory, directories,
                                   [config] * len(directories)))
    else:
        tables = [records_from_directory(d, config) for d in directories]
    table = RecordTable.concatenate(tables)
    train_ids = sorted({int(i) for i in np.unique(table.column('scenario'))})
    grid = read_json(directories[0] / 'meta.json')['grid']
    manifest = DatasetManifest(train_ids=train_ids, test_ids=list(test_ids),
                               points_per_snapshot=(config.n_dense, config.n_uniform),
                               seed=config.seed, with_velocity=config.with_velocity,
                               grid=grid)
    stats = NormalizationStats.of(table)
    logger.info('built %d records from %d scenarios', len(table), len(directories))
    return table, stats, manifest


REQUIRED_MANIFEST_KEYS = ('columns', 'stride', 'n_records', 'stats', 'records',
                          'train_ids', 'test_ids')


def write_dataset(records: RecordTable, stats: NormalizationStats,
                  manifest: DatasetManifest, path) -> Path:
    if len(records) == 0:
        raise StonetError('refusing to write an empty dataset')
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(records.data, dtype=DTYPE).tofile(path / 'records.bin')
    write_json(path / 'stats.json', stats.to_dict())
    write_json(path / 'manifest.json', {
        'version': __version__,
        'columns': list(records.columns),
        'stride': len(records.columns) * DTYPE.itemsize,
        'n_records': len(records),
        'records': 'records.bin',
        'stats': 'stats.json',
        'byte_order': 'little',
        'train_ids': list(manifest.train_ids),
        'test_ids': list(manifest.test_ids),
        'n_scenarios': manifest.n_scenarios,
        'points_per_snapshot': list(manifest.points_per_snapshot),
        'seed': manifest.seed,
        'with_velocity': manifest.with_velocity,
        'grid': manifest.grid,
    })
    logger.info('wrote %d records to %s', len(records), path)
    return path


def read_dataset(path) -> Tuple[RecordTable, NormalizationStats, DatasetManifest]:
    path = Path(path)
    manifest_path = path / 'manifest.json'
    if not manifest_path.exists():
        raise DatasetFormatError(f'{path}: no manifest.json')
    doc = read_json(manifest_path)
    missing = [k for k in REQUIRED_MANIFEST_KEYS if k not in doc]
    if missing:
        raise DatasetFormatError(f'{manifest_path}: missing keys {missing}')

    columns = doc['columns']
    stride = doc['stride']
    if stride != len(columns) * DTYPE.itemsize:
        raise DatasetFormatError(
            f'stride {stride} does not match {len(columns)} float64 columns', offset=0)
    records_path = path / doc['records']
    if not records_path.exists():
        raise DatasetFormatError(f'{records_path}: no such records file', offset=0)
    size = os.path.getsize(records_path)
    expected = doc['n_records'] * stride
    if size != expected:
        complete = (min(size, expected) // stride) * stride
        raise DatasetFormatError(
            f'{records_path}: expected {expected} bytes, found {size}', offset=complete)
    data = np.fromfile(records_path, dtype=DTYPE).reshape(doc['n_records'], len(columns))

    stats_path = path / doc['stats']
    if not stats_path.exists():
        raise DatasetFormatError(f'{stats_path}: no such stats file')
    stats = NormalizationStats.from_dict(read_json(stats_path))
    manifest = DatasetManifest(train_ids=doc['train_ids'], test_ids=doc['test_ids'],
                               points_per_snapshot=tuple(doc.get('points_per_snapshot', (0, 0))),
                               seed=doc.get('seed', 0),
                               with_velocity=doc.get('with_velocity', False),
                               grid=doc.get('grid', {}))
    return RecordTable(data, columns), stats, manifest
