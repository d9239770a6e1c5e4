"""
Snapshot directories.

One directory per scenario holds `meta.json` and raw `<f8` arrays:
`c_t<h>.bin` and `p_t<h>.bin` (n_nodes,), `v_t<h>.bin` (n_quad, 2) and
`kfield.bin` (n_quad, 3) with rows (kxx, kyy, kxy). Shapes and file names are
listed in `meta.json`, which also carries everything needed to regenerate
the directory.
"""

from dataclasses import dataclass
import logging
import os
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from stonet._version import __version__
from stonet.errors import DatasetFormatError
from stonet.scenario import DeterministicParams, PermeabilityField, Scenario, scenario_manifest
from stonet.simulator.grid import Grid
from stonet.simulator.run import SolverConfig, TimeSeries
from stonet.utils.arrayio import read_array, read_json, write_array, write_json

logger = logging.getLogger(__name__)


def _hours(t: float) -> str:
    return f'{int(round(t))}' if abs(t - round(t)) < 1e-9 else f'{t:g}'


@dataclass
class SnapshotDirectory:
    series: TimeSeries
    permeability: PermeabilityField
    grid: Grid
    meta: Dict

    @property
    def delta_p(self) -> float:
        s = self.meta['scenario']
        return s['p_left_offset_pa'] - s['p_right_offset_pa']


def write_snapshots(directory, series: TimeSeries, scenario: Scenario, grid: Grid,
                    config: SolverConfig, det: DeterministicParams,
                    extra: Optional[Dict] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {'c': [], 'p': [], 'v': []}
    for k, t in enumerate(series.times_h):
        for name, data in (('c', series.c[k]), ('p', series.p[k]), ('v', series.v[k])):
            file_name = f'{name}_t{_hours(t)}.bin'
            write_array(directory / file_name, data)
            files[name].append(file_name)
    write_array(directory / 'kfield.bin', scenario.permeability.as_array())

    meta = {
        'version': __version__,
        'scenario': scenario_manifest(scenario, grid),
        'grid': grid.to_dict(),
        'solver': config.to_dict(),
        'deterministic': det.to_dict(),
        'times_h': [float(t) for t in series.times_h],
        'shapes': {
            'c': [grid.n_nodes], 'p': [grid.n_nodes],
            'v': [grid.n_quad, 2], 'kfield': [grid.n_quad, 3],
        },
        'files': dict(files, kfield='kfield.bin'),
        'byte_order': 'little', 'dtype': 'float64',
        'diagnostics': series.diagnostics,
    }
    if extra:
        meta.update(extra)
    write_json(directory / 'meta.json', meta)
    logger.info('wrote %d snapshots to %s', len(series), directory)
    return directory


def read_snapshots(directory) -> SnapshotDirectory:
    directory = Path(directory)
    meta_path = directory / 'meta.json'
    if not os.path.exists(meta_path):
        raise DatasetFormatError(f'{directory}: no meta.json')
    meta = read_json(meta_path)
    g = meta['grid']
    grid = Grid(g['nx'], g['ny'], g['lx'], g['ly'])
    shapes = meta['shapes']
    files = meta['files']
    c = np.stack([read_array(directory / f, shapes['c']) for f in files['c']])
    p = np.stack([read_array(directory / f, shapes['p']) for f in files['p']])
    v = np.stack([read_array(directory / f, shapes['v']) for f in files['v']])
    kfield = PermeabilityField.from_array(read_array(directory / files['kfield'], shapes['kfield']))
    series = TimeSeries(times_h=np.array(meta['times_h']), c=c, p=p, v=v,
                        scenario=meta['scenario'], diagnostics=meta.get('diagnostics', {}))
    return SnapshotDirectory(series=series, permeability=kfield, grid=grid, meta=meta)


def write_predicted_snapshots(directory, times_h, c: np.ndarray, source: SnapshotDirectory,
                              extra: Optional[Dict] = None) -> Path:
    """
    Write predicted concentrations next to the layout of `source`: the same
    `c_t<h>.bin` names and `kfield.bin`, so a prediction can be compared
    file by file with the simulation it came from.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for t, field in zip(times_h, c):
        file_name = f'c_t{_hours(t)}.bin'
        write_array(directory / file_name, field)
        files.append(file_name)
    write_array(directory / 'kfield.bin', source.permeability.as_array())
    meta = {
        'version': __version__,
        'scenario': source.meta['scenario'],
        'grid': source.meta['grid'],
        'times_h': [float(t) for t in times_h],
        'shapes': {'c': [source.grid.n_nodes], 'kfield': source.meta['shapes']['kfield']},
        'files': {'c': files, 'kfield': 'kfield.bin'},
        'byte_order': 'little', 'dtype': 'float64',
        'predicted': True,
    }
    if extra:
        meta.update(extra)
    write_json(directory / 'meta.json', meta)
    return directory
