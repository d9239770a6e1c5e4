"""
Figures as data files plus gnuplot scripts.

Each writer puts a whitespace-separated `.dat` table and a `.gp` script next
to each other; `gnuplot <name>.gp` renders `<name>.png` from the table.
"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def _write_table(path: Path, header: Sequence[str], rows):
    with open(path, 'w') as f:
        f.write('# ' + ' '.join(header) + '\n')
        for row in rows:
            f.write(' '.join(repr(float(v)) if not isinstance(v, str) else v for v in row) + '\n')


def _write_script(path: Path, lines: List[str]):
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')


def plot_loss_vs_parameters(entries, out_dir, window: str = 'loss_w20') -> Path:
    """ Final-window loss against parameter count, one series per architecture. """
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    archs = sorted({e.config.arch for e in entries})
    for arch in archs:
        rows = [(e.params, getattr(e, window)) for e in entries
                if e.config.arch == arch and e.status == 'ok']
        _write_table(out_dir / f'loss_vs_params_{arch}.dat', ('params', window), rows)
    plots = ', '.join(f"'loss_vs_params_{a}.dat' using 1:2 with points title '{a}'" for a in archs)
    _write_script(out_dir / 'loss_vs_params.gp', [
        "set terminal pngcairo size 900,600",
        "set output 'loss_vs_params.png'",
        "set logscale xy",
        "set xlabel 'trainable parameters'",
        f"set ylabel 'final-window training loss ({window})'",
        f"plot {plots}",
    ])
    return out_dir / 'loss_vs_params.gp'


def plot_error_histograms(metrics, out_dir) -> Path:
    """ Absolute and relative rollout error distributions, one curve per snapshot. """
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    edges = np.asarray(metrics.bin_edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    header = ['bin_center'] + [f't{t:g}h' for t in metrics.times_h]
    for kind in ('abs', 'rel'):
        counts = np.asarray(getattr(metrics, f'{kind}_hist_c'), dtype=float)
        fractions = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
        _write_table(out_dir / f'{kind}_error_hist.dat', header,
                     np.column_stack([centers, fractions.T]))
    n = len(metrics.times_h)
    lines = ["set terminal pngcairo size 1200,500", "set output 'error_hist.png'",
             "set multiplot layout 1,2", "set logscale x", "set ylabel 'fraction of points'"]
    for kind, label in (('abs', 'absolute error'), ('rel', 'relative error')):
        curves = ', '.join(f"'{kind}_error_hist.dat' using 1:{i + 2} with steps title '{metrics.times_h[i]:g} h'"
                           for i in range(1, n))
        lines += [f"set xlabel '{label}'", f"plot {curves}"]
    lines.append('unset multiplot')
    _write_script(out_dir / 'error_hist.gp', lines)
    return out_dir / 'error_hist.gp'


def plot_error_vs_time(metrics, out_dir) -> Path:
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    _write_table(out_dir / 'error_vs_time.dat', ('t_h', 'mean_abs_c', 'mean_rel_c'),
                 zip(metrics.times_h, metrics.mean_abs_c, metrics.mean_rel_c))
    _write_script(out_dir / 'error_vs_time.gp', [
        "set terminal pngcairo size 1200,500",
        "set output 'error_vs_time.png'",
        "set multiplot layout 1,2",
        "set xlabel 'time (h)'",
        "set ylabel 'mean absolute error'",
        "plot 'error_vs_time.dat' using 1:2 with linespoints notitle",
        "set ylabel 'mean relative error'",
        "plot 'error_vs_time.dat' using 1:3 with linespoints notitle",
        "unset multiplot",
    ])
    return out_dir / 'error_vs_time.gp'


def plot_loss_history(histories: Dict[str, Sequence[float]], out_dir) -> Path:
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    names = sorted(histories)
    for name in names:
        _write_table(out_dir / f'loss_{name}.dat', ('epoch', 'loss'),
                     ((i + 1, v) for i, v in enumerate(histories[name])))
    curves = ', '.join(f"'loss_{n}.dat' using 1:2 with lines title '{n}'" for n in names)
    _write_script(out_dir / 'loss_history.gp', [
        "set terminal pngcairo size 900,600",
        "set output 'loss_history.png'",
        "set logscale y",
        "set xlabel 'epoch'",
        "set ylabel 'training loss'",
        f"plot {curves}",
    ])
    return out_dir / 'loss_history.gp'


def _write_grid_table(path: Path, header: Sequence[str], grid, columns: Sequence[np.ndarray]):
    """ One row per node, a blank line after each row of nodes, as `pm3d` expects. """
    data = np.column_stack([grid.nodes] + [np.asarray(c, dtype=float) for c in columns])
    per_row = grid.nx + 1
    with open(path, 'w') as f:
        f.write('# ' + ' '.join(header) + '\n')
        for start in range(0, len(data), per_row):
            for row in data[start:start + per_row]:
                f.write(' '.join(repr(float(v)) for v in row) + '\n')
            f.write('\n')


def field_map_snapshots(n_snapshots: int, count: int = 3) -> List[int]:
    """ Up to `count` snapshot indices from 1 to the last, evenly spread. """
    if n_snapshots < 2:
        return []
    picks = np.linspace(1, n_snapshots - 1, num=min(count, n_snapshots - 1))
    return sorted({int(round(k)) for k in picks})


def plot_field_maps(grid, times_h: Sequence[float], c_true: np.ndarray, c_pred: np.ndarray,
                    out_dir, snapshots: Sequence[int] = None) -> Path:
    """
    Heatmaps of true and predicted concentration and concentration rate.

    Rates are backward differences in 1/h. Each chosen snapshot gets a
    `field_t<h>h.dat` table (x, y, c_true, c_pred, dc_true, dc_pred) and a
    2x2 panel in `field_maps.gp`.

    :param c_true: (K, n_nodes) simulated concentration
    :param c_pred: (K, n_nodes) rolled-out concentration
    :param snapshots: indices into `times_h`, at least 1; default `field_map_snapshots`
    """
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    times_h = np.asarray(times_h, dtype=float)
    c_true, c_pred = np.asarray(c_true, dtype=float), np.asarray(c_pred, dtype=float)
    if c_true.shape != c_pred.shape or c_true.shape != (len(times_h), grid.n_nodes):
        raise ValueError(f'expected ({len(times_h)}, {grid.n_nodes}) fields, '
                         f'got {c_true.shape} and {c_pred.shape}')
    if snapshots is None:
        snapshots = field_map_snapshots(len(times_h))
    dt = np.diff(times_h)
    rate_true = np.diff(c_true, axis=0) / dt[:, None]
    rate_pred = np.diff(c_pred, axis=0) / dt[:, None]

    lines = ["set terminal pngcairo size 1200,900", "set view map", "set size ratio -1",
             "set xlabel 'x (m)'", "set ylabel 'y (m)'", "set pm3d map"]
    for k in snapshots:
        if not 1 <= k < len(times_h):
            raise ValueError(f'snapshot {k} has no backward rate')
        t = f'{times_h[k]:g}'
        name = f'field_t{t}h'
        _write_grid_table(out_dir / f'{name}.dat',
                          ('x', 'y', 'c_true', 'c_pred', 'dc_true', 'dc_pred'), grid,
                          (c_true[k], c_pred[k], rate_true[k - 1], rate_pred[k - 1]))
        low = float(min(c_true[k].min(), c_pred[k].min()))
        high = float(max(c_true[k].max(), c_pred[k].max()))
        c_range = f'[{low!r}:{high!r}]'
        lines += [f"set output '{name}.png'", "set multiplot layout 2,2"]
        for column, title in ((3, 'c simulated'), (4, 'c predicted'),
                              (5, 'dc/dt simulated (1/h)'), (6, 'dc/dt predicted (1/h)')):
            if column == 3:
                lines.append(f'set cbrange {c_range}')
            elif column == 5:
                lines.append('set autoscale cb')
            lines += [f"set title '{title}, t = {t} h'",
                      f"splot '{name}.dat' using 1:2:{column} notitle"]
        lines.append('unset multiplot')
    _write_script(out_dir / 'field_maps.gp', lines)
    logger.info('field maps for %d snapshots in %s', len(snapshots), out_dir)
    return out_dir / 'field_maps.gp'
