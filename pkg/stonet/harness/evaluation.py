"""
Rollout and one-step error metrics on held-out scenarios.

For every scenario the model is rolled out from the true c(t_0) and compared
with the simulation at each snapshot:

    absolute error   |c_pred - c_true|
    relative error   |c_pred - c_true| / max(max_nodes |c_true(., t)|, 0.1)

One-step rate errors compare the predicted rate from the true c(t_{k-1})
with the backward-difference rate at t_k; their relative error uses the same
form with a floor of 1e-3 1/h.

Errors are pooled into per-snapshot histograms over fixed log-spaced bins.
Values below the first edge or above the last are counted in the end bins,
so every histogram row sums to the number of pooled samples.
"""

import csv
from dataclasses import dataclass, field
import logging
import os
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from stonet.dataset import concentration_rate, nodal_permeability
from stonet.errors import DatasetFormatError
from stonet.operator.networks import OperatorNetwork
from stonet.operator.rollout import RateFn, model_rate_fn, unroll
from stonet.simulator.store import SnapshotDirectory
from stonet.utils.arrayio import write_json

logger = logging.getLogger(__name__)

C_FLOOR = 0.1
RATE_FLOOR = 1e-3
BIN_EDGES = np.logspace(-12, 1, 27)

# snapshot -> rate function
Predictor = Callable[[SnapshotDirectory], RateFn]


def model_predictor(model: OperatorNetwork) -> Predictor:
    def predictor(snap: SnapshotDirectory) -> RateFn:
        velocity = None
        if model.config.with_velocity:
            velocity = np.stack([snap.grid.quad_to_node @ v for v in snap.series.v])
        return model_rate_fn(model, nodal_permeability(snap.permeability, snap.grid),
                             snap.delta_p, snap.grid, snap.series.times_h, velocity)
    return predictor


def histogram(errors: np.ndarray, edges: np.ndarray = BIN_EDGES) -> np.ndarray:
    return np.histogram(np.clip(errors, edges[0], edges[-1]), bins=edges)[0]


def relative(errors: np.ndarray, truth: np.ndarray, floor: float) -> np.ndarray:
    return errors / max(float(np.max(np.abs(truth))), floor)


@dataclass
class Metrics:
    times_h: List[float]
    n_scenarios: int
    n_nodes: int
    bin_edges: List[float]
    abs_hist_c: List[List[int]]
    rel_hist_c: List[List[int]]
    mean_abs_c: List[float]
    mean_rel_c: List[float]
    abs_hist_rate: List[List[int]]
    rel_hist_rate: List[List[int]]
    mean_abs_rate: List[float]
    mean_rel_rate: List[float]
    final_window_loss: Dict[str, float] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.n_scenarios * len(self.times_h) * self.n_nodes

    @property
    def mean_relative_error(self) -> float:
        """ Mean relative rollout error over every snapshot after the first. """
        return float(np.mean(self.mean_rel_c[1:])) if len(self.times_h) > 1 else 0.0

    def relative_error_at(self, t_h: float) -> float:
        i = int(np.argmin(np.abs(np.asarray(self.times_h) - t_h)))
        return self.mean_rel_c[i]

    def to_dict(self) -> Dict:
        return {
            'times_h': list(self.times_h),
            'n_scenarios': self.n_scenarios,
            'n_nodes': self.n_nodes,
            'n_samples': self.n_samples,
            'relative_denominator': f'max(max|c_true(.,t)|, {C_FLOOR})',
            'rate_relative_denominator': f'max(max|rate_true(.,t)|, {RATE_FLOOR})',
            'bin_edges': list(self.bin_edges),
            'abs_hist_c': self.abs_hist_c,
            'rel_hist_c': self.rel_hist_c,
            'mean_abs_c': self.mean_abs_c,
            'mean_rel_c': self.mean_rel_c,
            'abs_hist_rate': self.abs_hist_rate,
            'rel_hist_rate': self.rel_hist_rate,
            'mean_abs_rate': self.mean_abs_rate,
            'mean_rel_rate': self.mean_rel_rate,
            'mean_relative_error': self.mean_relative_error,
            'final_window_loss': dict(self.final_window_loss),
        }


def evaluate(model, scenarios: Sequence[SnapshotDirectory],
             final_window_loss: Optional[Dict[str, float]] = None) -> Metrics:
    """
    :param model: an `OperatorNetwork`, or a `Predictor` giving the rate
        function for a scenario
    :param scenarios: held-out snapshot directories, all on the same grid
        and snapshot times
    :raises DatasetFormatError: when a scenario has fewer than two snapshots
        or does not match the others
    """
    if not scenarios:
        raise DatasetFormatError('no test scenarios to evaluate')
    predictor = model_predictor(model) if isinstance(model, OperatorNetwork) else model
    times = np.asarray(scenarios[0].series.times_h)
    n_nodes = scenarios[0].grid.n_nodes
    K = len(times)

    abs_c = [[] for _ in range(K)]
    rel_c = [[] for _ in range(K)]
    abs_r = [[] for _ in range(K - 1)]
    rel_r = [[] for _ in range(K - 1)]
    for snap in scenarios:
        series = snap.series
        if len(series) < 2:
            raise DatasetFormatError(f'scenario {series.scenario.get("index")} has {len(series)} snapshot(s)')
        if len(series) != K or not np.allclose(series.times_h, times) or snap.grid.n_nodes != n_nodes:
            raise DatasetFormatError('test scenarios differ in snapshot times or grid')
        rate_fn = predictor(snap)

        states = unroll(rate_fn, series.c[0].copy(), times)
        for k in range(K):
            err = np.abs(states[k] - series.c[k])
            abs_c[k].append(err)
            rel_c[k].append(relative(err, series.c[k], C_FLOOR))

        true_rates = concentration_rate(series)
        for k in range(1, K):
            err = np.abs(rate_fn(series.c[k - 1], k) - true_rates[k - 1])
            abs_r[k - 1].append(err)
            rel_r[k - 1].append(relative(err, true_rates[k - 1], RATE_FLOOR))

    pooled = lambda groups: [np.concatenate(g) for g in groups]
    abs_c, rel_c, abs_r, rel_r = map(pooled, (abs_c, rel_c, abs_r, rel_r))
    metrics = Metrics(
        times_h=[float(t) for t in times],
        n_scenarios=len(scenarios),
        n_nodes=n_nodes,
        bin_edges=BIN_EDGES.tolist(),
        abs_hist_c=[histogram(e).tolist() for e in abs_c],
        rel_hist_c=[histogram(e).tolist() for e in rel_c],
        mean_abs_c=[float(np.mean(e)) for e in abs_c],
        mean_rel_c=[float(np.mean(e)) for e in rel_c],
        abs_hist_rate=[histogram(e).tolist() for e in abs_r],
        rel_hist_rate=[histogram(e).tolist() for e in rel_r],
        mean_abs_rate=[float(np.mean(e)) for e in abs_r],
        mean_rel_rate=[float(np.mean(e)) for e in rel_r],
        final_window_loss=dict(final_window_loss or {}),
    )
    logger.info('evaluated %d scenarios: mean relative error %.4f', len(scenarios),
                metrics.mean_relative_error)
    return metrics


def write_metrics(metrics: Metrics, out_dir) -> Path:
    """ `metrics.json` with everything, `metrics.csv` with the per-snapshot means. """
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    write_json(out_dir / 'metrics.json', metrics.to_dict())
    with open(out_dir / 'metrics.csv', 'w', newline='') as f:
        f.write(f'# relative error = |c_pred - c_true| / max(max|c_true(.,t)|, {C_FLOOR}); '
                f'rate relative error floor {RATE_FLOOR} 1/h\n')
        writer = csv.writer(f)
        writer.writerow(['t_h', 'mean_abs_c', 'mean_rel_c', 'mean_abs_rate', 'mean_rel_rate'])
        for k, t in enumerate(metrics.times_h):
            rates = [repr(metrics.mean_abs_rate[k - 1]), repr(metrics.mean_rel_rate[k - 1])] if k else ['', '']
            writer.writerow([t, repr(metrics.mean_abs_c[k]), repr(metrics.mean_rel_c[k])] + rates)
    return out_dir
