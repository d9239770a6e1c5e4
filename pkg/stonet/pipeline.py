"""
Pipeline stages: scenarios, simulations, dataset, training, sweep,
evaluation, rollout and the desk-scale reproduction.

Artifacts live under `PipelineConfig.out_dir`:

    scenarios/scenario_<i>/    sampled permeability field and manifest
    simulations/scenario_<i>/  snapshot directories (train ids first, then test)
    timings.json               simulation wall-clock times
    dataset/                   records.bin, stats.json, manifest.json
    train/                     loss_history.csv, checkpoint/
    sweep/                     sweep.csv, loss-vs-parameters plot
    eval/                      metrics.json, metrics.csv, plots
    rollout/scenario_<i>/      predicted snapshots
    rollout/figures/           field maps, simulated against predicted
    summary.json, summary.md   reproduction report

Every directory gets a `meta.json` with the resolved config, the base seed
and the package version.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import os
from pathlib import Path
import time
from typing import Dict, List, Optional, Sequence

import numpy as np

from stonet._version import __version__
from stonet.dataset import SamplingConfig, build_dataset, read_dataset, write_dataset
from stonet.errors import DatasetFormatError, StageError, StonetError
from stonet.harness import acceptance
from stonet.harness.evaluation import evaluate, write_metrics
from stonet.harness.plots import (
    plot_error_histograms,
    plot_error_vs_time,
    plot_field_maps,
    plot_loss_history,
    plot_loss_vs_parameters
)
from stonet.harness.sweep import SweepSpec, matched_pairs, stonet_win_fraction, sweep
from stonet.harness.training import TrainConfig, TrainResult, final_window_loss, train
from stonet.operator.checkpoint import load_checkpoint
from stonet.operator.rollout import rollout
from stonet.scenario import DeterministicParams, ScenarioConfig, generate_scenario, scenario_manifest
from stonet.simulator.grid import Grid
from stonet.simulator.run import SolverConfig, run_simulation
from stonet.simulator.store import read_snapshots, write_predicted_snapshots, write_snapshots
from stonet.utils.arrayio import digest, read_array, read_json, write_array, write_json
from stonet.utils.config import Config, require

logger = logging.getLogger(__name__)

LOCAL_KEYS = ('out_dir', 'jobs')


@dataclass
class PipelineConfig(Config):
    base_seed: int = 0
    out_dir: str = 'runs/desk'
    grid: str = '70x50'
    n_train: int = 40
    n_test: int = 5
    jobs: int = 0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    deterministic: DeterministicParams = field(default_factory=DeterministicParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def validate(self):
        require(self.base_seed >= 0, 'base_seed must be non-negative')
        require(self.n_train >= 1 and self.n_test >= 0, 'need at least one training scenario')
        require(self.jobs >= 0, 'jobs must be non-negative')
        Grid.from_spec(self.grid)
        require(_creatable(Path(self.out_dir)), f'cannot create output directory {self.out_dir}')

    def portable_dict(self) -> Dict:
        """ `to_dict` without the output location and worker count, which do not change results. """
        data = self.to_dict()
        for key in LOCAL_KEYS:
            data.pop(key, None)
        return data

    @property
    def workers(self) -> int:
        return self.jobs or os.cpu_count() or 1

    @property
    def root(self) -> Path:
        return Path(self.out_dir)

    @property
    def train_ids(self) -> List[int]:
        return list(range(self.n_train))

    @property
    def test_ids(self) -> List[int]:
        return list(range(self.n_train, self.n_train + self.n_test))

    def simulation_dir(self, index: int) -> Path:
        return self.root / 'simulations' / f'scenario_{index:04d}'


def _creatable(path: Path) -> bool:
    """ True when `path` exists as a directory or its nearest existing parent is writable. """
    path = path.absolute()
    while not path.exists():
        path = path.parent
    return path.is_dir() and os.access(path, os.W_OK)


def write_meta(directory, config: PipelineConfig, stage: str, extra: Optional[Dict] = None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {'version': __version__, 'stage': stage, 'base_seed': config.base_seed,
            'config': config.portable_dict()}
    if extra:
        meta.update(extra)
    write_json(directory / 'meta.json', meta)


def _stage(name: str):
    """ Wrap a stage so any failure surfaces as a `StageError` naming it. """
    def decorate(fn):
        def run(*args, **kwargs):
            logger.info('stage %s: start', name)
            try:
                result = fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as e:
                logger.error('stage %s failed: %s', name, e)
                raise StageError(name, e) from e
            logger.info('stage %s: done', name)
            return result
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return decorate


def _map(fn, items: Sequence, jobs: int) -> List:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _sample_one(args):
    config, index = args
    grid = Grid.from_spec(config.grid)
    scenario = generate_scenario(config.base_seed, index, grid, config.scenario, config.deterministic)
    directory = config.root / 'scenarios' / f'scenario_{index:04d}'
    write_meta(directory, config, 'sample', {'scenario': scenario_manifest(scenario, grid),
                                             'files': {'kfield': 'kfield.bin'},
                                             'shapes': {'kfield': [grid.n_quad, 3]}})
    write_array(directory / 'kfield.bin', scenario.permeability.as_array())
    return directory


@_stage('sample')
def stage_sample(config: PipelineConfig, indices: Sequence[int]) -> List[Path]:
    return _map(_sample_one, [(config, i) for i in indices], config.workers)


def _has_scenario(directory: Path) -> bool:
    meta = directory / 'meta.json'
    return meta.is_file() and 'scenario' in read_json(meta)


def artifact_dirs(path, subdir: str) -> List[Path]:
    """
    Resolve `path` to artifact directories (each holding a `meta.json`).

    `path` may be one such directory, a directory of them, or an output
    root whose `subdir` holds them.

    :raises StonetError: if nothing is found
    """
    path = Path(path)
    if _has_scenario(path):
        return [path]
    if (path / subdir).is_dir():
        path = path / subdir
    found = sorted(d for d in path.iterdir() if _has_scenario(d)) if path.is_dir() else []
    if not found:
        raise StonetError(f'no {subdir} found under {path}')
    return found


def artifact_index(directory) -> int:
    return int(read_json(Path(directory) / 'meta.json')['scenario']['index'])


def load_sampled_scenario(directory, config: PipelineConfig):
    """
    Rebuild the scenario stored by `stage_sample` in `directory`.

    The scenario is regenerated from its manifest under the configs it was
    sampled with and must reproduce the stored `kfield.bin` exactly.

    :return: (scenario, grid, deterministic params)
    :raises DatasetFormatError: if the directory is incomplete or the field differs
    """
    directory = Path(directory)
    try:
        meta = read_json(directory / 'meta.json')
        manifest = meta['scenario']
        g = manifest['grid']
        grid = Grid(int(g['nx']), int(g['ny']), float(g['lx']), float(g['ly']))
        sampled = meta.get('config', {})
        scenario_config = ScenarioConfig.from_dict(sampled.get('scenario', config.scenario.to_dict()))
        det = DeterministicParams.from_dict(sampled.get('deterministic', config.deterministic.to_dict()))
        stored = read_array(directory / meta['files']['kfield'], meta['shapes']['kfield'])
    except (OSError, KeyError, TypeError) as e:
        raise DatasetFormatError(f'{directory}: incomplete scenario directory ({e})') from e
    scenario = generate_scenario(int(manifest['base_seed']), int(manifest['index']), grid,
                                 scenario_config, det)
    if not np.array_equal(stored, scenario.permeability.as_array()):
        raise DatasetFormatError(f'{directory}: kfield.bin does not match its manifest')
    if grid.spec != config.grid:
        logger.warning('%s was sampled on a %s grid; simulating on that grid, not %s',
                       directory, grid.spec, config.grid)
    return scenario, grid, det


def _simulate_one(args):
    config, index, source = args
    if source is None:
        grid = Grid.from_spec(config.grid)
        det = config.deterministic
        scenario = generate_scenario(config.base_seed, index, grid, config.scenario, det)
    else:
        scenario, grid, det = load_sampled_scenario(source, config)
        index = scenario.params.index
    series = run_simulation(scenario, grid, config.solver, det)
    write_snapshots(config.simulation_dir(index), series, scenario, grid, config.solver, det,
                    extra={'stage': 'simulate', 'base_seed': scenario.params.base_seed,
                           'pipeline': config.portable_dict()})
    return index, series.wall_time_s


@_stage('simulate')
def stage_simulate(config: PipelineConfig, indices: Optional[Sequence[int]] = None,
                   scenario_dirs: Optional[Sequence[Path]] = None) -> Dict[int, float]:
    """
    Run and store the simulations; returns wall-clock seconds per scenario.

    :param indices: scenarios to generate from the base seed
    :param scenario_dirs: sampled scenario directories to simulate instead
    """
    if scenario_dirs is not None:
        jobs = [(config, None, Path(d)) for d in scenario_dirs]
    else:
        jobs = [(config, i, None) for i in indices or ()]
    timings = dict(_map(_simulate_one, jobs, config.workers))
    path = config.root / 'timings.json'
    recorded = read_json(path) if path.exists() else {}
    recorded.update({str(i): t for i, t in timings.items()})
    write_json(path, recorded)
    return timings


@_stage('dataset')
def stage_dataset(config: PipelineConfig, sims_dir=None) -> Path:
    """
    Build the training dataset. By default from the training ids under
    `<out>/simulations`; with `sims_dir`, from every simulation found there
    that is not a test scenario.
    """
    if sims_dir is None:
        directories = [config.simulation_dir(i) for i in config.train_ids]
    else:
        test_ids = set(config.test_ids)
        directories = [d for d in artifact_dirs(sims_dir, 'simulations')
                       if artifact_index(d) not in test_ids]
        logger.info('using %d simulations from %s', len(directories), sims_dir)
    missing = [str(d) for d in directories if not (d / 'meta.json').exists()]
    if missing:
        raise StonetError(f'missing simulations: {missing[:3]}{"..." if len(missing) > 3 else ""}')
    if not directories:
        raise StonetError('no training simulations')
    records, stats, manifest = build_dataset(directories, config.sampling, config.test_ids,
                                             config.workers)
    path = write_dataset(records, stats, manifest, config.root / 'dataset')
    write_meta(path, config, 'dataset', {'n_records': len(records)})
    return path


@_stage('train')
def stage_train(config: PipelineConfig, dataset_path=None) -> TrainResult:
    records, stats, _ = read_dataset(dataset_path or config.root / 'dataset')
    out = config.root / 'train'
    train_config = config.train.merged({'operator': {'with_velocity': records.with_velocity}})
    result = train(records, stats, train_config, out)
    write_meta(out, config, 'train', {
        'final_window': {str(w): final_window_loss(result.history, w) for w in config.train.windows}})
    return result


@_stage('sweep')
def stage_sweep(config: PipelineConfig, dataset_path=None):
    out = config.root / 'sweep'
    entries = sweep(config.sweep, dataset_path or config.root / 'dataset', config.train,
                    out, config.workers)
    plot_loss_vs_parameters(entries, out)
    write_meta(out, config, 'sweep', {'n_entries': len(entries),
                                      'failed': sum(e.status != 'ok' for e in entries)})
    return entries


def _test_snapshots(config: PipelineConfig, indices: Optional[Sequence[int]] = None):
    indices = config.test_ids if indices is None else indices
    if not indices:
        raise StonetError('no test scenarios configured')
    return [read_snapshots(config.simulation_dir(i)) for i in indices]


@_stage('eval')
def stage_eval(config: PipelineConfig, checkpoint=None):
    model = load_checkpoint(checkpoint or config.root / 'train' / 'checkpoint')
    model.eval()
    snapshots = _test_snapshots(config)
    history_path = config.root / 'train' / 'loss_history.csv'
    windows = {}
    if history_path.exists():
        history = np.loadtxt(history_path, delimiter=',', skiprows=1, ndmin=2)[:, 1]
        windows = {str(w): final_window_loss(history, w) for w in config.train.windows}
    metrics = evaluate(model, snapshots, windows)
    out = config.root / 'eval'
    write_metrics(metrics, out)
    plot_error_histograms(metrics, out)
    plot_error_vs_time(metrics, out)
    write_meta(out, config, 'eval', {'checkpoint': str(checkpoint or config.root / 'train' / 'checkpoint')})
    return metrics


@_stage('rollout')
def stage_rollout(config: PipelineConfig, checkpoint=None,
                  indices: Optional[Sequence[int]] = None) -> Dict[int, float]:
    """ Write predicted snapshots for test scenarios; returns rollout seconds per scenario. """
    model = load_checkpoint(checkpoint or config.root / 'train' / 'checkpoint')
    model.eval()
    seconds = {}
    for snap in _test_snapshots(config, indices):
        index = int(snap.meta['scenario']['index'])
        velocity = None
        if model.config.with_velocity:
            velocity = np.stack([snap.grid.quad_to_node @ v for v in snap.series.v])
        started = time.perf_counter()
        result = rollout(model, snap.series.c[0], snap.permeability, snap.delta_p, snap.grid,
                         snap.series.times_h, velocity)
        seconds[index] = time.perf_counter() - started
        write_predicted_snapshots(config.root / 'rollout' / f'scenario_{index:04d}', result.times_h,
                                  result.c, snap,
                                  extra={'stage': 'rollout', 'base_seed': config.base_seed,
                                         'out_of_range': result.out_of_range})
        plot_field_maps(snap.grid, result.times_h, snap.series.c, result.c,
                        config.root / 'rollout' / 'figures' / f'scenario_{index:04d}')
    write_meta(config.root / 'rollout', config, 'rollout')
    return seconds


DIGESTED = {
    'dataset': 'dataset/records.bin',
    'loss_history': 'train/loss_history.csv',
    'metrics_json': 'eval/metrics.json',
    'metrics_csv': 'eval/metrics.csv',
    'sweep': 'sweep/sweep.csv',
}


def artifact_digests(config: PipelineConfig) -> Dict[str, str]:
    return {name: digest(config.root / rel) for name, rel in DIGESTED.items()
            if (config.root / rel).exists()}


def run_repro(config: PipelineConfig) -> List[acceptance.CheckResult]:
    """
    The whole pipeline followed by every acceptance check. Writes
    `summary.json` and `summary.md`; a summary already present in the output
    directory is the reference for the determinism check.
    """
    summary_path = config.root / 'summary.json'
    previous = read_json(summary_path).get('digests') if summary_path.exists() else None

    checks = [
        acceptance.run_check('permeability_oracle', acceptance.check_permeability_oracle),
        acceptance.run_check('hydrostatic_no_flow', acceptance.check_hydrostatic),
        acceptance.run_check('pressure_convergence', acceptance.check_pressure_convergence),
        acceptance.run_check('transport_diffusion', acceptance.check_diffusion),
        acceptance.run_check('bookkeeping', lambda: acceptance.check_bookkeeping(
            Grid.from_spec(config.grid), config.solver)),
        acceptance.run_check('gradient_check', acceptance.check_gradients),
    ]

    timings = stage_simulate(config, config.train_ids + config.test_ids)
    snapshots = _test_snapshots(config)
    checks.append(acceptance.run_check('solute_balance', lambda: acceptance.check_balance(snapshots)))
    checks.append(acceptance.run_check('rollout_identity',
                                       lambda: acceptance.check_rollout_identity(snapshots)))

    stage_dataset(config)
    result = stage_train(config)
    entries = stage_sweep(config)
    metrics = stage_eval(config)
    rollout_seconds = stage_rollout(config)
    plot_loss_history({'final': result.history}, config.root / 'train')

    restricted = [e for e in entries if e.config.width == min(config.sweep.widths)]
    checks.append(acceptance.run_check('architecture_trend', lambda: acceptance.check_architecture_trend(
        stonet_win_fraction(restricted), len(matched_pairs(restricted)))))
    checks.append(acceptance.run_check('rollout_relative_error',
                                       lambda: acceptance.check_relative_error(metrics.mean_relative_error)))
    simulation_seconds = float(np.mean([timings[i] for i in config.test_ids]))
    checks.append(acceptance.run_check('speedup', lambda: acceptance.check_speedup(
        simulation_seconds, float(np.mean(list(rollout_seconds.values()))))))
    checks.append(acceptance.run_check('relative_error_flatness',
                                       lambda: acceptance.check_flatness(metrics)))

    digests = artifact_digests(config)
    checks.append(acceptance.run_check('determinism',
                                       lambda: acceptance.check_determinism(digests, previous)))
    write_summary(config, checks, digests)
    return checks


def write_summary(config: PipelineConfig, checks: Sequence[acceptance.CheckResult],
                  digests: Dict[str, str]):
    passed = acceptance.all_passed(checks)
    write_json(config.root / 'summary.json', {
        'version': __version__,
        'base_seed': config.base_seed,
        'passed': passed,
        'checks': [c.to_dict() for c in checks],
        'digests': digests,
        'config': config.portable_dict(),
    })
    lines = [f'# Reproduction summary (seed {config.base_seed})', '',
             f'Overall: {"PASS" if passed else "FAIL"}', '',
             '| check | result | value | threshold | detail |',
             '|---|---|---|---|---|']
    for c in checks:
        lines.append(f'| {c.name} | {c.status} | {c.value:.4g} | '
                     f'{c.threshold:.4g} | {c.detail} |')
    with open(config.root / 'summary.md', 'w') as f:
        f.write('\n'.join(lines) + '\n')
    write_meta(config.root, config, 'repro')
    logger.info('summary written to %s: %s', config.root, 'PASS' if passed else 'FAIL')
