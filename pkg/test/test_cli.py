import shutil
import unittest

import numpy as np

from stonet.cli import (
    EXIT_ACCEPTANCE,
    EXIT_OK,
    EXIT_STAGE,
    EXIT_USAGE,
    build_parser,
    resolve_config,
    run_command
)
from stonet.errors import ConfigError, DatasetFormatError, StageError, StonetError
from stonet.pipeline import PipelineConfig, artifact_dirs, load_sampled_scenario, stage_dataset
from stonet.simulator.grid import Grid
from stonet.simulator.store import read_snapshots
from stonet.utils.arrayio import read_array, read_json, write_array
from stonet.utils.config import parse_duration

from .test_configs import TMP_TEST_DIR

TINY_RUN = """\
n_train: 2
n_test: 1
solver:
  t_end: 28800
sampling:
  n_dense: 20
  n_uniform: 10
train:
  epochs: 3
  batch_size: 32
  log_every: 1
  windows: [1, 2]
  operator:
    arch: stonet
    width: 6
    branch_depth: 2
    trunk_depth: 2
    root_depth: 2
    blocks: 1
sweep:
  archs: [stonet, endeeponet]
  widths: [6]
  depths: [2]
  root_depths: [2]
  blocks: [1]
  epochs: 2
"""


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob('*')) if p.is_file()}


class TestArguments(unittest.TestCase):
    def test_usage_errors(self):
        self.assertEqual(run_command([]), EXIT_USAGE)
        self.assertEqual(run_command(['fly']), EXIT_USAGE)
        self.assertEqual(run_command(['sample']), EXIT_USAGE)
        self.assertEqual(run_command(['repro', '--desk', '--full']), EXIT_USAGE)

    def test_version(self):
        self.assertEqual(run_command(['--version']), EXIT_OK)

    def test_profile_layers(self):
        args = build_parser().parse_args(['repro', '--desk-lite', '--base-seed', '4'])
        config = resolve_config(args)
        self.assertEqual(config.grid, '35x25')
        self.assertEqual(config.sampling.n_dense, 600)
        self.assertEqual(config.sampling.n_uniform, 300)
        self.assertEqual(config.base_seed, 4)
        self.assertEqual(config.train.operator.width, 50)

    def test_flag_overrides(self):
        args = build_parser().parse_args(['train', '--epochs', '3', '--grid', '14x10',
                                          '--out', str(TMP_TEST_DIR / 'cli' / 'flags')])
        config = resolve_config(args)
        self.assertEqual(config.train.epochs, 3)
        self.assertEqual(config.grid, '14x10')
        self.assertEqual(config.root, TMP_TEST_DIR / 'cli' / 'flags')

    def test_unknown_config_keys(self):
        path = TMP_TEST_DIR / 'cli' / 'bad.yaml'
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text('sampling:\n  n_sparse: 10\n')
        self.assertEqual(run_command(['sample', '--scenarios', '1', '--config', str(path)]),
                         EXIT_USAGE)

    def test_unknown_profile(self):
        self.assertEqual(run_command(['sample', '--scenarios', '1', '--profile', 'laptop']),
                         EXIT_USAGE)

    def test_bad_grid(self):
        self.assertEqual(run_command(['sample', '--scenarios', '1', '--grid', 'big']), EXIT_USAGE)

    def test_durations(self):
        self.assertEqual(parse_duration('36h'), 129600.0)
        self.assertEqual(parse_duration('1200'), 1200.0)
        self.assertEqual(parse_duration('20m'), 1200.0)
        self.assertEqual(parse_duration('1.5d'), 129600.0)
        for bad in ('', 'h', '-3h', '0', '36 hours', '2w'):
            with self.subTest(text=bad):
                with self.assertRaises(ConfigError):
                    parse_duration(bad)

    def test_simulate_flags(self):
        args = build_parser().parse_args(['simulate', '--scenario-dir', 'somewhere',
                                          '--dt', '1200', '--t-end', '36h'])
        config = resolve_config(args)
        self.assertEqual(args.scenario_dir, 'somewhere')
        self.assertEqual(config.solver.dt, 1200.0)
        self.assertEqual(config.solver.t_end, 129600.0)
        self.assertEqual(config.solver.n_steps, 108)

        short = resolve_config(build_parser().parse_args(['simulate', '--scenarios', '2',
                                                          '--t-end', '8h']))
        self.assertEqual(short.solver.t_end, 28800.0)
        self.assertEqual(short.solver.dt, 1200.0)

    def test_simulate_usage_errors(self):
        self.assertEqual(run_command(['simulate']), EXIT_USAGE)
        self.assertEqual(run_command(['simulate', '--scenarios', '1', '--scenario-dir', 'x']),
                         EXIT_USAGE)
        self.assertEqual(run_command(['simulate', '--scenarios', '1', '--t-end', 'soon']),
                         EXIT_USAGE)
        # 7 h is not a whole number of 4 h snapshots
        self.assertEqual(run_command(['simulate', '--scenarios', '1', '--t-end', '7h']),
                         EXIT_USAGE)

    def test_dataset_flags(self):
        args = build_parser().parse_args(['dataset', 'build', '--sims-dir', 'sims', '--n-dense', '10',
                                          '--n-uniform', '5', '--seed', '1', '--with-velocity'])
        config = resolve_config(args)
        self.assertEqual(args.sims_dir, 'sims')
        self.assertEqual((config.sampling.n_dense, config.sampling.n_uniform), (10, 5))
        self.assertEqual(config.sampling.seed, 1)
        self.assertTrue(config.sampling.with_velocity)

        plain = resolve_config(build_parser().parse_args(['dataset', 'build']))
        self.assertFalse(plain.sampling.with_velocity)
        self.assertEqual(plain.sampling.n_dense, 1000)


class TestPipelineConfig(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ConfigError):
            PipelineConfig.from_dict({'n_train': 0})
        with self.assertRaises(ConfigError):
            PipelineConfig.from_dict({'base_seed': -1})
        with self.assertRaises(ConfigError):
            PipelineConfig.from_dict({'solver': {'coupling_iterations': 9}})

    def test_split(self):
        config = PipelineConfig(n_train=3, n_test=2)
        self.assertEqual(config.train_ids, [0, 1, 2])
        self.assertEqual(config.test_ids, [3, 4])


class TestStages(unittest.TestCase):
    def setUp(self):
        self.out = TMP_TEST_DIR / 'cli' / 'stages'
        shutil.rmtree(self.out, ignore_errors=True)

    def test_sample(self):
        argv = ['sample', '--scenarios', '2', '--start', '3', '--grid', '14x10', '--jobs', '1',
                '--out', str(self.out)]
        self.assertEqual(run_command(argv), EXIT_OK)
        grid = Grid(14, 10)
        directory = self.out / 'scenarios' / 'scenario_0004'
        meta = read_json(directory / 'meta.json')
        self.assertEqual(meta['scenario']['index'], 4)
        self.assertEqual(meta['stage'], 'sample')
        k = read_array(directory / 'kfield.bin', meta['shapes']['kfield'])
        self.assertEqual(k.shape, (grid.n_quad, 3))
        self.assertTrue(np.all(np.isfinite(k)))

        # same seed, same bytes, wherever the output goes
        again = TMP_TEST_DIR / 'cli' / 'stages_again'
        shutil.rmtree(again, ignore_errors=True)
        argv[-1] = str(again)
        self.assertEqual(run_command(argv), EXIT_OK)
        self.assertEqual(tree_bytes(self.out / 'scenarios'), tree_bytes(again / 'scenarios'))

    def test_simulate(self):
        config = TMP_TEST_DIR / 'cli' / 'short.yaml'
        config.parent.mkdir(parents=True, exist_ok=True)
        config.write_text('solver:\n  t_end: 28800\n')
        argv = ['simulate', '--scenarios', '1', '--grid', '14x10', '--jobs', '1',
                '--config', str(config), '--out', str(self.out)]
        self.assertEqual(run_command(argv), EXIT_OK)
        snap = read_snapshots(self.out / 'simulations' / 'scenario_0000')
        self.assertEqual(list(snap.series.times_h), [0.0, 4.0, 8.0])
        self.assertEqual(snap.series.c.shape, (3, Grid(14, 10).n_nodes))
        self.assertIn('0', read_json(self.out / 'timings.json'))

    def test_snapshots_independent_of_out_dir(self):
        config = TMP_TEST_DIR / 'cli' / 'short.yaml'
        config.parent.mkdir(parents=True, exist_ok=True)
        config.write_text('solver:\n  t_end: 28800\n')
        trees = []
        for name, jobs in (('a', '1'), ('b', '3')):
            out = self.out / name
            argv = ['simulate', '--scenarios', '1', '--base-seed', '7', '--grid', '14x10',
                    '--jobs', jobs, '--config', str(config), '--out', str(out)]
            self.assertEqual(run_command(argv), EXIT_OK)
            trees.append(tree_bytes(out / 'simulations' / 'scenario_0000'))
        self.assertIn('meta.json', trees[0])
        self.assertIn('c_t8.bin', trees[0])
        self.assertEqual(sorted(trees[0]), sorted(trees[1]))
        for name in trees[0]:
            self.assertEqual(trees[0][name], trees[1][name], name)
        self.assertNotIn(str(self.out), trees[0]['meta.json'].decode())

    def test_simulate_from_scenario_dir(self):
        base = ['--grid', '14x10', '--jobs', '1', '--base-seed', '3', '--out', str(self.out)]
        self.assertEqual(run_command(['sample', '--scenarios', '2'] + base), EXIT_OK)
        argv = ['simulate', '--scenario-dir', str(self.out), '--dt', '1200', '--t-end', '8h'] + base
        self.assertEqual(run_command(argv), EXIT_OK)
        for index in (0, 1):
            snap = read_snapshots(self.out / 'simulations' / f'scenario_{index:04d}')
            self.assertEqual(snap.meta['scenario']['index'], index)
            self.assertEqual(list(snap.series.times_h), [0.0, 4.0, 8.0])
            sampled = read_array(self.out / 'scenarios' / f'scenario_{index:04d}' / 'kfield.bin',
                                 snap.meta['shapes']['kfield'])
            np.testing.assert_array_equal(snap.permeability.as_array(), sampled)

        # one scenario directory on its own, into a fresh output root
        single = self.out / 'scenarios' / 'scenario_0001'
        other = self.out / 'single'
        argv = ['simulate', '--scenario-dir', str(single), '--t-end', '8h', '--grid', '14x10',
                '--jobs', '1', '--out', str(other)]
        self.assertEqual(run_command(argv), EXIT_OK)
        self.assertEqual([d.name for d in (other / 'simulations').iterdir()], ['scenario_0001'])

    def test_tampered_scenario_dir(self):
        base = ['--grid', '14x10', '--jobs', '1', '--out', str(self.out)]
        self.assertEqual(run_command(['sample', '--scenarios', '1'] + base), EXIT_OK)
        directory = self.out / 'scenarios' / 'scenario_0000'
        meta = read_json(directory / 'meta.json')
        k = read_array(directory / 'kfield.bin', meta['shapes']['kfield'])
        write_array(directory / 'kfield.bin', k * 2.0)
        config = PipelineConfig(out_dir=str(self.out), grid='14x10')
        with self.assertRaises(DatasetFormatError):
            load_sampled_scenario(directory, config)
        self.assertEqual(run_command(['simulate', '--scenario-dir', str(directory)] + base),
                         EXIT_STAGE)

    def test_nothing_to_simulate(self):
        self.out.mkdir(parents=True)
        with self.assertRaises(StonetError):
            artifact_dirs(self.out, 'scenarios')
        argv = ['simulate', '--scenario-dir', str(self.out), '--grid', '14x10', '--out', str(self.out)]
        self.assertEqual(run_command(argv), EXIT_STAGE)

    def test_missing_simulations(self):
        config = PipelineConfig(out_dir=str(self.out), grid='14x10', n_train=2, n_test=1)
        with self.assertRaises(StageError) as ctx:
            stage_dataset(config)
        self.assertEqual(ctx.exception.stage, 'dataset')
        argv = ['dataset', 'build', '--grid', '14x10', '--out', str(self.out)]
        self.assertEqual(run_command(argv), EXIT_STAGE)


class TestTinyRun(unittest.TestCase):
    """ Every stage through `run_command` on a 14 x 10 grid over 8 simulated hours. """

    def setUp(self):
        self.out = TMP_TEST_DIR / 'cli' / 'tiny'
        shutil.rmtree(self.out, ignore_errors=True)
        self.out.mkdir(parents=True)
        self.config = self.out.parent / 'tiny.yaml'
        self.config.write_text(TINY_RUN)

    def run_stage(self, *argv):
        common = ['--grid', '14x10', '--jobs', '1', '--base-seed', '5',
                  '--config', str(self.config), '--out', str(self.out)]
        self.assertEqual(run_command(list(argv) + common), EXIT_OK, argv)

    def test_stages(self):
        self.run_stage('sample', '--scenarios', '3')
        self.run_stage('simulate', '--scenario-dir', str(self.out), '--dt', '1200', '--t-end', '8h')
        self.run_stage('dataset', 'build', '--sims-dir', str(self.out), '--n-dense', '20',
                       '--n-uniform', '10', '--seed', '1')
        self.run_stage('train')
        self.run_stage('eval')
        self.run_stage('rollout')

        manifest = read_json(self.out / 'dataset' / 'manifest.json')
        self.assertEqual(manifest['train_ids'], [0, 1])
        self.assertEqual(manifest['points_per_snapshot'], [20, 10])
        for rel in ('train/checkpoint/model.json', 'train/checkpoint/weights.bin',
                    'train/loss_history.csv', 'train/meta.json',
                    'eval/metrics.json', 'eval/metrics.csv',
                    'eval/error_hist.gp', 'eval/abs_error_hist.dat',
                    'eval/error_vs_time.gp', 'eval/error_vs_time.dat',
                    'rollout/scenario_0002/meta.json', 'rollout/scenario_0002/c_t8.bin',
                    'rollout/figures/scenario_0002/field_maps.gp',
                    'rollout/figures/scenario_0002/field_t8h.dat'):
            with self.subTest(artifact=rel):
                self.assertTrue((self.out / rel).is_file())

        metrics = read_json(self.out / 'eval' / 'metrics.json')
        self.assertEqual(metrics['times_h'], [0.0, 4.0, 8.0])
        script = (self.out / 'rollout' / 'figures' / 'scenario_0002' / 'field_maps.gp').read_text()
        self.assertIn("splot 'field_t8h.dat' using 1:2:4", script)

    def test_repro_writes_summary(self):
        code = run_command(['repro', '--desk', '--grid', '14x10', '--jobs', '1',
                            '--config', str(self.config), '--out', str(self.out)])
        self.assertIn(code, (EXIT_OK, EXIT_ACCEPTANCE))
        summary = read_json(self.out / 'summary.json')
        self.assertEqual(summary['passed'], code == EXIT_OK)
        checks = {c['name']: c for c in summary['checks']}
        self.assertIn('determinism', checks)
        self.assertEqual(checks['determinism']['status'], 'skipped')
        self.assertNotIn('out_dir', summary['config'])
        self.assertIn('Overall:', (self.out / 'summary.md').read_text())
        for rel in ('sweep/sweep.csv', 'sweep/loss_vs_params.gp', 'train/loss_history.gp',
                    'rollout/figures/scenario_0002/field_maps.gp'):
            with self.subTest(artifact=rel):
                self.assertTrue((self.out / rel).is_file())


if __name__ == '__main__':
    unittest.main()
