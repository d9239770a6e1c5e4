import math
import unittest

import numpy as np
import torch

from stonet.dataset import (
    DatasetManifest,
    NormalizationStats,
    RecordTable,
    columns_for,
    concentration_rate,
    write_dataset
)
from stonet.errors import ConfigError, DatasetFormatError, TrainingError
from stonet.harness import Metrics, SweepSpec, TrainConfig, evaluate, sweep, train, write_metrics
from stonet.harness.acceptance import (
    CheckResult,
    all_passed,
    check_architecture_trend,
    check_determinism,
    check_flatness,
    check_relative_error,
    check_rollout_identity,
    check_speedup,
    run_check
)
from stonet.harness.evaluation import BIN_EDGES, C_FLOOR, histogram
from stonet.harness.plots import (
    field_map_snapshots,
    plot_error_histograms,
    plot_field_maps,
    plot_loss_history,
    plot_loss_vs_parameters
)
from stonet.harness.sweep import (
    enumerate_configs,
    matched_pairs,
    read_sweep,
    stonet_win_fraction
)
from stonet.harness.training import final_window_loss
from stonet.operator import OperatorConfig, build_operator, parameter_count
from stonet.scenario import generate_scenario
from stonet.simulator.grid import Grid
from stonet.simulator.run import TimeSeries
from stonet.simulator.store import SnapshotDirectory

from .test_configs import TMP_TEST_DIR


def random_table(n: int = 96, seed: int = 0, with_velocity: bool = False) -> RecordTable:
    rng = np.random.default_rng(seed)
    columns = columns_for(with_velocity)
    data = rng.normal(size=(n, len(columns)))
    data[:, :3] = 0.0
    return RecordTable(data, columns)


def tiny_operator(arch: str = 'stonet', **overrides) -> dict:
    params = dict(arch=arch, width=6, branch_depth=2, trunk_depth=2, root_depth=1, blocks=1)
    params.update(overrides)
    return params


def held_out_scenarios(n: int = 2, seed: int = 0):
    grid = Grid(6, 4)
    snaps = []
    for index in range(n):
        rng = np.random.default_rng(seed + index)
        c = np.cumsum(rng.uniform(0.0, 0.1, (4, grid.n_nodes)), axis=0)
        c[0] = 0.0
        series = TimeSeries(times_h=4.0 * np.arange(4), c=c, p=np.zeros_like(c),
                            v=np.zeros((4, grid.n_quad, 2)), scenario={'index': index})
        scenario = generate_scenario(seed, index, grid)
        meta = {'scenario': {'p_left_offset_pa': 4996.0, 'p_right_offset_pa': 4986.0}}
        snaps.append(SnapshotDirectory(series=series, permeability=scenario.permeability,
                                       grid=grid, meta=meta))
    return snaps


def exact_predictor(snap):
    rates = concentration_rate(snap.series)
    return lambda c, k: rates[k - 1]


def noisy_predictor(snap):
    """ Rollout lands on c_true plus 1% of the snapshot scale, sign-alternating. """
    series = snap.series
    dt = series.times_h[1] - series.times_h[0]
    signs = np.where(np.arange(series.c.shape[1]) % 2 == 0, 1.0, -1.0)
    scale = np.maximum(np.max(np.abs(series.c), axis=1), C_FLOOR)
    target = series.c + 0.01 * scale[:, None] * signs
    return lambda c, k: (target[k] - c) / dt


class TestTraining(unittest.TestCase):
    def setUp(self):
        self.table = random_table()
        self.stats = NormalizationStats.of(self.table)
        self.config = TrainConfig.from_dict({'epochs': 4, 'batch_size': 16, 'seed': 3,
                                             'operator': tiny_operator()})

    def test_deterministic(self):
        a = train(self.table, self.stats, self.config)
        b = train(self.table, self.stats, self.config)
        self.assertEqual(a.history, b.history)
        for p, q in zip(a.model.parameters(), b.model.parameters()):
            torch.testing.assert_close(p, q, rtol=0.0, atol=0.0)
        self.assertEqual(len(a.history), 4)
        self.assertEqual(a.optimizer.step_count, 4 * 6)

    def test_zero_learning_rate(self):
        config = self.config.merged({'lr': 0.0})
        reference = build_operator(config.operator, self.stats)
        result = train(self.table, self.stats, config)
        for p, q in zip(result.model.parameters(), reference.parameters()):
            torch.testing.assert_close(p, q, rtol=0.0, atol=0.0)

    def test_loss_decreases(self):
        config = self.config.merged({'epochs': 60, 'lr': 1e-2})
        result = train(self.table, self.stats, config)
        self.assertLess(result.history[-1], result.history[0])

    def test_non_finite_target(self):
        data = self.table.data.copy()
        data[5, -1] = np.nan
        table = RecordTable(data, self.table.columns)
        with self.assertRaises(TrainingError) as ctx:
            train(table, NormalizationStats.of(table), self.config)
        self.assertEqual((ctx.exception.epoch, ctx.exception.batch), (1, 0))

    def test_velocity_mismatch(self):
        with self.assertRaises(ConfigError):
            train(random_table(with_velocity=True), self.stats, self.config)

    def test_exponential_schedule(self):
        config = self.config.merged({'lr_schedule': 'exponential', 'lr_decay': 0.5})
        result = train(self.table, self.stats, config)
        lr = result.optimizer.optimizer.param_groups[0]['lr']
        self.assertAlmostEqual(lr, 1e-3 * 0.5 ** 4, places=15)

    def test_outputs(self):
        out_dir = TMP_TEST_DIR / 'train'
        result = train(self.table, self.stats, self.config.merged({'checkpoint_every': 2}),
                       out_dir=out_dir)
        lines = (out_dir / 'loss_history.csv').read_text().splitlines()
        self.assertEqual(lines[0], 'epoch,loss')
        self.assertEqual(len(lines), 5)
        self.assertEqual(float(lines[-1].split(',')[1]), result.history[-1])
        self.assertTrue((out_dir / 'checkpoint' / 'model.json').exists())

    def test_final_window(self):
        self.assertEqual(final_window_loss([4.0, 3.0, 2.0, 1.0], 2), 1.5)
        self.assertEqual(final_window_loss([4.0, 2.0], 20), 3.0)
        self.assertTrue(math.isnan(final_window_loss([], 20)))

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            TrainConfig.from_dict({'lr_schedule': 'cosine'})
        with self.assertRaises(ConfigError):
            TrainConfig.from_dict({'operator': {'depth': 3}})


class TestEvaluation(unittest.TestCase):
    def setUp(self):
        self.snaps = held_out_scenarios()

    def test_exact_rates(self):
        metrics = evaluate(exact_predictor, self.snaps)
        self.assertLess(max(metrics.mean_abs_c), 1e-10)
        self.assertLess(max(metrics.mean_abs_rate), 1e-10)
        self.assertLess(metrics.mean_relative_error, 1e-10)

    def test_one_percent_noise(self):
        metrics = evaluate(noisy_predictor, self.snaps)
        self.assertTrue(0.005 <= metrics.mean_relative_error <= 0.02)
        for k in range(1, len(metrics.times_h)):
            self.assertAlmostEqual(metrics.mean_rel_c[k], 0.01, places=12)

    def test_histogram_counts(self):
        metrics = evaluate(noisy_predictor, self.snaps)
        per_time = metrics.n_scenarios * metrics.n_nodes
        for row in metrics.abs_hist_c + metrics.rel_hist_c:
            self.assertEqual(sum(row), per_time)
        for row in metrics.abs_hist_rate:
            self.assertEqual(sum(row), per_time)
        self.assertEqual(metrics.n_samples, per_time * 4)

    def test_histogram_clips(self):
        counts = histogram(np.array([0.0, 1e-20, 1e5, 1e-3]))
        self.assertEqual(counts.sum(), 4)
        self.assertEqual(counts[0], 2)
        self.assertEqual(counts[-1], 1)
        self.assertEqual(len(BIN_EDGES), 27)

    def test_model_evaluation(self):
        model = build_operator(OperatorConfig(**tiny_operator('deeponet')))
        metrics = evaluate(model, self.snaps, final_window_loss={'20': 0.5})
        self.assertEqual(len(metrics.mean_rel_c), 4)
        self.assertEqual(metrics.mean_abs_c[0], 0.0)
        self.assertEqual(metrics.to_dict()['final_window_loss'], {'20': 0.5})

    def test_mismatched_scenarios(self):
        snaps = self.snaps
        short = snaps[1].series
        snaps[1].series = TimeSeries(times_h=short.times_h[:3], c=short.c[:3], p=short.p[:3],
                                     v=short.v[:3])
        with self.assertRaises(DatasetFormatError):
            evaluate(exact_predictor, snaps)

    def test_single_snapshot(self):
        snap = self.snaps[0]
        series = snap.series
        snap.series = TimeSeries(times_h=series.times_h[:1], c=series.c[:1], p=series.p[:1],
                                 v=series.v[:1])
        with self.assertRaises(DatasetFormatError):
            evaluate(exact_predictor, [snap])

    def test_write_metrics(self):
        metrics = evaluate(noisy_predictor, self.snaps)
        out_dir = write_metrics(metrics, TMP_TEST_DIR / 'eval')
        lines = (out_dir / 'metrics.csv').read_text().splitlines()
        self.assertTrue(lines[0].startswith('#'))
        self.assertEqual(lines[1], 't_h,mean_abs_c,mean_rel_c,mean_abs_rate,mean_rel_rate')
        self.assertEqual(len(lines), 2 + 4)
        self.assertTrue((out_dir / 'metrics.json').exists())
        plot_error_histograms(metrics, out_dir)
        self.assertTrue((out_dir / 'rel_error_hist.dat').exists())


class TestSweep(unittest.TestCase):
    def test_default_grid(self):
        configs = enumerate_configs(SweepSpec())
        archs = [c.arch for c in configs]
        self.assertEqual(archs.count('stonet'), 36)
        self.assertEqual(archs.count('endeeponet'), 18)
        self.assertTrue(all(c.blocks == 0 for c in configs if c.arch != 'stonet'))

    def test_parameters_grow_with_size(self):
        for arch in ('stonet', 'endeeponet'):
            for key in ('width', 'branch_depth', 'root_depth'):
                counts = [parameter_count(OperatorConfig(arch=arch, **{key: v})) for v in (2, 4, 8)]
                self.assertEqual(counts, sorted(set(counts)))

    def test_empty_grid(self):
        with self.assertRaises(ConfigError):
            SweepSpec.from_dict({'widths': []})

    def test_tiny_sweep(self):
        table = random_table(64)
        stats = NormalizationStats.of(table)
        path = write_dataset(table, stats, DatasetManifest(train_ids=[0]), TMP_TEST_DIR / 'sweep' / 'dataset')
        spec = SweepSpec.from_dict({'archs': ['stonet', 'endeeponet'], 'widths': [4],
                                    'depths': [1, 2], 'root_depths': [1], 'blocks': [1],
                                    'epochs': 2})
        base = TrainConfig.from_dict({'batch_size': 32, 'operator': tiny_operator()})
        entries = sweep(spec, path, base, out_dir=TMP_TEST_DIR / 'sweep')
        self.assertEqual(len(entries), 4)
        self.assertTrue(all(e.status == 'ok' for e in entries))
        self.assertEqual([e.params for e in entries], sorted(e.params for e in entries))
        self.assertEqual(len(matched_pairs(entries)), 2)
        self.assertTrue(0.0 <= stonet_win_fraction(entries) <= 1.0)
        rows = read_sweep(TMP_TEST_DIR / 'sweep' / 'sweep.csv')
        self.assertEqual(len(rows), 4)
        plot_loss_vs_parameters(entries, TMP_TEST_DIR / 'sweep' / 'figures')
        self.assertTrue((TMP_TEST_DIR / 'sweep' / 'figures' / 'loss_vs_params.gp').exists())


class TestAcceptance(unittest.TestCase):
    def test_run_check_catches(self):
        def broken():
            raise RuntimeError('boom')
        result = run_check('broken', broken)
        self.assertFalse(result.passed)
        self.assertIn('boom', result.detail)
        self.assertIsNone(result.to_dict()['value'])

    def test_thresholds(self):
        self.assertTrue(check_relative_error(0.05).passed)
        self.assertFalse(check_relative_error(0.2).passed)
        self.assertTrue(check_speedup(100.0, 1.0).passed)
        self.assertFalse(check_speedup(5.0, 1.0).passed)
        self.assertTrue(check_architecture_trend(0.75, 4).passed)
        self.assertFalse(check_architecture_trend(1.0, 0).passed)

    def test_flatness(self):
        metrics = evaluate(noisy_predictor, held_out_scenarios())
        metrics.times_h = [0.0, 8.0, 16.0, 36.0]
        self.assertTrue(check_flatness(metrics).passed)

    def test_rollout_identity(self):
        self.assertTrue(check_rollout_identity(held_out_scenarios()).passed)

    def test_determinism(self):
        digests = {'a': '1', 'b': '2'}
        first = check_determinism(digests, None)
        self.assertEqual(first.status, 'skipped')
        self.assertFalse(first.passed)
        self.assertEqual(first.to_dict()['status'], 'skipped')
        self.assertEqual(check_determinism(digests, dict(digests)).status, 'pass')
        self.assertEqual(check_determinism(digests, {'a': '1', 'b': '3'}).status, 'FAIL')

    def test_all_passed(self):
        ok = CheckResult('a', True, 0.0, 0.0)
        bad = CheckResult('b', False, 1.0, 0.0)
        skipped = CheckResult('c', False, 0.0, 0.0, skipped=True)
        self.assertTrue(all_passed([ok]))
        self.assertTrue(all_passed([ok, skipped]))
        self.assertFalse(all_passed([ok, bad, skipped]))

    def test_loss_history_plot(self):
        path = plot_loss_history({'stonet': [1.0, 0.5]}, TMP_TEST_DIR / 'figures')
        self.assertTrue(path.exists())
        self.assertEqual(len((path.parent / 'loss_stonet.dat').read_text().splitlines()), 3)

    def test_field_map_snapshots(self):
        self.assertEqual(field_map_snapshots(10), [1, 5, 9])
        self.assertEqual(field_map_snapshots(2), [1])
        self.assertEqual(field_map_snapshots(1), [])

    def test_field_maps(self):
        grid = Grid(3, 2)
        times = [0.0, 4.0, 8.0]
        c_true = np.stack([np.zeros(grid.n_nodes), np.full(grid.n_nodes, 0.4),
                           np.linspace(0.0, 1.0, grid.n_nodes)])
        c_pred = c_true + 0.01
        out = TMP_TEST_DIR / 'figures' / 'field_maps'
        path = plot_field_maps(grid, times, c_true, c_pred, out)
        self.assertEqual(path.name, 'field_maps.gp')

        lines = (out / 'field_t8h.dat').read_text().splitlines()
        self.assertEqual(lines[0], '# x y c_true c_pred dc_true dc_pred')
        rows = [line for line in lines[1:] if line]
        # a blank line closes each of the ny + 1 rows of nodes
        self.assertEqual(lines[1:].count(''), grid.ny + 1)
        self.assertEqual(len(rows), grid.n_nodes)
        table = np.array([[float(v) for v in row.split()] for row in rows])
        np.testing.assert_allclose(table[:, :2], grid.nodes, rtol=0, atol=1e-15)
        np.testing.assert_allclose(table[:, 2], c_true[2], rtol=0, atol=1e-15)
        np.testing.assert_allclose(table[:, 3], c_pred[2], rtol=0, atol=1e-15)
        np.testing.assert_allclose(table[:, 4], (c_true[2] - c_true[1]) / 4.0, rtol=0, atol=1e-15)
        np.testing.assert_allclose(table[:, 5], table[:, 4], rtol=0, atol=1e-15)

        script = path.read_text()
        for name in ('field_t4h', 'field_t8h'):
            self.assertIn(f"set output '{name}.png'", script)
            for column in (3, 4, 5, 6):
                self.assertIn(f"splot '{name}.dat' using 1:2:{column} notitle", script)

    def test_field_maps_need_matching_fields(self):
        grid = Grid(3, 2)
        with self.assertRaises(ValueError):
            plot_field_maps(grid, [0.0, 4.0], np.zeros((2, grid.n_nodes)),
                            np.zeros((2, grid.n_nodes + 1)), TMP_TEST_DIR / 'figures' / 'bad')
        with self.assertRaises(ValueError):
            plot_field_maps(grid, [0.0, 4.0], np.zeros((2, grid.n_nodes)),
                            np.zeros((2, grid.n_nodes)), TMP_TEST_DIR / 'figures' / 'bad',
                            snapshots=[0])


class TestMetricsSerialization(unittest.TestCase):
    def test_to_dict(self):
        metrics = Metrics(times_h=[0.0, 4.0], n_scenarios=1, n_nodes=2, bin_edges=[1e-12, 1.0],
                          abs_hist_c=[[2], [2]], rel_hist_c=[[2], [2]], mean_abs_c=[0.0, 0.1],
                          mean_rel_c=[0.0, 0.2], abs_hist_rate=[[2]], rel_hist_rate=[[2]],
                          mean_abs_rate=[0.01], mean_rel_rate=[0.3])
        d = metrics.to_dict()
        self.assertEqual(d['n_samples'], 4)
        self.assertEqual(d['mean_relative_error'], 0.2)
        self.assertEqual(metrics.relative_error_at(3.0), 0.2)


if __name__ == '__main__':
    unittest.main()
