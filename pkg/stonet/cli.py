"""
Command-line entry point.

    stonet sample    --scenarios N [--start I]
    stonet simulate  (--scenarios N [--start I] | --scenario-dir DIR) [--dt S] [--t-end T]
    stonet dataset build [--sims-dir DIR] [--n-dense N] [--n-uniform N] [--seed S]
                         [--with-velocity]
    stonet train     [--dataset DIR] [--epochs N]
    stonet sweep     [--dataset DIR] [--epochs N]
    stonet eval      [--checkpoint DIR]
    stonet rollout   [--checkpoint DIR] [--scenarios N] [--start I]
    stonet repro     --desk | --desk-lite | --full

Every subcommand takes `--profile`, `--config FILE` (JSON or YAML, layered
over the profile), `--base-seed`, `--out`, `--grid`, `--jobs` and
`--log-level`. Durations (`--dt`, `--t-end`) are seconds or take an s, m, h
or d suffix. Exit status: 0 success, 1 stage failure, 2 usage or config
error, 3 acceptance checks failed.
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional, Sequence

from stonet._version import __version__
from stonet.errors import ConfigError, StageError, StonetError
from stonet.harness import acceptance
from stonet.pipeline import (
    PipelineConfig,
    artifact_dirs,
    run_repro,
    stage_dataset,
    stage_eval,
    stage_rollout,
    stage_sample,
    stage_simulate,
    stage_sweep,
    stage_train
)
from stonet.utils.config import deep_merge, load_config_file, load_profile, parse_duration

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_USAGE = 2
EXIT_ACCEPTANCE = 3


def _duration(text: str) -> float:
    try:
        return parse_duration(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--profile', default='desk', help='packaged profile (desk, desk-lite, full)')
    common.add_argument('--config', help='JSON or YAML file layered over the profile')
    common.add_argument('--base-seed', type=int, help='seed every random draw derives from')
    common.add_argument('--out', help='output directory')
    common.add_argument('--grid', help='grid as NXxNY, e.g. 70x50')
    common.add_argument('--jobs', type=int, help='worker processes (default: logical cores)')
    common.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog='stonet', description=__doc__.split('\n')[1],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--version', action='version', version=f'stonet {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('sample', parents=[common])
    p.add_argument('--scenarios', type=int, required=True)
    p.add_argument('--start', type=int, default=0)

    p = sub.add_parser('simulate', parents=[common])
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--scenarios', type=int)
    source.add_argument('--scenario-dir',
                        help='sampled scenarios: one scenario directory, a directory of them '
                             'or an output root with scenarios/')
    p.add_argument('--start', type=int, default=0)
    p.add_argument('--dt', type=_duration, help='time step, e.g. 1200 or 20m')
    p.add_argument('--t-end', type=_duration, help='simulated time, e.g. 36h')

    p = sub.add_parser('dataset', parents=[common])
    p.add_argument('action', choices=['build'])
    p.add_argument('--sims-dir', help='simulations to sample (default: <out>/simulations)')
    p.add_argument('--n-dense', type=int, help='points per snapshot from the dense region')
    p.add_argument('--n-uniform', type=int, help='points per snapshot drawn uniformly')
    p.add_argument('--seed', type=int, help='point sampling seed')
    p.add_argument('--with-velocity', action='store_true', default=None,
                   help='add nodal velocity to the branch features')

    for name in ('train', 'sweep'):
        p = sub.add_parser(name, parents=[common])
        p.add_argument('--dataset', help='dataset directory (default: <out>/dataset)')
        p.add_argument('--epochs', type=int)

    p = sub.add_parser('eval', parents=[common])
    p.add_argument('--checkpoint')

    p = sub.add_parser('rollout', parents=[common])
    p.add_argument('--checkpoint')
    p.add_argument('--scenarios', type=int)
    p.add_argument('--start', type=int)

    p = sub.add_parser('repro', parents=[common])
    scale = p.add_mutually_exclusive_group(required=True)
    scale.add_argument('--desk', dest='scale', action='store_const', const='desk')
    scale.add_argument('--desk-lite', dest='scale', action='store_const', const='desk-lite')
    scale.add_argument('--full', dest='scale', action='store_const', const='full')
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """ Profile, then `--config`, then explicit flags. """
    profile = getattr(args, 'scale', None) or args.profile
    data = load_profile(profile)
    if args.config:
        data = deep_merge(data, load_config_file(args.config))
    overrides: Dict = {}
    for flag, key in (('base_seed', 'base_seed'), ('out', 'out_dir'), ('grid', 'grid'),
                      ('jobs', 'jobs')):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    epochs = getattr(args, 'epochs', None)
    if epochs is not None:
        overrides[args.command] = {'epochs': epochs}
    for section, keys in (('solver', ('dt', 't_end')),
                          ('sampling', ('n_dense', 'n_uniform', 'seed', 'with_velocity'))):
        values = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
        if values:
            overrides[section] = values
    return PipelineConfig.from_dict(deep_merge(data, overrides))


def _indices(config: PipelineConfig, args) -> List[int]:
    if args.scenarios is None:
        return config.test_ids
    start = args.start or 0
    return list(range(start, start + args.scenarios))


def _dispatch(config: PipelineConfig, args) -> int:
    command = args.command
    if command == 'sample':
        stage_sample(config, _indices(config, args))
    elif command == 'simulate':
        if args.scenario_dir:
            stage_simulate(config, scenario_dirs=artifact_dirs(args.scenario_dir, 'scenarios'))
        else:
            stage_simulate(config, _indices(config, args))
    elif command == 'dataset':
        stage_dataset(config, args.sims_dir)
    elif command == 'train':
        stage_train(config, args.dataset)
    elif command == 'sweep':
        stage_sweep(config, args.dataset)
    elif command == 'eval':
        stage_eval(config, args.checkpoint)
    elif command == 'rollout':
        stage_rollout(config, args.checkpoint, _indices(config, args))
    elif command == 'repro':
        checks = run_repro(config)
        if not acceptance.all_passed(checks):
            failed = [c.name for c in checks if c.status == 'FAIL']
            logger.error('acceptance checks failed: %s', ', '.join(failed))
            return EXIT_ACCEPTANCE
    return EXIT_OK


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse `argv`, run the subcommand and return the exit status.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        config = resolve_config(args)
    except ConfigError as e:
        logger.error('invalid configuration: %s', e)
        return EXIT_USAGE

    try:
        return _dispatch(config, args)
    except StageError as e:
        logger.error('%s', e)
        return EXIT_STAGE
    except StonetError as e:
        logger.error('%s failed: %s', args.command, e)
        return EXIT_STAGE


def main():
    sys.exit(run_command())
