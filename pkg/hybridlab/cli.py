"""
Command-line entry points: train, eval, gradcheck, synth and grid.

Exit codes: 0 success, 1 usage or configuration error, 2 data, storage or
checkpoint format error, 3 numeric failure (including a failed gradient check).
"""
import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from hybridlab.config import REPO_DIR, load_run_config
from hybridlab.datapipe import synth_generate
from hybridlab.errors import HybridLabError, NumericError
from hybridlab.gradcheck import cmd_gradcheck
from hybridlab.grid import cmd_grid
from hybridlab.metrics import CSV_COLUMNS
from hybridlab.training import cmd_eval, train

logger = logging.getLogger('hybridlab')

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def main(argv=None) -> int:
    """
    Main execution function: initializes the environment, parses the command line and runs the command.

    Args:
        argv (list[str] | None): Arguments without the program name; sys.argv[1:] when None.

    Returns:
        int: The process exit code.
    """
    init()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except HybridLabError as e:
        logger.error('%s: %s', type(e).__name__, ' '.join(str(e).splitlines()))
        return e.exit_code
    except FileNotFoundError as e:
        logger.error('FileNotFoundError: %s', e)
        return 2


def init():
    """
    Initialize the configuration for the application.

    This function loads environment variables from the .env file in the repository root,
    configures logging and records the defaults file and worker count in the module-level
    `config` dictionary.

    Environment:
        HYBRIDLAB_LOG_LEVEL: Logging level name, INFO by default.
        HYBRIDLAB_CONFIG: Defaults file used instead of the repository's config.json.
        HYBRIDLAB_WORKERS: Data worker threads when a run does not set `workers`.
    """
    global config

    load_dotenv(os.path.join(REPO_DIR, '.env'))
    level = os.environ.get('HYBRIDLAB_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)

    defaults_path = os.environ.get('HYBRIDLAB_CONFIG') or os.path.join(REPO_DIR, 'config.json')
    config = {'defaults_path': defaults_path, 'workers': None}
    workers = os.environ.get('HYBRIDLAB_WORKERS')
    if workers:
        try:
            config['workers'] = int(workers)
        except ValueError:
            logger.warning('Ignoring HYBRIDLAB_WORKERS=%r, not an integer', workers)


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='hybridlab', description='Hybrid VGG + MobileNet feature-fusion classifier.')
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    train_parser = commands.add_parser('train', help='train a classifier on a dataset directory')
    train_parser.add_argument('--config', help='run configuration file (key=value lines or JSON)')
    train_parser.add_argument('--data', required=True, help='dataset root with normal/ and all/ subdirectories')
    train_parser.add_argument('--out', required=True, help='run directory')
    train_parser.add_argument('--seed', type=int)
    train_parser.add_argument('--epochs', type=int)
    train_parser.add_argument('--workers', type=int)
    train_parser.add_argument('--single-thread', action='store_true', default=None)
    train_parser.add_argument('--resume', help='checkpoint to continue from')
    train_parser.set_defaults(handler=run_train)

    eval_parser = commands.add_parser('eval', help='evaluate a checkpoint on one split')
    eval_parser.add_argument('--ckpt', required=True)
    eval_parser.add_argument('--data', required=True)
    eval_parser.add_argument('--split', choices=('train', 'val', 'test'), default='test')
    eval_parser.add_argument('--config', help='run configuration the checkpoint must match')
    eval_parser.add_argument('--out', help='CSV to append the row to (default: eval.csv next to the checkpoint)')
    eval_parser.set_defaults(handler=run_eval)

    grad_parser = commands.add_parser('gradcheck', help='check every backward pass against finite differences')
    grad_parser.add_argument('--seed', type=int, default=0)
    grad_parser.set_defaults(handler=run_gradcheck)

    synth_parser = commands.add_parser('synth', help='write a synthetic two-class dataset')
    synth_parser.add_argument('--out', required=True)
    synth_parser.add_argument('--per-class', type=int, default=200)
    synth_parser.add_argument('--size', type=int, default=64)
    synth_parser.add_argument('--seed', type=int, default=0)
    synth_parser.set_defaults(handler=run_synth)

    grid_parser = commands.add_parser('grid', help='run the optimizer x normalization grid and the architecture comparison')
    grid_parser.add_argument('--config', help='base run configuration file')
    grid_parser.add_argument('--data', required=True)
    grid_parser.add_argument('--out', required=True)
    grid_parser.add_argument('--seeds', type=int, nargs='+', help='seeds per cell; the table holds medians')
    grid_parser.add_argument('--epochs', type=int)
    grid_parser.add_argument('--single-thread', action='store_true', default=None)
    grid_parser.set_defaults(handler=run_grid)
    return parser


def _run_config(args, **overrides):
    values = {'workers': config.get('workers')}
    values.update(overrides)
    return load_run_config(getattr(args, 'config', None), values, config['defaults_path'])


def _print_row(row, columns=CSV_COLUMNS):
    print(','.join(columns))
    print(','.join(str(value) for value in row))


def run_train(args) -> int:
    run_config = _run_config(args, seed=args.seed, epochs=args.epochs, single_thread=args.single_thread,
                             **({'workers': args.workers} if args.workers else {}))
    result = train(run_config, args.data, args.out, resume=args.resume)
    _print_row(result.report.row(result.best_epoch, 'test'))
    return 0


def run_eval(args) -> int:
    run_config = _run_config(args) if args.config else None
    report = cmd_eval(args.ckpt, args.data, args.split, run_config, args.out)
    _print_row(report.row(0, args.split)[1:], CSV_COLUMNS[1:])
    return 0


def run_gradcheck(args) -> int:
    report = cmd_gradcheck(args.seed)
    print('\n'.join(report.lines()))
    if not report.passed:
        raise NumericError(f"Gradient check failed for {', '.join(report.failures)}")
    return 0


def run_synth(args) -> int:
    written = synth_generate(args.out, args.per_class, args.size, args.seed)
    for name, paths in written.items():
        print(f"{name}: {len(paths)} images")
    return 0


def run_grid(args) -> int:
    run_config = _run_config(args, epochs=args.epochs, single_thread=args.single_thread)
    table = cmd_grid(args.data, args.out, run_config, args.seeds)
    print(table.to_string(index=False))
    return 0


config = {'defaults_path': os.path.join(REPO_DIR, 'config.json'), 'workers': None}


if __name__ == '__main__':
    sys.exit(main())
