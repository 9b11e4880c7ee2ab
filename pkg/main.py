import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.rebact_harness.config import load_backend_config, load_run_config
from src.rebact_harness.env.tasks import default_universe, dump_tasks, generate_tasks, synthesize_universe
from src.rebact_harness.errors import AuthError, ConfigError, CorruptLog, IntegrityError, InvalidTask
from src.rebact_harness.orchestrator import EvaluationOrchestrator, cmd_report, cmd_run
from src.rebact_harness.server import cmd_serve

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE = 'rebact_harness.log'
BACKEND_KINDS = ('scripted', 'planner', 'faulty', 'http')

logger = logging.getLogger(__name__)


def configure_logging(log_file: Optional[Path] = None, verbose: bool = False):
    """Log to stderr, and to a file when one is given."""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Reflect-before-act agent evaluation harness')
    parser.add_argument('-v', '--verbose', action='store_true', help='Enable debug logging')
    subparsers = parser.add_subparsers(dest='command', required=True)

    run = subparsers.add_parser('run', help='Run episodes over task files')
    run.add_argument('--config', type=Path, help='Run configuration JSON file')
    run.add_argument('--agent', choices=['rebact', 'react'], help='Agent policy')
    run.add_argument('--backend', help=f'Backend config JSON file, or one of {", ".join(BACKEND_KINDS)}')
    run.add_argument('--tasks', nargs='+', help='Task files (override config)')
    run.add_argument('--format', dest='format_id', choices=['textcraft', 'alfworld', 'webshop'],
                     help='Reflection reply format')
    run.add_argument('--window', type=int, help='Reflection window W')
    run.add_argument('--budget', type=int, help='Maximum environment steps per episode')
    run.add_argument('--max-parse-retries', type=int, help='Re-prompts after an unparseable reply')
    run.add_argument('--seed', type=int, help='Run seed')
    run.add_argument('--jobs', type=int, help='Episodes in flight')
    run.add_argument('--out', help='Output directory')

    report = subparsers.add_parser('report', help='Re-aggregate and check finished runs, one row per run')
    report.add_argument('directories', nargs='+', type=Path, help='Run output directories')
    report.add_argument('--csv', type=Path, help='Also write the combined summary as CSV')

    serve = subparsers.add_parser('serve', help='Serve the crafting environment over a line protocol')
    serve.add_argument('--tasks', nargs='+', required=True, help='Task files')
    serve.add_argument('--stdio', action='store_true', help='Serve one session over stdin/stdout')
    serve.add_argument('--host', default='127.0.0.1', help='TCP host')
    serve.add_argument('--port', type=int, default=7878, help='TCP port')

    generate = subparsers.add_parser('generate', help='Write a task file of goals at one crafting depth')
    generate.add_argument('--depth', type=int, required=True, help='Crafts in the shortest plan')
    generate.add_argument('--n', type=int, required=True, help='Number of tasks')
    generate.add_argument('--seed', type=int, default=0, help='Sampling seed')
    generate.add_argument('--distractors', type=int, default=0, help='Unneeded recipes added per task')
    generate.add_argument('--synthetic', action='store_true', help='Use a generated universe instead of the default one')
    generate.add_argument('--out', type=Path, required=True, help='Task file to write')
    return parser


def run_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Command-line flags as a partial run config."""
    overrides: Dict[str, Any] = {
        'agent': {
            'policy': args.agent,
            'format_id': args.format_id,
            'window': args.window,
            'budget': args.budget,
            'max_parse_retries': args.max_parse_retries,
            'seed': args.seed,
        },
        'tasks': args.tasks,
        'jobs': args.jobs,
        'out': args.out,
    }
    if args.backend:
        backend_path = Path(args.backend)
        if backend_path.exists():
            overrides['backend'] = load_backend_config(backend_path).model_dump(exclude_unset=True)
        elif args.backend in BACKEND_KINDS:
            overrides['backend'] = {'kind': args.backend}
        else:
            raise ConfigError(f"Backend config not found: {args.backend}")
    return overrides


def dispatch(args: argparse.Namespace) -> int:
    if args.command == 'run':
        config = load_run_config(args.config, run_overrides(args))
        configure_logging(Path(config.out) / LOG_FILE, args.verbose)
        return cmd_run(config)

    if args.command == 'report':
        return cmd_report(args.directories, args.csv)

    if args.command == 'serve':
        config = load_run_config(overrides={'tasks': args.tasks})
        tasks = EvaluationOrchestrator(config).load_tasks()
        return cmd_serve(tasks, stdio=args.stdio, host=args.host, port=args.port)

    universe = synthesize_universe(args.seed) if args.synthetic else default_universe()
    tasks = generate_tasks(universe, args.depth, args.n, args.seed, distractors=args.distractors)
    dump_tasks(tasks, args.out)
    print(f"Wrote {len(tasks)} depth-{args.depth} tasks to {args.out}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(verbose=args.verbose)

    try:
        return dispatch(args)
    except (ConfigError, InvalidTask, AuthError) as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except (IntegrityError, CorruptLog) as e:
        logger.error(f"Integrity check failed: {e}")
        return 3
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
