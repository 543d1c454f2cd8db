"""
Meta Gibbs Verification Laboratory

This application checks the exact generalization identities and bounds of
meta-learning Gibbs algorithms on small enumerable instances and on the
Gaussian mean-estimation example, and writes machine-readable reports.

Run it as ``python -m src.main``.
"""

import argparse
import logging
import sys
from typing import List, Optional

from src.config import LOG_LEVEL, SUITES
from src.data_manager import DataManager
from src.errors import CheckFailed, ConfigInvalid, LabError
from src.suites import SuiteRunner

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

# Configure logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def setup_arg_parser():
    """Set up command-line argument parser."""
    parser = argparse.ArgumentParser(description='Meta Gibbs Verification Laboratory')

    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    run_parser = subparsers.add_parser('run', help='Run the experiment described by a config file')
    run_parser.add_argument('config', type=str, help='Path to a JSON experiment config')
    run_parser.add_argument('--seed', type=int, help='Master seed (overrides the config)')
    run_parser.add_argument('--trials', type=int, help='Monte Carlo trials (overrides the config)')
    run_parser.add_argument('--out', type=str, help='Output directory (overrides the config)')
    run_parser.add_argument('--cap', type=int, help='Enumeration state cap (overrides the config)')

    subparsers.add_parser('list-suites', help='List the built-in verification suites')

    hash_parser = subparsers.add_parser('verify-hash', help='Check that a report was produced from a config')
    hash_parser.add_argument('report', type=str, help='Path to a JSON report')
    hash_parser.add_argument('config', type=str, help='Path to the JSON experiment config')

    return parser


def run_experiment(args) -> dict:
    """
    Load the config, run its suite and write the report.

    Raises:
        ConfigInvalid: if the config is unreadable or fails validation
        CheckFailed: if any check misses its tolerance (the report is still written)
    """
    overrides = {
        'master_seed': args.seed,
        'trials': args.trials,
        'out_dir': args.out,
        'cap': args.cap,
    }
    config = DataManager().load_config(args.config, overrides)
    data_manager = DataManager(config.out_dir)
    report = SuiteRunner(config, data_manager).run()

    failed = [name for name, check in report['checks'].items() if not check['passed']]
    if failed:
        raise CheckFailed(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    logger.info(f"All {len(report['checks'])} checks passed for {report['experiment']}")
    return report


def list_suites():
    """Print the built-in verification suites."""
    print("\nVerification suites:")
    print(f"{'Suite':<18} | {'Anchor':<58} | {'Tolerance':<9}")
    print("-" * 91)
    for name, anchor, tolerance in SUITES:
        print(f"{name:<18} | {anchor:<58} | {tolerance:<9.0e}")


def verify_hash(args) -> bool:
    """Report whether a report's config hash matches its config."""
    matches = DataManager().verify_report_hash(args.report, args.config)
    print("Config hash matches." if matches else "Config hash does NOT match.")
    return matches


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = setup_arg_parser()
    args = parser.parse_args(argv)

    try:
        if args.command == 'run':
            run_experiment(args)
        elif args.command == 'list-suites':
            list_suites()
        elif args.command == 'verify-hash':
            return EXIT_OK if verify_hash(args) else EXIT_CHECK_FAILED
        else:
            parser.print_help()
            return EXIT_ERROR
    except ConfigInvalid as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_ERROR
    except CheckFailed as e:
        logger.error(str(e))
        return EXIT_CHECK_FAILED
    except LabError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
