"""Command-line entry point: one subcommand per experiment."""

import argparse
import logging
import os
import sys
from typing import List, Optional

from config_loader import ConfigLoader
from experiment_runner import ExperimentRunner
from models import DiffeoSpecModel, ExperimentConfigModel, GridModel, MetricSpecModel

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2
GRID_FLAGS = ('nr', 'ntheta', 'nbeta', 'nalpha', 'nphi', 'guard', 'h_ode')
SUBCOMMANDS = {
    'certify': "Check convexity, non-trapping and absence of conjugate points",
    'distance': "Boundary distances on random boundary pairs",
    'scatter': "Scattering relation and exit times on the fan",
    'xray': "Geodesic X-ray transform and adjointness of the backprojection",
    'normal': "Normal operator (against the flat convolution oracle)",
    'dn': "Dirichlet-to-Neumann map in the Fourier basis",
    'surjectivity': "Construct boundary data whose backprojection is a given function",
    'fbp': "Flat filtered backprojection",
    'thm1': "Boundary determination for a pair of metrics",
    'thm3': "DN map equality chain for a metric and its pullback",
    'volume': "Volume from the boundary exit times",
}


class LabArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="YAML experiment configuration")
    common.add_argument('--metric', help="Metric as a JSON file or inline 'kind:conformal,c=0.1'")
    common.add_argument('--metric2', help="Second metric for thm1 (default: pullback of --metric under --psi)")
    common.add_argument('--psi', help="Diffeomorphism such as 'radial,amp=0.05'")
    common.add_argument('--nr', type=int)
    common.add_argument('--ntheta', type=int)
    common.add_argument('--nbeta', type=int)
    common.add_argument('--nalpha', type=int)
    common.add_argument('--nphi', type=int)
    common.add_argument('--guard', type=float)
    common.add_argument('--h-ode', dest='h_ode', type=float)
    common.add_argument('--seed', type=int)
    common.add_argument('--refine', type=int, help="Number of grid doublings")
    common.add_argument('--modes', type=int, help="Highest boundary Fourier mode")
    common.add_argument('--out', help="Output directory (default: $OUT_DIR or the config value)")
    common.add_argument('--plots', action='store_true', default=None, help="Emit SVG plots")
    common.add_argument('--verbose', action='store_true', help="Debug logging")
    return common


def build_parser() -> LabArgumentParser:
    common = _common_flags()
    parser = LabArgumentParser(prog='geolab', description="Geodesic integral-geometry experiments on the disk")
    sub = parser.add_subparsers(dest='experiment', required=True, parser_class=LabArgumentParser)
    for name, help_text in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    identity = sub.add_parser('identity', parents=[common], help="Transport, Hilbert and conjugate identities")
    identity.add_argument('variant', choices=['transport', 'hilbert', 'conjugate'])
    return parser


def build_config(args: argparse.Namespace) -> ExperimentConfigModel:
    """Merge the optional config file with command-line overrides.

    Raises:
        FileNotFoundError: If --config names a missing file
        ValueError: If a specification or the merged configuration is invalid
    """
    config = ConfigLoader(args.config).load() if args.config else ExperimentConfigModel()
    data = config.model_dump()
    data['name'] = args.experiment
    data['variant'] = getattr(args, 'variant', None)
    if args.metric:
        data['metric'] = MetricSpecModel.parse_inline(args.metric).model_dump()
    if args.metric2:
        data['metric2'] = MetricSpecModel.parse_inline(args.metric2).model_dump()
    if args.psi:
        data['psi'] = DiffeoSpecModel.parse_inline(args.psi).model_dump()
    data['grid'] = GridModel.model_validate(
        {**data['grid'], **{k: getattr(args, k) for k in GRID_FLAGS if getattr(args, k) is not None}}
    ).model_dump()
    for key in ('seed', 'refine', 'modes', 'plots'):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.out:
        data['out_dir'] = args.out
    elif os.environ.get('OUT_DIR'):
        data['out_dir'] = os.environ['OUT_DIR']
    return ExperimentConfigModel.model_validate(data)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one experiment and return the exit code.

    Returns:
        0 if every criterion passed, 2 on a failed criterion or crashed
        experiment, 1 on a usage or configuration error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        config = build_config(args)
        runner = ExperimentRunner(config)
        runner.validate()
    except (FileNotFoundError, ValueError) as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logger.info(f"Running '{runner.name}' on metric '{config.metric.kind}', output in {config.out_dir}")
    manifest = runner.run()
    for c in manifest.criteria:
        logger.info(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (threshold {c.threshold:.1e})")
    return EXIT_OK if manifest.passed else EXIT_FAILED


def main():
    """Main entry point."""
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stdout)]
    )
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
