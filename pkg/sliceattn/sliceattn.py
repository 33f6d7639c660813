"""
Multi-slice lesion detection Command Line Interface utility
"""
import sys
import argparse
import os
import logging
from logging.config import dictConfig
from logging import getLogger
import textwrap
from pathlib import Path

import yaml
from appdirs import user_log_dir
from yaml import YAMLError

from . import sliceattn_main
from .sliceattn_errors import SliceattnError, EXIT_USAGE, EXIT_NUMERIC
from .configkeys import AttentionModes
from .backend import GRADCHECK_MODULES, DEFAULT_GRADCHECK_SAMPLES

LOGGING_ENV_KEY = 'SLICEATTN_LOGGING_CONFIG'
ACTIONS = ['generate', 'train', 'eval', 'gradcheck', 'dump-attention']

def setup_logging(user_requested_level=logging.WARNING, default_path='logging.yaml', env_key=LOGGING_ENV_KEY):
    """
    Setup logging configuration for sliceattn CLI
    """
    # Logging config YAML file can be specified via environment variable
    value = os.getenv(env_key, None)
    if value:
        path = value
    else:
        # Otherwise use the one shipped with this application
        path = os.path.join(os.path.dirname(__file__), default_path)
    if os.path.exists(path):
        try:
            with open(path, 'rt') as file:
                configfile = yaml.safe_load(file)
                logdir = user_log_dir("sliceattn")
                handlers = configfile['handlers']
                # Redirect all file loggers into the user log directory
                file_handlers = [name for name in handlers if 'filename' in handlers[name]]
                for handler in file_handlers:
                    handlers[handler]['filename'] = os.path.join(logdir, handlers[handler]['filename'])
                if file_handlers:
                    Path(logdir).mkdir(exist_ok=True, parents=True)
                # Console logging takes granularity argument from CLI user
                handlers['console']['level'] = user_requested_level
                # Root logger must be the most verbose of the YAML configurations and the CLI user argument
                most_verbose_logging = min(user_requested_level, getattr(logging, configfile['root']['level']))
                for handler in file_handlers:
                    most_verbose_logging = min(most_verbose_logging, getattr(logging, handlers[handler]['level']))
                configfile['root']['level'] = most_verbose_logging
            dictConfig(configfile)
            return
        except YAMLError:
            print("Error parsing logging config file '{}'".format(path), file=sys.stderr)
        except (KeyError, TypeError) as keyerror:
            print("Key {} not found in logging config file".format(keyerror), file=sys.stderr)
        except (OSError, ValueError) as error:
            print("Unable to apply logging config file '{}': {}".format(path, error), file=sys.stderr)
    else:
        print("Unable to open logging config file '{}'".format(path), file=sys.stderr)

    # If all else fails, revert to basic logging at specified level for this application
    print("Reverting to basic logging.", file=sys.stderr)
    logging.basicConfig(level=user_requested_level)

class ArgumentParser(argparse.ArgumentParser):
    """
    Argument parser reporting usage errors with the usage exit status
    """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "error: {}\n".format(message))

def build_parser(argv):
    """
    The CLI argument parser

    :param argv: the arguments to be parsed; the action may be left out when they ask for the version
    """
    version_only = any(flag in argv for flag in ("-V", "--version", "-R", "--release-info"))
    parser = ArgumentParser(
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description=textwrap.dedent('''\
    Dual attention multi-slice lesion detection on synthetic phantoms

    Basic actions:
        - generate: write a synthetic data set of phantom volumes and annotations
        - train: train a detector on a data set
        - eval: compute FROC sensitivities of a checkpoint on a data set
        - gradcheck: compare analytic gradients with finite differences
        - dump-attention: write the attention fields of a checkpoint for one volume
            '''),
        epilog=textwrap.dedent('''\
    Usage examples:

        Generate 200 training and 50 test volumes:
        - sliceattn generate -n 200 -o data/train
        - sliceattn generate -n 50 --start 200 -o data/test

        Train with both attention modules, then without attention:
        - sliceattn train -d data/train -o runs/both --attention both
        - sliceattn train -d data/train -o runs/none --attention none

        Evaluate a checkpoint and draw overlays for the first 5 volumes:
        - sliceattn eval --checkpoint runs/both/checkpoint.satn -d data/test -o runs/both/eval --overlay 5

        Check the evaluation harness with detections echoing the ground truth:
        - sliceattn eval --oracle -d data/test -o runs/oracle

        Check the gradients of the attention modules and of the whole pipeline:
        - sliceattn gradcheck --module attention
        - sliceattn gradcheck --module pipeline --samples 24

        Dump the attention fields of feature channel 3 around slice 4 of a volume:
        - sliceattn dump-attention --checkpoint runs/both/checkpoint.satn --volume data/test/vol_00200.svol
          --key-slice 4 --channel 3 -o runs/both/attention

        Settings are read from YAML config files (sections phantom, pipeline, attention, train, eval):
        - sliceattn train -c pipeline.yaml -c train.yaml -d data/train -o runs/custom
            '''))

    parser.add_argument("action",
                        help="action to perform",
                        # This makes the action argument optional
                        # only if -V/--version or -R/release_info argument is given
                        nargs="?" if version_only else None,
                        choices=ACTIONS)

    parser.add_argument("-c", "--config",
                        action="append", default=[],
                        help="YAML config file, may be given several times (later files override earlier ones)")

    parser.add_argument("-o", "--out",
                        type=str,
                        help="output directory (gradcheck writes to ./gradcheck when omitted)")

    parser.add_argument("-d", "--data",
                        type=str,
                        help="data set directory")

    parser.add_argument("-n", "--count",
                        type=int,
                        help="number of volumes to generate")

    parser.add_argument("--start",
                        type=int,
                        default=0,
                        help="index of the first generated volume.  Defaults to 0")

    parser.add_argument("-s", "--seed",
                        type=int,
                        help="seed: phantom seed for generate, shuffle and initialization seed for train")

    parser.add_argument("--attention",
                        choices=AttentionModes.get_all(),
                        help="attention modules to build (overrides the attention config section)")

    parser.add_argument("-e", "--epochs",
                        type=int,
                        help="number of training epochs")

    parser.add_argument("--checkpoint",
                        type=str,
                        help="checkpoint file; its manifest.yaml must be in the same directory")

    parser.add_argument("--oracle",
                        action="store_true",
                        help="evaluate detections echoing the ground truth instead of a checkpoint")

    parser.add_argument("--overlay",
                        type=int,
                        default=0,
                        help="number of volumes to draw detection overlays for")

    parser.add_argument("--module",
                        choices=GRADCHECK_MODULES,
                        default=GRADCHECK_MODULES[0],
                        help="module to check gradients of")

    parser.add_argument("--samples",
                        type=int,
                        default=DEFAULT_GRADCHECK_SAMPLES,
                        help="entries checked per parameter tensor by the pipeline gradient check.  "
                        "Defaults to {}".format(DEFAULT_GRADCHECK_SAMPLES))

    parser.add_argument("--volume",
                        type=str,
                        help="volume file (.svol) to dump attention fields for")

    parser.add_argument("-k", "--key-slice",
                        type=int,
                        help="key slice index inside the volume")

    parser.add_argument("--channel",
                        type=int,
                        default=0,
                        help="feature channel to dump attention fields of.  Defaults to 0")

    parser.add_argument("--region",
                        help="restrict the contextual attention CSV to the feature cells under 'x1,y1,x2,y2'")

    parser.add_argument("-v", "--verbose",
                        default="warning", choices=['debug', 'info', 'warning', 'error', 'critical'],
                        help="Logging verbosity level")

    parser.add_argument("-V", "--version",
                        help="Print sliceattn version number and exit",
                        action="store_true")

    parser.add_argument("-R", "--release-info", action="store_true",
                        help="Print sliceattn release details and exit")
    return parser

def main(argv=None):
    """
    Entrypoint for installable CLI

    Configures the CLI and parses the arguments
    """
    logger = getLogger(__name__)
    argv = sys.argv[1:] if argv is None else argv
    arguments = build_parser(argv).parse_args(argv)

    # Setup logging
    setup_logging(user_requested_level=getattr(logging, arguments.verbose.upper()))

    try:
        # Call main with args
        return sliceattn_main.sliceattn(arguments)
    except SliceattnError as exc:
        print("error: {}: {}".format(type(exc).__name__, exc), file=sys.stderr)
        logger.debug(exc, exc_info=True)    # get traceback if debug loglevel
        return exc.code
    except Exception as exc: #pylint: disable=broad-except
        print("error: {}: {}".format(type(exc).__name__, exc), file=sys.stderr)
        logger.debug(exc, exc_info=True)
        return EXIT_NUMERIC

if __name__ == "__main__":
    sys.exit(main())
