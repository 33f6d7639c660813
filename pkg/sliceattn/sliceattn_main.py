"""
Sliceattn CLI main program
"""
from logging import getLogger

from .backend import Backend, attention_overrides
from .configfile import load_run_config, merge_sections
from .configkeys import ConfigSections
from .attentiondump import parse_region
from .sliceattn_errors import SliceattnUsageError, SliceattnGradcheckError, EXIT_SUCCESS

try:
    from . import __version__ as VERSION
    from . import BUILD_DATE, COMMIT_ID
except ImportError:
    VERSION = "0.0.0"
    COMMIT_ID = "N/A"
    BUILD_DATE = "N/A"

def sliceattn(args):
    """
    Main program
    """
    if args.version or args.release_info:
        print("sliceattn version {}".format(VERSION))
        if args.release_info:
            print("Build date: {}".format(BUILD_DATE))
            print("Commit ID:  {}".format(COMMIT_ID))
        return EXIT_SUCCESS

    backend = Backend(load_run_config(args.config, _overrides(args)))
    actions = {
        'generate': _action_generate,
        'train': _action_train,
        'eval': _action_eval,
        'gradcheck': _action_gradcheck,
        'dump-attention': _action_dump_attention,
    }
    return actions[args.action](backend, args)

def _overrides(args):
    """
    Config sections set by command line arguments
    """
    overrides = {}
    if args.attention is not None:
        overrides = merge_sections(overrides, attention_overrides(args.attention))
    if args.seed is not None:
        if args.action == 'generate':
            overrides = merge_sections(overrides, {ConfigSections.PHANTOM: {'seed': args.seed}})
        else:
            overrides = merge_sections(overrides, {ConfigSections.TRAIN: {'seed': args.seed},
                                                   ConfigSections.PIPELINE: {'init_seed': args.seed}})
    if args.epochs is not None:
        overrides = merge_sections(overrides, {ConfigSections.TRAIN: {'epochs': args.epochs}})
    return overrides

def _require(args, *names):
    missing = ["--{}".format(name.replace('_', '-')) for name in names if getattr(args, name) is None]
    if missing:
        raise SliceattnUsageError("{} needs {}".format(args.action, ", ".join(missing)))

def _action_generate(backend, args):
    _require(args, 'count', 'out')
    summary = backend.generate(args.count, args.out, args.start)
    for stratum, count in summary.items():
        print("{:<22} {} volumes".format(stratum, count))
    return EXIT_SUCCESS

def _action_train(backend, args):
    _require(args, 'data', 'out')
    result = backend.train(args.data, args.out)
    last = result.records[-1]
    print("Trained {} epochs, {} steps: loss_cls {:.6f} loss_reg {:.6f} loss_total {:.6f}".format(
        last.epoch, last.step, last.loss_cls, last.loss_reg, last.loss_total))
    if result.checkpoints:
        print("Checkpoint: {}".format(result.checkpoints[-1]))
    return EXIT_SUCCESS

def _action_eval(backend, args):
    _require(args, 'data', 'out')
    if args.oracle:
        detector = None
    else:
        _require(args, 'checkpoint')
        detector = backend.load_detector(args.checkpoint)
    report = backend.evaluate(detector, args.data, args.out, args.overlay)
    rates = list(report.sensitivity_at)
    print("{:<22} {}".format("stratum", " ".join("{:>7}".format("{:g}FP".format(rate)) for rate in rates)))
    for name, stratum in [("all", report)] + list(report.strata.items()):
        print("{:<22} {}".format(name, " ".join("{:7.4f}".format(stratum.sensitivity_at[rate]) for rate in rates)))
    return EXIT_SUCCESS

def _action_gradcheck(backend, args):
    logger = getLogger(__name__)
    results, tolerance = backend.gradcheck(args.module, args.samples, args.out)
    print("{:<32} {:>14} {:>8}  result".format("tensor", "relative error", "checked"))
    for result in results:
        print("{:<32} {:>14.3e} {:>8}  {}".format(result.name, result.relative_error, result.checked,
                                                   "pass" if result.passed else "FAIL"))
    failed = [result.name for result in results if not result.passed]
    if failed:
        raise SliceattnGradcheckError("{} gradient(s) exceed relative error {:g}: {}".format(
            len(failed), tolerance, ", ".join(failed)))
    logger.info("All %d gradients within %g", len(results), tolerance)
    return EXIT_SUCCESS

def _action_dump_attention(backend, args):
    _require(args, 'checkpoint', 'volume', 'key_slice', 'out')
    region = None if args.region is None else parse_region(args.region)
    for path in backend.dump_attention(args.checkpoint, args.volume, args.key_slice, args.out, args.channel, region):
        print(path)
    return EXIT_SUCCESS
