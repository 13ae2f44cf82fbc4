"""
Multi-user activity recognition pipeline: command-line entry point.

    python app.py gen-synthetic --output data/raw --subjects 6
    python app.py preprocess --config configs/synthetic.json
    python app.py synthesize --config configs/synthetic.json
    python app.py train lstm --data grouped --config configs/synthetic.json
    python app.py evaluate loso --model lstm --data grouped --config configs/synthetic.json
    python app.py evaluate cross --model vae --config configs/synthetic.json
    python app.py report --config configs/synthetic.json
"""

import argparse
import logging
import os
import sys

from commands import evaluate, gen_synthetic, preprocess, report, synthesize, train
from commands.common import resolve_config
from utils.config import SyntheticSpec
from utils.errors import PipelineError, format_error_line
from utils.models import MODEL_KINDS
from utils.recordings import READERS

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "MUHAR_LOG_LEVEL"

COMMANDS = {
    "preprocess": preprocess,
    "synthesize": synthesize,
    "gen-synthetic": gen_synthetic,
    "train": train,
    "evaluate": evaluate,
    "report": report,
}


def configure_logging():
    level_name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _pipeline_options():
    """Flags every pipeline subcommand accepts; dests are dotted config keys"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON pipeline configuration")
    parent.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. training.lstm_epochs=5 (repeatable)")
    parent.add_argument("--seed", dest="training.seed", type=int)
    parent.add_argument("--workers", dest="training.workers", type=int)
    parent.add_argument("--dtype", dest="training.dtype", choices=["float32", "float64"])
    parent.add_argument("--dataset-dir", dest="paths.dataset_dir")
    return parent


def build_parser():
    parser = argparse.ArgumentParser(
        prog="muhar",
        description="Multi-user activity recognition from single-user skeleton recordings",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _pipeline_options()

    p = sub.add_parser("preprocess", parents=[common], help="prune, normalize and window raw recordings")
    p.add_argument("--raw-dir", dest="paths.raw_dir")
    p.add_argument("--reader", default="ndjson", choices=sorted(READERS))

    sub.add_parser("synthesize", parents=[common], help="pair single-user windows into the grouped dataset")

    g = sub.add_parser("gen-synthetic", help="write synthetic recordings")
    g.add_argument("--spec", help="JSON synthetic data specification")
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.add_argument("--output", dest="spec.output_dir")
    g.add_argument("--subjects", dest="spec.subjects", type=int)
    g.add_argument("--recordings-per-state", dest="spec.recordings_per_state", type=int)
    g.add_argument("--frames", dest="spec.frames_per_recording", type=int)
    g.add_argument("--noise-mm", dest="spec.noise_mm", type=float)
    g.add_argument("--pair-subjects", dest="spec.pair_subjects", type=int)
    g.add_argument("--seed", dest="spec.seed", type=int)

    t = sub.add_parser("train", parents=[common], help="train one model per leave-one-subject-out fold")
    t.add_argument("model", choices=MODEL_KINDS)
    t.add_argument("--data", choices=["grouped", "pair"], default="grouped")
    t.add_argument("--checkpoint-dir", dest="paths.checkpoint_dir")

    e = sub.add_parser("evaluate", parents=[common], help="test fold models and write reports")
    e.add_argument("experiment", choices=["loso", "cross"])
    e.add_argument("--model", choices=MODEL_KINDS, required=True)
    e.add_argument("--data", choices=["grouped", "pair"], default="grouped",
                   help="dataset for loso; cross always trains on grouped and tests on pair")
    e.add_argument("--train", action="store_true", help="train fold models instead of loading checkpoints")
    e.add_argument("--checkpoint-dir", dest="paths.checkpoint_dir")
    e.add_argument("--report-dir", dest="paths.report_dir")

    r = sub.add_parser("report", parents=[common], help="assemble the results grid")
    r.add_argument("--report-dir", dest="paths.report_dir")
    return parser


def main(argv=None):
    """
    Parse arguments, run one subcommand and map pipeline errors to exit codes

    Parameters:
    argv (list[str]): Arguments, sys.argv[1:] when None

    Returns:
    int: Process exit code
    """
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-synthetic":
            config = resolve_config(args, SyntheticSpec, path_attr="spec", prefix="spec.")
        else:
            config = resolve_config(args)
        COMMANDS[args.command].run(args, config)
    except PipelineError as e:
        print(format_error_line(e), file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
