"""
evaluate: score fold models on a leave-one-subject-out split or across data kinds.
"""

import logging

from commands.common import open_dataset, report_out_of_range
from utils.evaluation import format_table, results_table, run_cross, run_loso, write_reports

logger = logging.getLogger(__name__)


def run(args, config):
    """
    Run one cell of the experiment grid and write its reports

    Parameters:
    args (argparse.Namespace): experiment ('loso' | 'cross'), model, data, train
    config (PipelineConfig): Resolved configuration

    Returns:
    AggregateReport: The experiment summary
    """
    from_checkpoints = not args.train
    checkpoint_dir = config.paths.checkpoint_dir
    seed = config.training.seed
    if args.experiment == "loso":
        dataset = open_dataset(config, args.data)
        report_out_of_range(args.data, dataset)
        reports, summary = run_loso(dataset, args.model, config, seed, checkpoint_dir, from_checkpoints)
    else:
        train_dataset = open_dataset(config, "grouped")
        test_dataset = open_dataset(config, "pair")
        report_out_of_range("grouped", train_dataset)
        report_out_of_range("pair", test_dataset)
        reports, summary = run_cross(
            train_dataset, test_dataset, args.model, config, seed, checkpoint_dir, from_checkpoints,
        )
    target = write_reports(config.paths.report_dir, summary, reports)
    print(format_table(results_table([summary], complete=False)))
    print(f"reports: {target}")
    return summary
