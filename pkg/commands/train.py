"""
train: one model per leave-one-subject-out fold, written as checkpoints.
"""

import logging

import pandas as pd

from commands.common import open_dataset
from utils.evaluation import train_folds

logger = logging.getLogger(__name__)


def run(args, config):
    """
    Train the requested model family on every fold of one dataset

    Parameters:
    args (argparse.Namespace): model ('lstm' | 'vae') and data ('grouped' | 'pair')
    config (PipelineConfig): Resolved configuration

    Returns:
    list[dict]: Per-fold training summaries
    """
    dataset = open_dataset(config, args.data)
    results = train_folds(dataset, args.model, config, config.training.seed, config.paths.checkpoint_dir)
    rows = [
        {"fold": r["fold"], "skipped": r["skipped"], **{f"loss_{k}": v for k, v in r.get("final_loss", {}).items()}}
        for r in results
    ]
    print(pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return results
