"""
synthesize: pair every cross-subject window combination into the grouped dataset.
"""

import logging

import pandas as pd

from commands.common import dataset_path, open_dataset, report_out_of_range
from utils.dataset_store import grouped_dataset, save_dataset
from utils.errors import DataError
from utils.skeleton import CLASS_NAMES

logger = logging.getLogger(__name__)


def class_histogram(dataset):
    """Sample count per pair class, only classes that occur"""
    counts = pd.Series(dataset.class_histogram(), index=CLASS_NAMES, name="samples")
    return counts[counts > 0]


def run(args, config):
    """
    Build and store the grouped dataset from the stored windows dataset

    Parameters:
    args (argparse.Namespace): Parsed arguments
    config (PipelineConfig): Resolved configuration

    Returns:
    str: Checksum of the grouped dataset
    """
    windows = open_dataset(config, "windows")
    if len(windows.subjects) < 2:
        logger.error(f"Grouped data needs windows from at least 2 subjects, found {len(windows.subjects)}")
        raise DataError(f"grouped synthesis needs at least 2 subjects, found {len(windows.subjects)}")
    grouped = grouped_dataset(windows)
    checksum = save_dataset(grouped, dataset_path(config, "grouped"))
    print(f"grouped: {len(grouped)} samples over {len(grouped.subjects)} subjects (checksum {checksum[:12]})")
    print(class_histogram(grouped).to_string())
    report_out_of_range("grouped", grouped)
    return checksum
