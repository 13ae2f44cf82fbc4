"""
Helpers shared by the subcommands: config resolution and dataset locations.
"""

import logging
from pathlib import Path

from utils.config import PipelineConfig, apply_overrides, load_config
from utils.dataset_store import load_dataset
from utils.preprocessing import preprocessing_parameters

logger = logging.getLogger(__name__)

DATASET_KINDS = ("windows", "grouped", "pair")


def flag_overrides(args, prefix=""):
    """
    Collect flags whose argparse dest is a dotted config key

    Parameters:
    args (argparse.Namespace): Parsed arguments
    prefix (str): Dest prefix to strip, e.g. 'spec.'

    Returns:
    dict: dotted key -> value for every flag that was given
    """
    overrides = {}
    for dest, value in vars(args).items():
        if value is None or "." not in dest or not dest.startswith(prefix):
            continue
        overrides[dest[len(prefix):]] = value
    return overrides


def resolve_config(args, cls=PipelineConfig, path_attr="config", prefix=""):
    """
    Defaults, then the config file, then --set pairs, then dedicated flags

    Returns:
    PipelineConfig | SyntheticSpec: Validated config
    """
    config = load_config(getattr(args, path_attr, None), cls)
    if getattr(args, "set", None):
        config = apply_overrides(config, args.set)
    flags = flag_overrides(args, prefix)
    if flags:
        config = apply_overrides(config, flags)
    return config


def dataset_path(config, kind):
    return Path(config.paths.dataset_dir) / kind


def open_dataset(config, kind):
    """Load a stored dataset, checking it matches the configured preprocessing"""
    path = dataset_path(config, kind)
    dataset = load_dataset(path, expected_parameters=preprocessing_parameters(config.preprocessing))
    logger.info(f"Loaded {kind} dataset from {path}: {len(dataset)} samples, {len(dataset.subjects)} subjects")
    return dataset


def report_out_of_range(kind, dataset):
    """Print the share of scaled values outside the min-max source range"""
    fraction = dataset.out_of_range_fraction()
    if fraction > 0:
        logger.warning(f"{kind}: {fraction:.4%} of scaled values fall outside the min-max source range")
    print(f"{kind}: out-of-range fraction {fraction:.6f}")
    return fraction
