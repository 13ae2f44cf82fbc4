"""
preprocess: raw recordings -> single-user windows dataset (and pair dataset when
pair recordings are present).
"""

import logging

from commands.common import dataset_path, report_out_of_range
from utils.dataset_store import pair_dataset, save_dataset, windows_dataset
from utils.preprocessing import preprocess_directory, preprocessing_parameters

logger = logging.getLogger(__name__)


def run(args, config):
    """
    Prune, normalize and window every recording under paths.raw_dir

    Parameters:
    args (argparse.Namespace): Parsed arguments (reader)
    config (PipelineConfig): Resolved configuration

    Returns:
    dict: dataset kind -> checksum of each written dataset
    """
    parameters = preprocessing_parameters(config.preprocessing)
    result = preprocess_directory(
        config.paths.raw_dir, config.preprocessing, workers=config.training.workers, reader=args.reader,
    )
    stats = result["stats"]
    if not stats.empty:
        logger.info(f"Per-recording statistics:\n{stats.to_string(index=False)}")

    written = {}
    if result["single_sources"]:
        windows = windows_dataset(result["single_windows"], parameters, result["single_sources"])
        written["windows"] = save_dataset(windows, dataset_path(config, "windows"))
        print(f"windows: {len(windows.window_meta)} windows from {len(result['single_sources'])} recordings, "
              f"{len(windows.subjects)} subjects")
        report_out_of_range("windows", windows)
    if result["pair_sources"]:
        pairs = pair_dataset(result["pair_windows"], parameters, result["pair_sources"])
        written["pair"] = save_dataset(pairs, dataset_path(config, "pair"))
        print(f"pair: {len(pairs)} samples from {len(result['pair_sources'])} recordings")
        report_out_of_range("pair", pairs)
    if not written:
        logger.warning(f"No recordings found in {config.paths.raw_dir}; nothing written")
    return written
