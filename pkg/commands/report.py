"""
report: the full results grid from every saved experiment aggregate.
"""

import logging
from pathlib import Path

from utils.evaluation import format_table, load_aggregates, results_table

logger = logging.getLogger(__name__)

TABLE_NAME = "results.txt"


def run(args, config):
    report_dir = Path(config.paths.report_dir)
    summaries = load_aggregates(report_dir)
    if not summaries:
        logger.warning(f"No experiment aggregates under {report_dir}")
    frame = results_table(summaries, complete=True)
    text = format_table(frame)
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / TABLE_NAME).write_text(text + "\n")
    frame.to_json(report_dir / "results.json", orient="records", indent=1)
    print(text)
    return frame
