"""
gen-synthetic: write synthetic skeleton recordings in the recording schema.
"""

import logging

from utils.synthetic import generate_recordings

logger = logging.getLogger(__name__)


def run(args, spec):
    written = generate_recordings(spec)
    print(f"wrote {len(written['singles'])} single-user and {len(written['pairs'])} pair recordings "
          f"to {spec.output_dir}")
    return written
