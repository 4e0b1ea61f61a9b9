#!/usr/bin/env python3
"""
ppp-cpd launcher
Runs the command-line interface from a source checkout, e.g.

    python run.py experiment --config experiment_3d
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "src"))

from ppp_cpd.orchestrator.main import main  # noqa: E402

if __name__ == "__main__":
    main()
