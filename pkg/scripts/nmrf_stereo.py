#!/usr/bin/env python3
"""Launcher for the nmrf command line (train / eval / infer / propose / serve)."""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from nmrf.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
