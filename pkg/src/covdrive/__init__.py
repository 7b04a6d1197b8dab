"""Coverage-driven scenario generation and testing for autonomous-driving stacks."""

from pathlib import Path

__version__ = "0.1.0"

DATA_DIR = Path(__file__).parent / "data"
