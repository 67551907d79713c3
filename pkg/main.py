"""
Main entry point for Poincare Align
"""

import os
import sys

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from poincare_align.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
