"""gp-ada command-line entry point."""

# /// script
# requires-python = ">=3.11"
# dependencies = [
#   "numpy<2.0.0",
#   "scipy>=1.11.0",
#   "matplotlib>=3.8.0",
#   "python-dotenv>=1.0.0",
# ]
# [tool.uv]
# exclude-newer = "2025-03-15T00:00:00Z"
# ///

import sys

from gp_ada.cli import main

if __name__ == "__main__":
    sys.exit(main())
