#!/usr/bin/env python3
"""
Diffusion Datagen CLI

Runs the pipeline from a source checkout; installed copies use ``ddrl``.
"""

import sys
from pathlib import Path

# Add the package to Python path
package_root = Path(__file__).parent
sys.path.insert(0, str(package_root))

from diffusion_datagen.pipeline.cli import main  # noqa: E402

if __name__ == "__main__":
    main()
