"""Run the robustmean command-line interface from a source checkout."""

from __future__ import annotations

import sys
from pathlib import Path

try:  # pragma: no cover - import path setup
    from robustmean.cli import main
except ModuleNotFoundError:  # pragma: no cover - ensure repo root on path
    repo_root = Path(__file__).resolve().parents[1]
    if str(repo_root) not in sys.path:
        sys.path.insert(0, str(repo_root))

    from robustmean.cli import main


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
