import sys
from pathlib import Path

BASE_DIR = Path(__file__).parent
sys.path.insert(0, str(BASE_DIR))

from src.cli.commands import main  # noqa: E402


# =========================
# Entry Point Guard
# =========================
if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
