import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "backend"))

from cli import run_cli


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
