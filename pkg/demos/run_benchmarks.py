"""Run the full-vs-IRA comparison for every benchmark and print the reports.

    python3 demos/run_benchmarks.py [cantilever lshape mechanism]
"""
import sys
from pathlib import Path

from ira_mmc.driver import compare, load_config

HERE = Path(__file__).parent


def main(names):
    for name in names or ("cantilever", "lshape", "mechanism"):
        config = load_config(HERE / f"{name}.cfg", {"output_dir": str(HERE / "out" / name)})
        print(f"== {name} {config.nelx}x{config.nely}")
        print(compare(config).report())


if __name__ == "__main__":
    main(sys.argv[1:])
