"""Print a density snapshot written by the driver as ASCII shading.

    python3 demos/show_density.py demos/out/cantilever/ira/density_0058.txt
"""
import sys

import numpy as np

SHADES = " .:-=+*#%@"


def render(dens: np.ndarray, width: int = 80) -> str:
    rows, cols = dens.shape
    step = max(1, -(-cols // width))
    # terminal cells are about twice as tall as wide
    coarse = dens[:: 2 * step, ::step]
    idx = np.clip((coarse * len(SHADES)).astype(int), 0, len(SHADES) - 1)
    return "\n".join("".join(SHADES[i] for i in row) for row in idx)


if __name__ == "__main__":
    print(render(np.loadtxt(sys.argv[1])))
