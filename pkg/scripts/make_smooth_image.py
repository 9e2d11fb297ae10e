"""Regenerate the smooth 512x1024 test panorama shipped with the package.

Colors are low-order functions of the viewing direction, so the image is
continuous across the longitude seam and at the poles.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from tangentdepth.geometry import erp_grid, to_unit_vector

OUT = Path(__file__).resolve().parents[1] / "src" / "tangentdepth" / "data" / "smooth_erp.png"


def main() -> None:
    sph = erp_grid(1024, 512)
    x, y, z = np.moveaxis(to_unit_vector(sph.lam, sph.phi), -1, 0)
    r = 0.5 + 0.35 * np.sin(1.7 * x + 0.6 * z) * np.cos(0.9 * y)
    g = 0.5 + 0.3 * np.cos(1.3 * y - 0.8 * x * z)
    b = 0.45 + 0.35 * np.sin(2.1 * z + 0.5 * x * y)
    rgb = np.stack([r, g, b], axis=-1)
    Image.fromarray(np.rint(rgb * 255).astype(np.uint8)).save(OUT, optimize=True)
    print(OUT)


if __name__ == "__main__":
    main()
