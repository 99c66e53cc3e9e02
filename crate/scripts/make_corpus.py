"""Build the desk-scale PPM corpus from sample images bundled with
scikit-image and scikit-learn. Crops are 256x256, block aligned."""
import os
import sys

import numpy as np
from skimage import data
from sklearn.datasets import load_sample_images

OUT = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "corpus")
SIZE = 256


def write_ppm(path, rgb):
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def crops(img, origins):
    for (y, x) in origins:
        y, x = y - y % 8, x - x % 8
        yield img[y:y + SIZE, x:x + SIZE, :3]


sources = {
    "astronaut": (data.astronaut(), [(0, 0), (256, 256)]),
    "coffee": (data.coffee(), [(72, 40), (100, 320)]),
    "chelsea": (data.chelsea(), [(40, 120)]),
    "motorcycle": (data.stereo_motorcycle()[0], [(0, 0), (200, 400)]),
    "rocket": (data.rocket(), [(100, 150)]),
    "hubble": (data.hubble_deep_field(), [(300, 300)]),
    "retina": (data.retina(), [(500, 500)]),
    "ihc": (data.immunohistochemistry(), [(128, 128)]),
}
sk = load_sample_images()
sources["china"] = (sk.images[0], [(80, 100), (160, 380)])
sources["flower"] = (sk.images[1], [(100, 200), (150, 0)])

os.makedirs(OUT, exist_ok=True)
n = 0
for name, (img, origins) in sources.items():
    for i, c in enumerate(crops(img, origins)):
        assert c.shape == (SIZE, SIZE, 3), (name, c.shape)
        write_ppm(os.path.join(OUT, f"{name}_{i}.ppm"), c)
        n += 1
print(f"wrote {n} images to {OUT}")
