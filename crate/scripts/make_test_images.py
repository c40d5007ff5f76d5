"""Regenerate the bundled 256x256 test images from scikit-image sample data."""
import os
import numpy as np
from PIL import Image
import skimage.data as data

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "assets")
SOURCES = ["astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry"]
SIZE = 256


def square_crop(img):
    h, w = img.shape[:2]
    s = min(h, w)
    y0, x0 = (h - s) // 2, (w - s) // 2
    return img[y0:y0 + s, x0:x0 + s]


def main():
    os.makedirs(OUT, exist_ok=True)
    for name in SOURCES:
        img = square_crop(getattr(data, name)()[..., :3])
        im = Image.fromarray(np.asarray(img, dtype=np.uint8)).resize((SIZE, SIZE), Image.LANCZOS)
        im.save(os.path.join(OUT, f"{name}.png"))
        print(name, im.size)


if __name__ == "__main__":
    main()
