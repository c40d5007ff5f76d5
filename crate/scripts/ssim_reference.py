"""Freeze SSIM reference values from scikit-image for the metrics cross-check test."""
import json
import os
import numpy as np
from skimage.metrics import structural_similarity

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures", "ssim_reference.json")


def main():
    rng = np.random.default_rng(20240611)
    cases = []
    for (h, w) in [(24, 32), (40, 40), (17, 29)]:
        a = rng.random((h, w, 3))
        # correlated partner so the score is not near zero
        b = np.clip(0.6 * a + 0.4 * rng.random((h, w, 3)), 0.0, 1.0)
        s = structural_similarity(
            a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
            data_range=1.0, channel_axis=2,
        )
        cases.append({"height": h, "width": w, "a": a.ravel().tolist(), "b": b.ravel().tolist(), "ssim": float(s)})
    with open(OUT, "w") as f:
        json.dump({"cases": cases}, f)
    print([c["ssim"] for c in cases])


if __name__ == "__main__":
    main()
