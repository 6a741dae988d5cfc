"""Deterministic 30-image class-folder tree used across the exporter tests."""

import numpy as np
from PIL import Image

CLASS_COLORS = {
    "finch": (200, 60, 40),
    "heron": (40, 160, 220),
    "owl": (120, 200, 90),
}
UNKNOWN_COLORS = [(230, 220, 60), (150, 40, 170), (20, 20, 20)]
SPLIT_SIZES = {"known_train": 3, "known_calib": 4, "known_test": 2}


def write_image(path, base, rng, size=16, noise=55.0):
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.array(base, dtype=np.float64) + rng.normal(scale=noise, size=(size, size, 3))
    Image.fromarray(np.clip(pixels, 0, 255).astype(np.uint8), "RGB").save(path)


def build_fit_tree(root, seed=0):
    """Smallest tree the engine's fit contracts admit: 32 images.

    The residual normalizer needs 20 training residuals and threshold
    calibration needs 10 calibration risks, so 2 classes x (10 train +
    5 calib) plus one test and one unknown image is the floor.
    """
    rng = np.random.default_rng(seed)
    classes = {"finch": CLASS_COLORS["finch"], "heron": CLASS_COLORS["heron"]}
    for cls, base in classes.items():
        for i in range(10):
            write_image(root / "known_train" / cls / f"img{i:02d}.png", base, rng)
        for i in range(5):
            write_image(root / "known_calib" / cls / f"img{i:02d}.png", base, rng)
    write_image(root / "known_test" / "finch" / "img00.png", classes["finch"], rng)
    write_image(root / "unknown_test" / "mystery" / "img00.png", UNKNOWN_COLORS[0], rng)
    return {
        "known_train": root / "known_train",
        "known_calib": root / "known_calib",
        "known_test": root / "known_test",
        "unknown_test": root / "unknown_test",
    }


def build_toy_tree(root, seed=0):
    """30 images: 3 known classes x (3 train + 4 calib + 2 test) plus 3 unknowns."""
    rng = np.random.default_rng(seed)
    for role, count in SPLIT_SIZES.items():
        for cls, base in CLASS_COLORS.items():
            for i in range(count):
                write_image(root / role / cls / f"img{i:02d}.png", base, rng)
    for i, base in enumerate(UNKNOWN_COLORS):
        write_image(root / "unknown_test" / "mystery" / f"img{i:02d}.png", base, rng)
    return {
        "known_train": root / "known_train",
        "known_calib": root / "known_calib",
        "known_test": root / "known_test",
        "unknown_test": root / "unknown_test",
    }
