"""Dataset ingestion, paired augmentation, and synthetic desk-scale scenes.

On-disk layout: ``<root>/images/*.png`` and ``<root>/masks/*.png`` matched by
basename; masks are 8-bit single-channel files with labels {0, 1, 2}.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


class DatasetError(ValueError):
    """Directory layout or file contents violate the dataset contract."""


@dataclass(frozen=True)
class Case:
    name: str
    image_path: Path
    mask_path: Path


@dataclass(frozen=True)
class DatasetIndex:
    """Deterministic train/val split of matched image/mask pairs."""

    train: tuple[Case, ...]
    val: tuple[Case, ...]

    @property
    def cases(self) -> tuple[Case, ...]:
        return self.train + self.val


def build_index(root, split_ratio: float = 0.9, seed: int = 0) -> DatasetIndex:
    """Match basenames under images/ and masks/, shuffle by seed, prefix-split.

    The same (seed, ratio, file set) always produces the same split. Orphan
    images or masks abort with the offending basenames listed.
    """
    root = Path(root)
    image_dir, mask_dir = root / "images", root / "masks"
    if not image_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"{root} must contain images/ and masks/ directories")
    if not 0.0 <= split_ratio <= 1.0:
        raise DatasetError(f"split ratio {split_ratio} outside [0, 1]")

    images = {p.name: p for p in sorted(image_dir.glob("*.png"))}
    masks = {p.name: p for p in sorted(mask_dir.glob("*.png"))}
    missing_masks = sorted(set(images) - set(masks))
    missing_images = sorted(set(masks) - set(images))
    if missing_masks or missing_images:
        raise DatasetError(
            f"unpaired files: images without masks {missing_masks}, "
            f"masks without images {missing_images}"
        )
    if not images:
        raise DatasetError(f"no .png cases found under {root}")

    names = sorted(images)
    order = np.random.default_rng(seed).permutation(len(names))
    shuffled = [names[i] for i in order]
    n_train = int(round(split_ratio * len(names)))
    cases = [Case(n, images[n], masks[n]) for n in shuffled]
    return DatasetIndex(train=tuple(cases[:n_train]), val=tuple(cases[n_train:]))


# -- file IO ---------------------------------------------------------------------


def read_image(path, channels: int = 1) -> np.ndarray:
    """Load a PNG as float32 [C, H, W] in [0, 1]."""
    mode = "L" if channels == 1 else "RGB"
    arr = np.asarray(Image.open(path).convert(mode), dtype=np.float32) / 255.0
    if channels == 1:
        return arr[None]
    return arr.transpose(2, 0, 1)


def read_mask(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    if not np.isin(arr, (0, 1, 2)).all():
        raise DatasetError(f"{path}: mask values outside {{0, 1, 2}}")
    return arr


def write_mask(path, labels: np.ndarray) -> None:
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)


def write_image(path, image: np.ndarray) -> None:
    """Store a float image (any range) as an 8-bit grayscale PNG."""
    arr = np.asarray(image, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    Image.fromarray((scaled * 255).round().astype(np.uint8), mode="L").save(path)


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Per-image zero mean, unit variance (std floored to avoid blowups)."""
    arr = np.asarray(image, dtype=np.float32)
    return (arr - arr.mean()) / max(float(arr.std()), 1e-6)


def load_case(case: Case, in_channels: int = 1):
    """(normalized image [C, H, W], mask [H, W]); shapes must agree."""
    image = normalize_image(read_image(case.image_path, in_channels))
    mask = read_mask(case.mask_path)
    if image.shape[1:] != mask.shape:
        raise DatasetError(f"{case.name}: image {image.shape[1:]} vs mask {mask.shape}")
    return image, mask


# -- augmentation ------------------------------------------------------------------


def augment(image: np.ndarray, mask: np.ndarray, flip_prob: float,
            rot_degrees: float, rng: np.random.Generator):
    """Identical geometric transform on image (bilinear) and mask (nearest).

    The flip fires with ``flip_prob``; the rotation angle is uniform in
    [-rot_degrees, rot_degrees]. Labels stay inside {0, 1, 2}.
    """
    img, msk = image, mask
    if flip_prob > 0 and rng.random() < flip_prob:
        img = np.flip(img, axis=-1)
        msk = np.flip(msk, axis=-1)
    if rot_degrees > 0:
        angle = float(rng.uniform(-rot_degrees, rot_degrees))
        img = ndimage.rotate(img, angle, axes=(-2, -1), reshape=False,
                             order=1, mode="constant", cval=0.0)
        msk = ndimage.rotate(msk, angle, axes=(-2, -1), reshape=False,
                             order=0, mode="constant", cval=0)
    return np.ascontiguousarray(img, dtype=np.float32), np.ascontiguousarray(msk, dtype=np.uint8)


# -- synthetic scenes -----------------------------------------------------------------


def synthetic_case(rng: np.random.Generator, size: int = 64):
    """One textured scene: a bright bar (label 1) and an ellipse (label 2).

    Returns (image float32 [H, W] in roughly [0, 1], mask uint8 [H, W]).
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    # low-frequency textured background plus pixel noise
    coarse = rng.normal(0.0, 1.0, size=(size // 8, size // 8))
    background = np.kron(coarse, np.ones((8, 8)))[:size, :size]
    image = 0.25 + 0.05 * background + 0.03 * rng.normal(size=(size, size))

    mask = np.zeros((size, size), dtype=np.uint8)

    # ellipse head in the lower half
    cy = rng.uniform(0.58, 0.72) * size
    cx = rng.uniform(0.35, 0.65) * size
    ry = rng.uniform(0.13, 0.19) * size
    rx = rng.uniform(0.15, 0.22) * size
    tilt = rng.uniform(0, np.pi)
    ct, st = np.cos(tilt), np.sin(tilt)
    u = (yy - cy) * ct + (xx - cx) * st
    v = -(yy - cy) * st + (xx - cx) * ct
    ellipse = (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
    mask[ellipse] = 2
    image[ellipse] += 0.35

    # thin bar in the upper half, tilted a little
    by = rng.uniform(0.18, 0.30) * size
    bx0 = rng.uniform(0.12, 0.22) * size
    length = rng.uniform(0.40, 0.52) * size
    slope = rng.uniform(-0.25, 0.25)
    half_t = rng.uniform(0.9, 1.6)
    p0 = np.array([by, bx0])
    p1 = p0 + length * np.array([slope, 1.0]) / np.hypot(slope, 1.0)
    seg = p1 - p0
    seg_len2 = float(seg @ seg)
    t = np.clip(((yy - p0[0]) * seg[0] + (xx - p0[1]) * seg[1]) / seg_len2, 0.0, 1.0)
    dist2 = (yy - (p0[0] + t * seg[0])) ** 2 + (xx - (p0[1] + t * seg[1])) ** 2
    bar = dist2 <= half_t ** 2
    mask[bar] = 1
    image[bar] += 0.55

    return image.astype(np.float32), mask


def synthetic_corpus(count: int, seed: int = 0, size: int = 64):
    """List of (normalized image [1, H, W], mask) pairs, deterministic per seed."""
    cases = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        image, mask = synthetic_case(rng, size)
        cases.append((normalize_image(image)[None], mask))
    return cases


def write_synthetic_dataset(root, count: int, seed: int = 0, size: int = 64) -> None:
    """Materialize a synthetic corpus under <root>/images and <root>/masks."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        image, mask = synthetic_case(rng, size)
        name = f"case_{i:04d}.png"
        write_image(root / "images" / name, image)
        write_mask(root / "masks" / name, mask)
