"""Dataset loading and portable image I/O.

Images are float64 (H, W, C) arrays in [0, 255] end to end; all epsilon
and weight presets refer to these pixel units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)

_CIFAR_RECORD = 3073  # 1 label byte + 3 * 1024 plane bytes


@dataclass
class Dataset:
    images: list
    labels: list
    class_names: list

    def __len__(self):
        return len(self.images)

    def subset(self, count, offset=0):
        return Dataset(self.images[offset:offset + count],
                       self.labels[offset:offset + count], self.class_names)


def load_cifar10_batch(path) -> Dataset:
    """Read one CIFAR-10 binary batch (label byte + R, G, B planes per record)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) == 0 or len(blob) % _CIFAR_RECORD != 0:
        raise FormatError(
            f"{path}: length {len(blob)} is not a positive multiple of {_CIFAR_RECORD}"
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0]
    bad = np.nonzero(labels >= 10)[0]
    if bad.size:
        raise FormatError(f"{path}: record {int(bad[0])} has label {int(labels[bad[0]])} >= 10")
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    images = [img.astype(np.float64) for img in pixels]
    return Dataset(images, [int(y) for y in labels], list(CIFAR10_CLASSES))


def save_cifar10_batch(dataset: Dataset, path):
    """Inverse of the loader for integer-valued 32x32x3 images."""
    with open(path, "wb") as f:
        for img, label in zip(dataset.images, dataset.labels):
            arr = np.asarray(img)
            if arr.shape != (32, 32, 3):
                raise InputError(f"CIFAR-10 records must be 32x32x3, got {arr.shape}")
            f.write(bytes([label]))
            planes = np.floor(arr + 0.5).astype(np.uint8).transpose(2, 0, 1)
            f.write(planes.tobytes())


def save_ppm(image, path):
    """Binary P6 PPM with maxval 255; pixels round to nearest integer."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"PPM export needs an (H,W,3) image, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 255:
        raise InputError("PPM export needs pixels in [0, 255]; clamp first")
    h, w, _ = arr.shape
    data = np.floor(arr + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P6"):
        raise FormatError(f"{path}: not a P6 PPM")
    # header: magic, width, height, maxval as whitespace-separated tokens
    fields = []
    pos = 2
    while len(fields) < 3 and pos < len(blob):
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if len(fields) < 3:
        raise FormatError(f"{path}: truncated PPM header")
    try:
        w, h, maxval = (int(tok) for tok in fields)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PPM header") from exc
    if maxval != 255 or w < 1 or h < 1:
        raise FormatError(f"{path}: unsupported PPM header ({w}x{h}, maxval {maxval})")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    pixels = blob[pos:pos + need]
    if len(pixels) != need:
        raise FormatError(f"{path}: expected {need} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).astype(np.float64)


def generate_synthetic(classes: int, per_class: int, size=(32, 32, 3), seed: int = 0) -> Dataset:
    """Class-conditional Gaussian-blob images with additive noise (sigma 20).

    Each class gets a smooth bump at a class-specific position with a
    class-specific channel emphasis; images are clamped to [0, 255].
    """
    if classes < 2:
        raise InputError(f"need at least 2 classes, got {classes}")
    h, w, c = size
    rng = np.random.default_rng(seed)
    means = class_mean_patterns(classes, size)
    images, labels = [], []
    for label in range(classes):
        for _ in range(per_class):
            noisy = means[label] + rng.normal(0.0, 20.0, size=size)
            images.append(np.clip(noisy, 0.0, 255.0))
            labels.append(label)
    names = [f"class{i}" for i in range(classes)]
    return Dataset(images, labels, names)


def class_mean_patterns(classes: int, size=(32, 32, 3)):
    """Deterministic per-class mean images (bump on a ring, channel-tinted)."""
    h, w, c = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    patterns = []
    for label in range(classes):
        angle = 2.0 * np.pi * label / classes
        cy = h / 2.0 + 0.28 * h * np.sin(angle)
        cx = w / 2.0 + 0.28 * w * np.cos(angle)
        sigma = 0.18 * min(h, w)
        bump = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma ** 2))
        img = np.full(size, 60.0)
        for ch in range(c):
            weight = 1.0 if ch == label % c else 0.35
            img[:, :, ch] += 160.0 * weight * bump
        patterns.append(np.clip(img, 0.0, 255.0))
    return patterns


def synthetic_manifest(classes: int, per_class: int, size, seed: int) -> dict:
    """JSON-ready description of a generated dataset (seed, sizes, class means)."""
    means = class_mean_patterns(classes, size)
    return {
        "kind": "synthetic",
        "classes": classes,
        "per_class": per_class,
        "size": list(size),
        "seed": seed,
        "noise_sigma": 20.0,
        "class_mean_pixel_averages": [float(np.mean(m)) for m in means],
    }
