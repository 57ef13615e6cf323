"""Dataset ingestion (root/CLASS/*.png), stratified splitting, and the
synthetic texture benchmark generator."""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass

import numpy as np
from PIL import Image

SYNTH_CLASSES_2 = ("other", "target")
SYNTH_CLASSES_5 = ("checker", "dots", "other", "stripes", "target")
IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class Dataset:
    class_names: list
    images: np.ndarray  # [n,C,H,W] in [0,1]
    labels: np.ndarray  # [n] int
    paths: list
    image_size: tuple
    channels: int

    def __len__(self):
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.class_names, self.images[indices], self.labels[indices],
                       [self.paths[i] for i in indices], self.image_size, self.channels)


@dataclass
class SplitSpec:
    train_fraction: float = 0.70
    seed: int = 0


def load_dataset(root, image_size=(64, 64), channels: int = 1) -> Dataset:
    """Decode root/CLASS/*.png into [0,1] arrays, bilinear-resized.

    Class names are the sorted directory names; record order is sorted by
    path, so re-loading is deterministic.
    """
    class_names = sorted(d for d in os.listdir(root)
                         if os.path.isdir(os.path.join(root, d)))
    if not class_names:
        raise ValueError(f"{root}: no class directories")
    h, w = image_size
    images, labels, paths = [], [], []
    for ci, cname in enumerate(class_names):
        cdir = os.path.join(root, cname)
        files = sorted(f for f in os.listdir(cdir)
                       if os.path.splitext(f)[1].lower() in IMAGE_EXTS)
        if not files:
            raise ValueError(f"{cdir}: empty class directory")
        for fname in files:
            path = os.path.join(cdir, fname)
            try:
                with Image.open(path) as img:
                    img = img.convert("L" if channels == 1 else "RGB")
                    img = img.resize((w, h), Image.BILINEAR)
                    arr = np.asarray(img, dtype=np.float64) / 255.0
            except Exception as e:
                raise ValueError(f"cannot decode image {path}: {e}") from e
            if channels == 1:
                arr = arr[None]
            else:
                arr = arr.transpose(2, 0, 1)
            images.append(arr)
            labels.append(ci)
            paths.append(path)
    return Dataset(class_names, np.stack(images), np.asarray(labels, dtype=np.int64),
                   paths, (h, w), channels)


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Stratified train/val split, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    train_idx, val_idx = [], []
    for ci in range(len(ds.class_names)):
        idx = np.flatnonzero(ds.labels == ci)
        if idx.size < 2:
            raise ValueError(f"class {ds.class_names[ci]!r} has {idx.size} image(s), need >= 2")
        perm = rng.permutation(idx)
        n_train = max(1, int(spec.train_fraction * idx.size))
        n_train = min(n_train, idx.size - 1)  # keep at least one validation image
        train_idx.extend(perm[:n_train])
        val_idx.extend(perm[n_train:])
    return ds.subset(np.sort(train_idx)), ds.subset(np.sort(val_idx))


# -- synthetic benchmark ----------------------------------------------------------


def _grid(size):
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    return ii / size, jj / size


def _smooth_texture(rng, size):
    """Band-limited target class: few low-frequency gratings + Gaussian blobs."""
    yy, xx = _grid(size)
    img = np.full((size, size), 0.5)
    for _ in range(rng.integers(2, 5)):
        fi, fj = rng.integers(-3, 4), rng.integers(-3, 4)
        if fi == 0 and fj == 0:
            fj = 1
        amp = rng.uniform(0.05, 0.15)
        phase = rng.uniform(0, 2 * np.pi)
        img += amp * np.sin(2 * np.pi * (fi * yy + fj * xx) + phase)
    for _ in range(rng.integers(1, 3)):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        sigma = rng.uniform(0.1, 0.25)
        amp = rng.uniform(-0.25, 0.25)
        img += amp * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2)))
    return img


def _boxblur(img, k):
    pad = k // 2
    p = np.pad(img, pad, mode="wrap")
    out = np.zeros_like(img)
    for di in range(k):
        for dj in range(k):
            out += p[di:di + img.shape[0], dj:dj + img.shape[1]]
    return out / (k * k)


def _speckle_texture(rng, size):
    """High-frequency class: high-passed white noise."""
    n = rng.standard_normal((size, size))
    hp = n - _boxblur(n, 5)
    return 0.5 + 0.18 * hp / hp.std()


def _stripe_texture(rng, size):
    yy, xx = _grid(size)
    f = rng.integers(8, 17)
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * f * (np.cos(theta) * yy + np.sin(theta) * xx) + phase)
    return 0.5 + 0.3 * np.sign(wave)


def _dot_texture(rng, size):
    yy, xx = _grid(size)
    img = np.full((size, size), 0.5)
    for _ in range(rng.integers(30, 61)):
        cy, cx = rng.uniform(0, 1, size=2)
        sigma = rng.uniform(0.015, 0.03)
        img += rng.choice([-0.4, 0.4]) * np.exp(
            -(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2)))
    return img


def _checker_texture(rng, size):
    cell = int(rng.choice([4, 8]))
    oy, ox = rng.integers(0, cell, size=2)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    board = (((ii + oy) // cell + (jj + ox) // cell) % 2) * 2 - 1
    return 0.5 + 0.25 * board


_GENERATORS = {
    "target": _smooth_texture,
    "other": _speckle_texture,
    "stripes": _stripe_texture,
    "dots": _dot_texture,
    "checker": _checker_texture,
}


def gen_synthetic(out_root, seed: int = 0, n_per_class: int = 200,
                  num_classes: int = 2, size: int = 64) -> list:
    """Write a deterministic grayscale texture dataset under out_root/CLASS/.

    Two-class mode: smooth 'target' textures vs high-frequency 'other'
    speckle; five-class mode adds stripes, dots and checkerboards.
    Returns the class names written.
    """
    if num_classes == 2:
        classes = SYNTH_CLASSES_2
    elif num_classes == 5:
        classes = SYNTH_CLASSES_5
    else:
        raise ValueError(f"gen_synthetic: num_classes must be 2 or 5, got {num_classes}")
    for cname in classes:
        cdir = os.path.join(out_root, cname)
        os.makedirs(cdir, exist_ok=True)
        rng = np.random.default_rng([seed, zlib.crc32(cname.encode())])
        gen = _GENERATORS[cname]
        for i in range(n_per_class):
            img = np.clip(gen(rng, size), 0.0, 1.0)
            pixels = np.round(img * 255).astype(np.uint8)
            Image.fromarray(pixels, mode="L").save(os.path.join(cdir, f"{cname}_{i:04d}.png"))
    return list(classes)
