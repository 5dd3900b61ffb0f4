"""PPM (P6) / PGM (P5) ingestion and deterministic patch sampling."""

from __future__ import annotations

import os

import numpy as np


class DataError(ValueError):
    """Malformed image file or unusable directory."""


def _read_header_tokens(blob: bytes, count: int, path: str):
    """Read ``count`` whitespace-separated tokens, honoring '#' comments."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(blob):
            raise DataError(f"{path}: truncated header")
        c = blob[i:i + 1]
        if c == b"#":
            while i < len(blob) and blob[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j:j + 1].isspace() and blob[j:j + 1] != b"#":
                j += 1
            tokens.append(blob[i:j])
            i = j
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def load_image(path) -> np.ndarray:
    """Decode one P6/P5 file to a (3, H, W) float array in [0, 1].

    Grayscale inputs are replicated across the three channels.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, offset = _read_header_tokens(blob, 4, path)
    magic = tokens[0]
    if magic not in (b"P6", b"P5"):
        raise DataError(f"{path}: unsupported magic {magic!r} (want P6 or P5)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise DataError(f"{path}: non-numeric header fields") from None
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: maxval {maxval} unsupported (8-bit only)")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raster = blob[offset:offset + need]
    if len(raster) != need:
        raise DataError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    img = img.transpose(2, 0, 1).astype(np.float64) / 255.0
    if channels == 1:
        img = np.repeat(img, 3, axis=0)
    return img


def write_ppm(path, img: np.ndarray) -> None:
    """Write a (3, H, W) float array in [0, 1] as binary P6."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"expected (3, H, W) image, got {img.shape}")
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[1], img.shape[2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.transpose(1, 2, 0).tobytes())


def list_image_files(directory) -> list[str]:
    names = sorted(n for n in os.listdir(directory)
                   if n.lower().endswith((".ppm", ".pgm")))
    return [os.path.join(directory, n) for n in names]


def pad_to_multiple(img: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad (3, H, W) up to multiples; returns the original size too."""
    _, h, w = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return img, (h, w)


class PatchSampler:
    """Deterministic random crops from a pool of images."""

    def __init__(self, images: list[np.ndarray], patch: int, seed: int = 0):
        if not images:
            raise DataError("no images to sample from")
        for img in images:
            if img.shape[1] < patch or img.shape[2] < patch:
                raise DataError(
                    f"image {img.shape[1]}x{img.shape[2]} smaller than patch {patch}"
                )
        self.images = images
        self.patch = patch
        self.rng = np.random.default_rng(seed)

    def batch(self, n: int) -> np.ndarray:
        out = np.empty((n, 3, self.patch, self.patch))
        for k in range(n):
            img = self.images[int(self.rng.integers(len(self.images)))]
            i = int(self.rng.integers(img.shape[1] - self.patch + 1))
            j = int(self.rng.integers(img.shape[2] - self.patch + 1))
            out[k] = img[:, i:i + self.patch, j:j + self.patch]
        return out


def load_images(directory, patch: int = 0, seed: int = 0):
    """Directory ingestion.

    With ``patch > 0`` returns a PatchSampler for training; otherwise the
    list of full images (pad for evaluation with ``pad_to_multiple``).
    """
    files = list_image_files(directory)
    if not files:
        raise DataError(f"{directory}: no .ppm/.pgm files found")
    images = [load_image(f) for f in files]
    if patch:
        return PatchSampler(images, patch, seed)
    return images
