"""PNG reading and writing for images, trimaps and alpha mattes.

Images are (3, H, W) float arrays in [0, 1]; alpha planes are (H, W).
"""

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .trimap import TrimapMasks


class ImageIOError(OSError):
    """A raster could not be read or written; carries the offending path."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = os.fspath(path)
        self.reason = reason


def _open(path):
    try:
        img = Image.open(path)
        img.load()
        return img
    except FileNotFoundError:
        raise ImageIOError(path, "no such file") from None
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageIOError(path, f"cannot decode image ({exc})") from None


def load_image(path):
    """8-bit RGB(A) raster -> float32 (3, H, W) in [0, 1]; alpha is dropped."""
    img = _open(path)
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
        arr = np.repeat(arr[None], 3, axis=0)
    else:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
    return np.ascontiguousarray(arr, dtype=np.float32)


def save_image(path, image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must be (3, H, W), got {image.shape}")
    q = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(np.ascontiguousarray(q.transpose(1, 2, 0)), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(path, f"cannot write ({exc})") from None


def _gray8(path):
    img = _open(path)
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        return np.round(np.asarray(img, dtype=np.float64) / 257.0).astype(np.uint8)
    return np.asarray(img.convert("L"))


def load_trimap(path, expected_shape=None):
    """Grayscale trimap -> masks (``< 64`` background, ``> 191`` foreground)."""
    labels = _gray8(path)
    if expected_shape is not None and labels.shape != tuple(expected_shape):
        raise ImageIOError(path, f"trimap is {labels.shape}, expected {tuple(expected_shape)}")
    return TrimapMasks.from_labels(labels)


def save_trimap(path, masks):
    try:
        Image.fromarray(masks.to_labels(), mode="L").save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(path, f"cannot write ({exc})") from None


def save_alpha(path, alpha):
    """Write an alpha plane as 16-bit grayscale PNG."""
    alpha = np.asarray(alpha)
    if alpha.ndim == 3 and alpha.shape[0] == 1:
        alpha = alpha[0]
    if alpha.ndim != 2:
        raise ValueError(f"alpha must be (H, W), got {alpha.shape}")
    q = np.round(np.clip(alpha, 0.0, 1.0) * 65535.0).astype(np.uint16)
    try:
        Image.fromarray(q).save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(path, f"cannot write ({exc})") from None


def load_alpha(path):
    """Alpha plane in [0, 1] from a 16-bit or 8-bit grayscale PNG."""
    img = _open(path)
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    else:
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return arr.astype(np.float32)
