"""Reading and writing PNG, PGM (P5) and PPM (P6) images as float arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import png
from PIL import Image, UnidentifiedImageError

PNM_SUFFIXES = {".pgm", ".ppm", ".pnm"}


class ImageFormatError(ValueError):
    """Unsupported, corrupt or alpha-carrying image file."""


def _squeeze(a: np.ndarray) -> np.ndarray:
    return a[:, :, 0] if a.ndim == 3 and a.shape[2] == 1 else a


def _load_png(path: Path) -> np.ndarray:
    try:
        width, height, rows, info = png.Reader(filename=str(path)).asDirect()
        data = np.vstack([np.asarray(row, dtype=np.float64) for row in rows])
    except png.Error as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    if info.get("alpha"):
        raise ImageFormatError(f"{path}: images with an alpha channel are not supported")
    planes = info["planes"]
    data = data.reshape(height, width, planes) / float(2 ** info["bitdepth"] - 1)
    return _squeeze(data)


def _load_pnm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: only binary PGM (P5) and PPM (P6) are supported")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            data = np.asarray(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    peak = 255.0 if mode in ("L", "RGB") else 65535.0
    return _squeeze(data.astype(np.float64) / peak)


def load_image(path) -> np.ndarray:
    """Decode ``path`` to a float64 array of shape (H, W) or (H, W, 3) in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".png":
        return _load_png(path)
    if suffix in PNM_SUFFIXES:
        return _load_pnm(path)
    raise ImageFormatError(f"{path}: unsupported file type {suffix or '(none)'}")


def to_bytes(image) -> np.ndarray:
    """Quantize [0, 1] samples to uint8, rounding halves up."""
    a = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def save_image(image, path) -> None:
    """Write an 8-bit PNG, PGM or PPM chosen by the file extension."""
    path = Path(path)
    q = _squeeze(to_bytes(image))
    if q.ndim == 3 and q.shape[2] != 3:
        raise ImageFormatError(f"cannot save {q.shape[2]}-channel image")
    suffix = path.suffix.lower()
    if suffix == ".png":
        greyscale = q.ndim == 2
        writer = png.Writer(q.shape[1], q.shape[0], greyscale=greyscale, bitdepth=8)
        with open(path, "wb") as fh:
            writer.write(fh, q.reshape(q.shape[0], -1))
    elif suffix in PNM_SUFFIXES:
        if suffix == ".pgm" and q.ndim == 3:
            raise ImageFormatError("PGM holds grayscale images only; use .ppm")
        if suffix == ".ppm" and q.ndim == 2:
            q = np.repeat(q[:, :, None], 3, axis=2)
        Image.fromarray(q).save(path, format="PPM")
    else:
        raise ImageFormatError(f"{path}: unsupported file type {suffix or '(none)'}")
