"""8-bit RGB raster helpers: PNG codec, base64 wire form, nearest resize."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class InputError(ValueError):
    """Undecodable or out-of-contract image input."""


MAX_SIDE = 4096


def to_png_bytes(img: np.ndarray) -> bytes:
    arr = np.asarray(img, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def from_png_bytes(data: bytes) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise InputError(f"cannot decode image: {exc}") from exc
    if img.width > MAX_SIDE or img.height > MAX_SIDE:
        raise InputError(f"image {img.width}x{img.height} exceeds {MAX_SIDE} per side")
    return np.asarray(img.convert("RGB"))


def to_b64_png(img: np.ndarray) -> str:
    return base64.b64encode(to_png_bytes(img)).decode("ascii")


def from_b64_png(s: str) -> np.ndarray:
    try:
        raw = base64.b64decode(s, validate=True)
    except Exception as exc:
        raise InputError(f"bad base64 image payload: {exc}") from exc
    return from_png_bytes(raw)


def resize_nearest(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Nearest-neighbor resize using the same index arithmetic as mask resizing."""
    arr = np.asarray(img, dtype=np.uint8)
    h, w = arr.shape[:2]
    if (w, h) == (new_w, new_h):
        return arr.copy()
    rows = (np.arange(new_h) * h) // new_h
    cols = (np.arange(new_w) * w) // new_w
    return arr[np.ix_(rows, cols)]
