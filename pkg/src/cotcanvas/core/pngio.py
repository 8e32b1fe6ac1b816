"""Strict PNG encoding and decoding for images and masks.

Images are 8-bit RGB; masks are 8-bit single-channel written as 0/255
and thresholded at 128 on read. Decoding never converts between modes:
a grayscale PNG where an RGB image is expected (or vice versa) is an
error, so round trips are bit-exact by construction.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DecodeError
from .types import BinaryMask, RasterImage

MASK_THRESHOLD = 128  # gray values >= this decode to 1


def encode_image_png(image: RasterImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image_png(data: bytes) -> RasterImage:
    img = _open_png(data)
    if img.mode != "RGB":
        raise DecodeError(f"expected an 8-bit RGB PNG, got mode {img.mode!r}")
    return RasterImage(np.asarray(img, dtype=np.uint8))


def encode_mask_png(mask: BinaryMask) -> bytes:
    buf = io.BytesIO()
    gray = np.where(mask.bits, 255, 0).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes) -> BinaryMask:
    img = _open_png(data)
    if img.mode != "L":
        raise DecodeError(f"expected an 8-bit single-channel PNG, got mode {img.mode!r}")
    gray = np.asarray(img, dtype=np.uint8)
    return BinaryMask(gray >= MASK_THRESHOLD)


def _open_png(data: bytes) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"not a decodable PNG: {exc}") from exc
    if img.format != "PNG":
        raise DecodeError(f"expected PNG bytes, got {img.format}")
    return img


def write_image_png(image: RasterImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_image_png(image))


def read_image_png(path) -> RasterImage:
    with open(path, "rb") as fh:
        return decode_image_png(fh.read())


def write_mask_png(mask: BinaryMask, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_mask_png(mask))


def read_mask_png(path) -> BinaryMask:
    with open(path, "rb") as fh:
        return decode_mask_png(fh.read())
