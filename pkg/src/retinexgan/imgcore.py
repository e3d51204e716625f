"""Image containers, range conversions, resizing and PNG I/O.

Every image in the toolkit is a channel-first float array. Storage space is
[0, 1] (what PNG files hold after dequantization); network space is [-1, 1]
(what the networks consume and produce). Conversions between the two are
exact affine maps.
"""

import enum
import os

import cv2
import numpy as np
import torch


class Space(enum.Enum):
    STORAGE01 = "storage01"
    NETWORK11 = "network11"


class ImageError(Exception):
    """Base class for image handling failures."""


class DecodeError(ImageError):
    """File exists but is not a decodable PNG."""


class UnsupportedBitDepthError(ImageError):
    """PNG decoded but is neither 8- nor 16-bit."""


class SpaceError(ImageError):
    """Operation received an image in the wrong value space."""


class ImageTensor:
    """Float image of shape (C, H, W) with an explicit value space.

    Values are validated on construction: storage01 images must lie in
    [0, 1], network11 images in [-1, 1]. Channels must be 1 or 3.
    """

    __slots__ = ("data", "space")

    def __init__(self, data, space):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        if data.ndim != 3:
            raise ValueError(f"expected (C, H, W) array, got shape {data.shape}")
        c, h, w = data.shape
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if h < 1 or w < 1:
            raise ValueError(f"degenerate spatial dims {h}x{w}")
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite pixel values")
        lo, hi = (0.0, 1.0) if space is Space.STORAGE01 else (-1.0, 1.0)
        if data.min() < lo or data.max() > hi:
            raise ValueError(
                f"values outside [{lo}, {hi}] for {space.value}: "
                f"min={data.min()}, max={data.max()}"
            )
        self.data = data
        self.space = space

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"ImageTensor(shape={self.data.shape}, space={self.space.value})"


class ImageU8:
    """8-bit integer image (C, H, W), the domain of the evaluation metrics."""

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data)
        if data.dtype != np.uint8:
            raise ValueError(f"expected uint8 data, got {data.dtype}")
        if data.ndim != 3 or data.shape[0] not in (1, 3):
            raise ValueError(f"expected (C, H, W) uint8 array, got shape {data.shape}")
        self.data = data

    @property
    def shape(self):
        return self.data.shape


def load_png(path):
    """Load an 8- or 16-bit PNG as a storage01 ImageTensor.

    8-bit value v maps to v/255, 16-bit to v/65535. Missing files,
    undecodable content and unsupported bit depths raise distinct errors.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such image file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    arr = cv2.imdecode(raw, cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DecodeError(f"cannot decode PNG: {path}")
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype == np.uint16:
        scale = 65535.0
    else:
        raise UnsupportedBitDepthError(f"unsupported PNG sample type {arr.dtype}: {path}")
    if arr.ndim == 2:
        chw = arr[None, :, :]
    elif arr.ndim == 3 and arr.shape[2] == 3:
        chw = cv2.cvtColor(arr, cv2.COLOR_BGR2RGB).transpose(2, 0, 1)
    else:
        raise DecodeError(f"expected grayscale or RGB PNG, got shape {arr.shape}: {path}")
    return ImageTensor(chw.astype(np.float32) / scale, Space.STORAGE01)


def save_png(img, path):
    """Write a storage01 ImageTensor as an 8-bit PNG."""
    if img.space is not Space.STORAGE01:
        raise SpaceError("save_png expects a storage01 image")
    u8 = quantize(img).data
    if u8.shape[0] == 1:
        hw = u8[0]
    else:
        hw = cv2.cvtColor(u8.transpose(1, 2, 0), cv2.COLOR_RGB2BGR)
    ok, buf = cv2.imencode(".png", hw)
    if not ok:
        raise ImageError(f"PNG encode failed for {path}")
    try:
        with open(path, "wb") as fh:
            fh.write(buf.tobytes())
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def to_network(img):
    """Map storage01 [0,1] to network11 [-1,1] via v -> 2v - 1.

    Computed in float64 so the map is exact for float32 inputs and
    from_network inverts it bit-for-bit.
    """
    if img.space is not Space.STORAGE01:
        raise SpaceError("to_network expects a storage01 image")
    return ImageTensor(img.data.astype(np.float64) * 2.0 - 1.0, Space.NETWORK11)


def from_network(img):
    """Inverse of to_network: v -> (v + 1) / 2."""
    if img.space is not Space.NETWORK11:
        raise SpaceError("from_network expects a network11 image")
    out = (img.data.astype(np.float64) + 1.0) / 2.0
    return ImageTensor(out.astype(np.float32), Space.STORAGE01)


def resize(img, height, width):
    """Bilinear resize with corners aligned to pixel centers.

    Constant images stay constant; resizing to the current size returns a
    bit-identical copy.
    """
    if height < 1 or width < 1:
        raise ValueError(f"non-positive target dims {height}x{width}")
    c, h, w = img.data.shape
    if (h, w) == (height, width):
        return ImageTensor(img.data.copy(), img.space)
    t = torch.from_numpy(img.data[None])
    out = torch.nn.functional.interpolate(
        t, size=(height, width), mode="bilinear", align_corners=True
    )[0].numpy()
    # interpolation can overshoot by float rounding only; clamp back to range
    lo, hi = (0.0, 1.0) if img.space is Space.STORAGE01 else (-1.0, 1.0)
    return ImageTensor(np.clip(out, lo, hi), img.space)


def quantize(img):
    """storage01 -> uint8 via round-half-away-from-zero of v * 255."""
    if img.space is not Space.STORAGE01:
        raise SpaceError("quantize expects a storage01 image")
    scaled = img.data.astype(np.float64) * 255.0
    return ImageU8(np.floor(scaled + 0.5).astype(np.uint8))


def dequantize(img):
    """uint8 -> storage01 via v / 255."""
    return ImageTensor(img.data.astype(np.float32) / 255.0, Space.STORAGE01)
