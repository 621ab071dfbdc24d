"""Image container and the toolkit's binary file formats.

PAIF (single frame), little-endian::

    b"PAIF" | u32 version | u32 height | u32 width | f32 pixel_spacing_mm | f32[h*w]

PAVF (stacked frames) has the same layout with a ``u32 depth`` before height.
"""
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = b"PAIF"
VOLUME_MAGIC = b"PAVF"
FORMAT_VERSION = 1

_IMAGE_HEADER = struct.Struct("<4sIIIf")
_VOLUME_HEADER = struct.Struct("<4sIIIIf")


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


@dataclass
class Image:
    data: np.ndarray
    pixel_spacing_mm: float = 0.1

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {self.data.shape}")
        if not self.pixel_spacing_mm > 0:
            raise ValueError(f"pixel spacing must be > 0, got {self.pixel_spacing_mm}")

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def with_data(self, data):
        return Image(data, self.pixel_spacing_mm)


def encode_image(image):
    h, w = image.shape
    payload = np.ascontiguousarray(image.data, dtype="<f4").tobytes()
    return _IMAGE_HEADER.pack(IMAGE_MAGIC, FORMAT_VERSION, h, w, image.pixel_spacing_mm) + payload


def decode_image(buf):
    if len(buf) < _IMAGE_HEADER.size:
        raise FormatError("truncated image header")
    magic, version, h, w, spacing = _IMAGE_HEADER.unpack_from(buf)
    if magic != IMAGE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {IMAGE_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported image format version {version}")
    expected = _IMAGE_HEADER.size + 4 * h * w
    if len(buf) != expected:
        raise FormatError(f"image payload is {len(buf)} bytes, header declares {expected}")
    if not spacing > 0:
        raise FormatError(f"pixel spacing must be > 0, got {spacing}")
    data = np.frombuffer(buf, dtype="<f4", offset=_IMAGE_HEADER.size).reshape(h, w)
    return Image(data.astype(np.float32), float(spacing))


def write_image(path, image):
    with open(path, "wb") as f:
        f.write(encode_image(image))


def read_image(path):
    with open(path, "rb") as f:
        return decode_image(f.read())


def write_volume(path, frames):
    if not frames:
        raise ValueError("cannot write an empty volume")
    shape, spacing = frames[0].shape, frames[0].pixel_spacing_mm
    for i, fr in enumerate(frames):
        if fr.shape != shape:
            raise ValueError(f"frame {i} has shape {fr.shape}, expected {shape}")
    vol = np.stack([np.asarray(fr.data, dtype="<f4") for fr in frames])
    header = _VOLUME_HEADER.pack(VOLUME_MAGIC, FORMAT_VERSION, len(frames), *shape, spacing)
    with open(path, "wb") as f:
        f.write(header + vol.tobytes())


def read_volume(path):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _VOLUME_HEADER.size:
        raise FormatError("truncated volume header")
    magic, version, d, h, w, spacing = _VOLUME_HEADER.unpack_from(buf)
    if magic != VOLUME_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VOLUME_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported volume format version {version}")
    if len(buf) != _VOLUME_HEADER.size + 4 * d * h * w:
        raise FormatError("volume payload length does not match header")
    data = np.frombuffer(buf, dtype="<f4", offset=_VOLUME_HEADER.size).reshape(d, h, w)
    return data.astype(np.float32), float(spacing)


def write_pgm16(path, image):
    """16-bit binary PGM of the image clipped to [0, 1]; for viewing only."""
    h, w = image.shape
    pix = np.round(np.clip(np.asarray(image.data, dtype=np.float64), 0, 1) * 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(pix.tobytes())
