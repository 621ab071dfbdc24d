"""Binary checkpoint format for :class:`~pamwcnn.mwcnn.ModelParams`.

Layout (little-endian)::

    b"MWCK" | u32 version | u32 config_len | config JSON (utf-8)
    | per layer in builder order: f32 weights, f32 bias
    | trailer: u32 byte length of everything above, u32 CRC-32 of it

The trailer is one 64-bit record; loading checks magic, version, the shape
walk implied by the config, the length and the checksum.
"""
import json
import struct
import zlib

import numpy as np

from .imageio import FormatError
from .mwcnn import ModelConfig, ModelParams
from .tensor_core import ConvLayerParams

MAGIC = b"MWCK"
VERSION = 1
_TRAILER = struct.Struct("<II")


def _config_to_json(config):
    return json.dumps(
        {
            "levels": config.levels,
            "convs_per_block": config.convs_per_block,
            "channel_schedule": list(config.channel_schedule),
            "input_channels": config.input_channels,
            "residual_mode": config.residual_mode,
        },
        sort_keys=True,
    ).encode("utf-8")


def encode_checkpoint(params):
    cfg = _config_to_json(params.config)
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg]
    for layer in params.layers:
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    body = b"".join(parts)
    if len(body) >= 2**32:
        raise ValueError("model too large for the checkpoint length field")
    return body + _TRAILER.pack(len(body), zlib.crc32(body))


def decode_checkpoint(buf):
    if len(buf) < 12 + _TRAILER.size or buf[:4] != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    body, trailer = buf[: -_TRAILER.size], buf[-_TRAILER.size:]
    length, crc = _TRAILER.unpack(trailer)
    if length != len(body):
        raise FormatError(f"checkpoint length record {length} != actual {len(body)}")
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint checksum mismatch")
    version, cfg_len = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        cfg = json.loads(body[12 : 12 + cfg_len].decode("utf-8"))
        config = ModelConfig(**cfg)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad model config in checkpoint: {exc}") from exc

    offset = 12 + cfg_len
    layers = []
    for c_out, c_in in config.layer_shapes():
        nw, nb = c_out * c_in * 9, c_out
        if offset + 4 * (nw + nb) > len(body):
            raise FormatError("checkpoint truncated: fewer weights than the config requires")
        w = np.frombuffer(body, "<f4", nw, offset).reshape(c_out, c_in, 3, 3)
        b = np.frombuffer(body, "<f4", nb, offset + 4 * nw)
        layers.append(ConvLayerParams(w.astype(np.float32), b.astype(np.float32)))
        offset += 4 * (nw + nb)
    if offset != len(body):
        raise FormatError(f"{len(body) - offset} trailing bytes after the last layer")
    return ModelParams(config, layers)


def save_checkpoint(path, params):
    with open(path, "wb") as f:
        f.write(encode_checkpoint(params))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
