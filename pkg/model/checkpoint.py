"""
Flat binary checkpoints.

Layout::

    b"TVLMCKPT"                     magic
    u32 header length, header JSON  {"config": ModelConfig, "phase": str, "count": n}
    n x (u16 name length, name, u8 ndim, ndim x u32 dims, float32 little-endian values)

All integers are little-endian.
"""

import json
import logging
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from errors import CorpusIOError

from .vlm import ModelConfig, TinyVlm

logger = logging.getLogger(__name__)

MAGIC = b"TVLMCKPT"
_F4 = np.dtype("<f4")


def save_checkpoint(model: TinyVlm, path) -> Path:
    path = Path(path)
    parameters = list(model.named_parameters())
    header = json.dumps({
        "config": model.config.model_dump(),
        "phase": model.phase,
        "count": len(parameters),
    }).encode("utf-8")

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            for name, p in parameters:
                raw_name = name.encode("utf-8")
                f.write(struct.pack("<H", len(raw_name)))
                f.write(raw_name)
                f.write(struct.pack("<B", p.values.ndim))
                f.write(struct.pack(f"<{p.values.ndim}I", *p.shape))
                f.write(np.ascontiguousarray(p.values, dtype=_F4).tobytes())
    except OSError as e:
        raise CorpusIOError(str(path), f"cannot write checkpoint: {e}") from e

    logger.debug(f"Saved checkpoint {path} ({len(parameters)} tensors)")
    return path


def _read_exact(f: BinaryIO, count: int, path: Path) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise CorpusIOError(str(path), "truncated checkpoint")
    return data


def load_checkpoint(path) -> TinyVlm:
    """Rebuild the model from its stored config and copy every tensor in."""
    path = Path(path)
    try:
        f = open(path, "rb")
    except FileNotFoundError:
        raise CorpusIOError(str(path), "checkpoint not found") from None

    with f:
        if _read_exact(f, len(MAGIC), path) != MAGIC:
            raise CorpusIOError(str(path), "not a checkpoint file")
        (header_length,) = struct.unpack("<I", _read_exact(f, 4, path))
        try:
            header = json.loads(_read_exact(f, header_length, path).decode("utf-8"))
            config = ModelConfig(**header["config"])
            n_tensors = int(header["count"])
        except (ValueError, KeyError, TypeError) as e:
            raise CorpusIOError(str(path), f"corrupt checkpoint header: {e}") from None

        model = TinyVlm(config)
        expected = dict(model.named_parameters())
        for _ in range(n_tensors):
            (name_length,) = struct.unpack("<H", _read_exact(f, 2, path))
            name = _read_exact(f, name_length, path).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, path))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, path))
            count = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(_read_exact(f, count * _F4.itemsize, path), dtype=_F4).reshape(shape)

            target = expected.pop(name, None)
            if target is None or target.shape != tuple(shape):
                raise CorpusIOError(str(path), f"unexpected tensor '{name}' with shape {tuple(shape)}")
            target.values = values.astype(target.values.dtype, copy=True)

        if expected:
            raise CorpusIOError(str(path), f"missing tensors: {', '.join(sorted(expected))}")
        if f.read(1):
            raise CorpusIOError(str(path), "trailing bytes after the last tensor")

    model.set_phase(header.get("phase", "pretrain"))
    logger.debug(f"Loaded checkpoint {path}")
    return model
