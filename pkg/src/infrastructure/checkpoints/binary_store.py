"""
Binary Checkpoint Store
Portable little-endian float32 format with a CRC-32 trailer

Layout:
    magic b"ARCK" | uint32 version | uint32 d_in, h, d_emb, n
    | float32 blobs w1, b1, w2, b2, centres (row-major; centres absent when n = 0)
    | uint32 CRC-32 of every preceding byte
"""

import struct
import zlib
from typing import List, Tuple

import numpy as np

from src.core.exceptions import ChecksumMismatch, CheckpointFormatError
from src.core.logger import logger
from src.domain.models import Checkpoint, ToyNet
from src.infrastructure.checkpoints.base_store import BaseCheckpointStore

MAGIC = b"ARCK"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")
TRAILER = struct.Struct("<I")
SCALAR = np.dtype("<f4")


def _blob_shapes(d_in: int, h: int, d_emb: int, n: int) -> List[Tuple[str, Tuple[int, ...]]]:
    shapes = [("w1", (d_in, h)), ("b1", (h,)), ("w2", (h, d_emb)), ("b2", (d_emb,))]
    if n > 0:
        shapes.append(("centres", (d_emb, n)))
    return shapes


class BinaryCheckpointStore(BaseCheckpointStore):
    """Checkpoint store writing the ARCK binary format"""

    def _encode(self, checkpoint: Checkpoint) -> bytes:
        d_in, h, d_emb, n = checkpoint.dims
        arrays = dict(checkpoint.net.parameters())
        if checkpoint.centres is not None:
            arrays["centres"] = checkpoint.centres
        parts = [HEADER.pack(MAGIC, VERSION, d_in, h, d_emb, n)]
        for name, shape in _blob_shapes(d_in, h, d_emb, n):
            parts.append(np.ascontiguousarray(arrays[name], dtype=SCALAR).reshape(shape).tobytes())
        body = b"".join(parts)
        return body + TRAILER.pack(zlib.crc32(body) & 0xFFFFFFFF)

    def _decode(self, payload: bytes) -> Checkpoint:
        if len(payload) < HEADER.size + TRAILER.size:
            raise CheckpointFormatError(f"Checkpoint too short: {len(payload)} bytes")
        body, (stored_crc,) = payload[:-TRAILER.size], TRAILER.unpack(payload[-TRAILER.size:])
        actual_crc = zlib.crc32(body) & 0xFFFFFFFF
        if actual_crc != stored_crc:
            raise ChecksumMismatch(f"CRC-32 mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")

        magic, version, d_in, h, d_emb, n = HEADER.unpack_from(body)
        if magic != MAGIC:
            raise CheckpointFormatError(f"Bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointFormatError(f"Unsupported checkpoint version {version}")

        shapes = _blob_shapes(d_in, h, d_emb, n)
        expected = HEADER.size + sum(int(np.prod(s)) for _, s in shapes) * SCALAR.itemsize
        if expected != len(body):
            raise CheckpointFormatError(f"Declared sizes need {expected} bytes, found {len(body)}")

        arrays = {}
        offset = HEADER.size
        for name, shape in shapes:
            count = int(np.prod(shape))
            blob = np.frombuffer(body, dtype=SCALAR, count=count, offset=offset)
            arrays[name] = blob.astype(np.float64).reshape(shape)
            offset += count * SCALAR.itemsize

        logger.info(f"Loaded checkpoint d_in={d_in} h={h} d_emb={d_emb} n={n}")
        return Checkpoint(net=ToyNet.from_parameters(arrays), centres=arrays.get("centres"))
