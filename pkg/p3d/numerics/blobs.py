"""
Tensor blob files shared by checkpoints and datasets.

Layout: a little-endian uint32 header length, a UTF-8 JSON header
{name, dtype, shape}, then the C-order little-endian payload.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import torch

logger = logging.getLogger(__name__)

DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("u1"),
}
_CODES = {(v.kind, v.itemsize): k for k, v in DTYPES.items()}


class BlobError(Exception):
    """Raised for unreadable or malformed blob files"""
    def __init__(self, message: str, path: Union[str, Path, None] = None):
        self.message = message
        self.path = str(path) if path is not None else None
        super().__init__(f"{message} ({self.path})" if self.path else message)


def _as_array(value: Union[np.ndarray, torch.Tensor]) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.ascontiguousarray(value)


def dtype_code(array: np.ndarray) -> str:
    code = _CODES.get((array.dtype.kind, array.dtype.itemsize))
    if code is None:
        raise BlobError(f"unsupported blob dtype {array.dtype}")
    return code


def encode_blob(name: str, value: Union[np.ndarray, torch.Tensor]) -> bytes:
    array = _as_array(value)
    code = dtype_code(array)
    header = json.dumps({"name": name, "dtype": code, "shape": list(array.shape)}).encode("utf-8")
    payload = array.astype(DTYPES[code], copy=False).tobytes(order="C")
    return struct.pack("<I", len(header)) + header + payload


def decode_blob(data: bytes, path: Union[str, Path, None] = None) -> Tuple[str, np.ndarray]:
    if len(data) < 4:
        raise BlobError("blob shorter than its header length field", path)
    (header_len,) = struct.unpack("<I", data[:4])
    if len(data) < 4 + header_len:
        raise BlobError("blob header truncated", path)
    try:
        header = json.loads(data[4:4 + header_len].decode("utf-8"))
        name, code, shape = header["name"], header["dtype"], tuple(header["shape"])
        dtype = DTYPES[code]
    except (ValueError, KeyError, TypeError) as e:
        raise BlobError(f"invalid blob header: {e}", path) from e
    payload = data[4 + header_len:]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise BlobError(f"payload has {len(payload)} bytes, header implies {expected}", path)
    array = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return name, array


def write_blob(path: Union[str, Path], name: str, value: Union[np.ndarray, torch.Tensor]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_blob(name, value))
    return path


def read_blob(path: Union[str, Path]) -> Tuple[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise BlobError("blob file not found", path)
    return decode_blob(path.read_bytes(), path)
