"""
ArrayFile 입출력

Layout, little-endian throughout:

    magic   7 bytes  b"TATARR1"
    version u8       1
    dtype   u8       1 = float64
    rank    u8
    dims    rank × u64
    payload ∏dims × f64, row-major

A JSON sidecar at ``<path>.json`` repeats the dims and carries the
semantic metadata (ArraySidecar).
"""
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from config.exceptions import ArrayFormatError
from tat_experiments.serializers.array_serializers import ArraySidecar

logger = logging.getLogger(__name__)

MAGIC = b'TATARR1'
VERSION = 1
DTYPE_CODES = {1: np.dtype('<f8')}
HEADER_FIXED = len(MAGIC) + 3

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.json')


def encode_array(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype='<f8')
    if array.ndim > 255:
        raise ArrayFormatError(f"rank {array.ndim} does not fit the u8 rank field")
    header = MAGIC + bytes([VERSION, 1, array.ndim]) + np.asarray(array.shape, dtype='<u8').tobytes()
    return header + array.tobytes(order='C')


def decode_array(blob: bytes, source: str = '<bytes>') -> np.ndarray:
    """
    바이트열을 배열로 복원

    Raises:
        ArrayFormatError: bad magic, unknown version or dtype, truncated
            header or payload, trailing bytes
    """
    if len(blob) < HEADER_FIXED:
        raise ArrayFormatError(f"{source}: header truncated ({len(blob)} bytes, need at least {HEADER_FIXED})")
    if blob[:len(MAGIC)] != MAGIC:
        raise ArrayFormatError(f"{source}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    version, dtype_code, rank = blob[len(MAGIC)], blob[len(MAGIC) + 1], blob[len(MAGIC) + 2]
    if version != VERSION:
        raise ArrayFormatError(f"{source}: unsupported version {version}, expected {VERSION}")
    if dtype_code not in DTYPE_CODES:
        raise ArrayFormatError(f"{source}: unknown dtype code {dtype_code}")
    dims_end = HEADER_FIXED + 8 * rank
    if len(blob) < dims_end:
        raise ArrayFormatError(f"{source}: dims truncated, expected {dims_end} header bytes, got {len(blob)}")
    dims = tuple(int(d) for d in np.frombuffer(blob, dtype='<u8', count=rank, offset=HEADER_FIXED))
    expected = 8 * int(np.prod(dims, dtype=np.int64))
    actual = len(blob) - dims_end
    if actual != expected:
        raise ArrayFormatError(f"{source}: payload length {actual} bytes, expected {expected} for dims {dims}")
    return np.frombuffer(blob, dtype=DTYPE_CODES[dtype_code], offset=dims_end).reshape(dims).copy()


def write_array(path: PathLike, array: np.ndarray, sidecar: Optional[ArraySidecar] = None, **meta) -> Path:
    """
    배열과 sidecar 저장

    Args:
        path: target file
        array: any real array, stored as float64
        sidecar: metadata; built from ``meta`` when omitted

    Returns:
        Path: the array file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.asarray(array, dtype=np.float64)
    if sidecar is None:
        sidecar = ArraySidecar(dims=list(array.shape), **meta)
    elif list(sidecar.dims) != list(array.shape):
        raise ArrayFormatError(f"sidecar dims {sidecar.dims} do not match array shape {list(array.shape)}")
    path.write_bytes(encode_array(array))
    sidecar_path(path).write_text(sidecar.model_dump_json(indent=2), encoding='utf-8')
    logger.info(f"wrote {path} {array.shape}")
    return path


def read_sidecar(path: PathLike) -> ArraySidecar:
    meta = sidecar_path(path)
    if not meta.exists():
        raise ArrayFormatError(f"sidecar not found: {meta}")
    try:
        return ArraySidecar.model_validate_json(meta.read_text(encoding='utf-8'))
    except ValidationError as e:
        raise ArrayFormatError(f"invalid sidecar {meta}: {e}") from e


def read_array(path: PathLike, with_sidecar: bool = True) -> Tuple[np.ndarray, Optional[ArraySidecar]]:
    """
    배열 파일 읽기

    Raises:
        ArrayFormatError: malformed file, or sidecar dims differ from the header
    """
    path = Path(path)
    if not path.exists():
        raise ArrayFormatError(f"array file not found: {path}")
    array = decode_array(path.read_bytes(), str(path))
    if not with_sidecar:
        return array, None
    sidecar = read_sidecar(path)
    if list(sidecar.dims) != list(array.shape):
        raise ArrayFormatError(f"{path}: sidecar dims {sidecar.dims} differ from header dims {list(array.shape)}")
    return array, sidecar
