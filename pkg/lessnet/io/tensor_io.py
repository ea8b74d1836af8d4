"""LTF1 tensor files and LTC1 checkpoint containers.

LTF1 record::

    b"LTF1"  dtype:u8 (1 = float32)  rank:u8  reserved:u16 (zero)
    extents: rank x u32  payload: float32, row-major, little-endian

LTC1 container::

    b"LTC1"  count:u32  then per entry  name_len:u16  name:utf-8  LTF1 record

All integers are little-endian.
"""

import json
import logging
import math
import struct
from pathlib import Path

import numpy as np

from lessnet.autograd import Tensor
from lessnet.core.errors import TensorIOError
from lessnet.domain.models import ParameterSet, RegistrationModel, build_model

logger = logging.getLogger(__name__)

TENSOR_MAGIC = b"LTF1"
CHECKPOINT_MAGIC = b"LTC1"
DTYPE_FLOAT32 = 1

_HEADER = struct.Struct("<4sBBH")
_COUNT = struct.Struct("<I")
_NAME_LEN = struct.Struct("<H")


def encode_tensor(value: Tensor | np.ndarray) -> bytes:
    """Serialise a tensor as one LTF1 record (converted to float32)."""
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    if array.ndim == 0:
        array = array.reshape(1)
    if array.ndim > 255:
        raise TensorIOError(f"rank {array.ndim} does not fit in one byte")
    header = _HEADER.pack(TENSOR_MAGIC, DTYPE_FLOAT32, array.ndim, 0)
    extents = struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    return header + extents + payload


def _need(buffer: bytes, offset: int, size: int, what: str) -> None:
    if offset + size > len(buffer):
        raise TensorIOError(
            f"truncated {what}: need {size} bytes, {len(buffer) - offset} available", offset=offset
        )


def decode_tensor(buffer: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one LTF1 record starting at ``offset``.

    Returns:
        The float32 array and the offset just past the record

    Raises:
        TensorIOError: On bad magic, unsupported dtype, nonzero reserved bytes,
            zero extents or truncation (with the byte offset of the problem)
    """
    _need(buffer, offset, _HEADER.size, "tensor header")
    magic, dtype, rank, reserved = _HEADER.unpack_from(buffer, offset)
    if magic != TENSOR_MAGIC:
        raise TensorIOError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}", offset=offset)
    if dtype != DTYPE_FLOAT32:
        raise TensorIOError(f"unsupported dtype code {dtype}, only 1 (float32) is defined", offset=offset + 4)
    if reserved != 0:
        raise TensorIOError(f"reserved header bytes must be zero, got {reserved}", offset=offset + 6)
    if rank == 0:
        raise TensorIOError("tensor rank must be >= 1", offset=offset + 5)
    pos = offset + _HEADER.size

    _need(buffer, pos, 4 * rank, "tensor extents")
    shape = struct.unpack_from(f"<{rank}I", buffer, pos)
    if 0 in shape:
        raise TensorIOError(f"tensor extents must be >= 1, got {shape}", offset=pos)
    pos += 4 * rank

    count = math.prod(shape)
    _need(buffer, pos, 4 * count, "tensor payload")
    array = np.frombuffer(buffer, dtype="<f4", count=count, offset=pos).reshape(shape)
    return array.astype(np.float32), pos + 4 * count


def write_tensor(path: Path, value: Tensor | np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(value))


def read_tensor(path: Path) -> Tensor:
    """Read a file holding exactly one LTF1 record.

    Raises:
        TensorIOError: If the file cannot be read, or the record is malformed or
            followed by extra bytes
    """
    try:
        buffer = Path(path).read_bytes()
    except OSError as e:
        raise TensorIOError(f"cannot read tensor file {path}: {e.strerror or e}") from e
    array, end = decode_tensor(buffer)
    if end != len(buffer):
        raise TensorIOError(f"{len(buffer) - end} trailing bytes after tensor record", offset=end)
    return Tensor(array, dtype=np.float32)


def encode_container(entries: dict[str, Tensor | np.ndarray]) -> bytes:
    """Serialise named tensors as an LTC1 container, preserving order."""
    chunks = [CHECKPOINT_MAGIC, _COUNT.pack(len(entries))]
    for name, value in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise TensorIOError(f"entry name too long ({len(raw)} bytes): {name[:40]}...")
        chunks += [_NAME_LEN.pack(len(raw)), raw, encode_tensor(value)]
    return b"".join(chunks)


def decode_container(buffer: bytes) -> dict[str, np.ndarray]:
    """Parse an LTC1 container into an ordered name-to-array mapping.

    Raises:
        TensorIOError: On bad magic, truncation, invalid UTF-8, duplicate names or trailing bytes
    """
    _need(buffer, 0, 8, "container header")
    if buffer[:4] != CHECKPOINT_MAGIC:
        raise TensorIOError(f"bad container magic {buffer[:4]!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    (count,) = _COUNT.unpack_from(buffer, 4)
    pos = 8
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        _need(buffer, pos, _NAME_LEN.size, "entry name length")
        (length,) = _NAME_LEN.unpack_from(buffer, pos)
        pos += _NAME_LEN.size
        _need(buffer, pos, length, "entry name")
        try:
            name = buffer[pos : pos + length].decode("utf-8")
        except UnicodeDecodeError as e:
            raise TensorIOError(f"entry name is not valid UTF-8: {e}", offset=pos) from e
        if name in entries:
            raise TensorIOError(f"duplicate entry name {name!r}", offset=pos)
        pos += length
        entries[name], pos = decode_tensor(buffer, pos)
    if pos != len(buffer):
        raise TensorIOError(f"{len(buffer) - pos} trailing bytes after {count} entries", offset=pos)
    return entries


def header_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(path: Path, model: RegistrationModel, params: ParameterSet) -> None:
    """Write ``<path>`` (LTC1 parameters) and ``<path>.json`` (model kind and config)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(dict(params.tensors())))
    header_path(path).write_text(json.dumps(model.header(), indent=2, sort_keys=True) + "\n")
    logger.info(f"Saved {model.kind} checkpoint to {path} ({params.scalar_count()} parameters)")


def load_checkpoint(path: Path) -> tuple[RegistrationModel, ParameterSet]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        TensorIOError: If either file is missing or malformed, or the stored
            tensors do not match the model's layer table
    """
    path = Path(path)
    meta = header_path(path)
    if not path.is_file() or not meta.is_file():
        raise TensorIOError(f"checkpoint {path} needs both {path.name} and {meta.name}")
    try:
        header = json.loads(meta.read_text())
        model = build_model(header["kind"], header["config"])
        buffer = path.read_bytes()
    except OSError as e:
        raise TensorIOError(f"cannot read checkpoint {path}: {e.strerror or e}") from e
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise TensorIOError(f"malformed checkpoint header {meta}: {e}") from e

    params = ParameterSet.from_arrays(decode_container(buffer))
    expected = {spec.name: spec.weight_shape(model.rank) for spec in model.layer_table()}
    if list(params) != list(expected):
        raise TensorIOError(
            f"checkpoint layers {list(params)} do not match the {model.kind} layer table {list(expected)}"
        )
    for name, shape in expected.items():
        if params[name].weight.shape != shape:
            raise TensorIOError(f"{name}.weight has shape {params[name].weight.shape}, expected {shape}")
    return model, params
