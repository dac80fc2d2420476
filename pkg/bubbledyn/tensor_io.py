"""Binary tensor files and image exports.

Tensor layout (all little-endian):

    b"BTNS" | version u8 | rank u8 | dims u32 * rank | float32 payload

Payload is row-major and holds exactly prod(dims) values.
"""
import struct

import numpy as np

from .constants import TENSOR_MAGIC, TENSOR_VERSION, PGM_UNIT
from .exceptions import TensorFormatError, ShapeError

_HEADER = struct.Struct("<4sBB")
_PAYLOAD_DTYPE = np.dtype("<f4")


def encode_tensor(dims, data):
    """Serialize tensor to bytes.

    Args:
        dims (Iterable[int]): Tensor dimensions.
        data (Union[np.ndarray, Iterable[float]]): Values in row-major order.

    Returns:
        bytes: Encoded tensor.

    """
    dims = tuple(int(dim) for dim in dims)
    if len(dims) > 255:
        raise ShapeError(None, dims, "Tensor rank {} exceeds 255".format(
            len(dims)
        ))
    for dim in dims:
        if dim < 0 or dim > 0xFFFFFFFF:
            raise ShapeError(None, dims, "Dimension {} out of range".format(
                dim
            ))
    payload = np.ascontiguousarray(data, dtype=_PAYLOAD_DTYPE).reshape(-1)
    expected = int(np.prod(dims, dtype=np.int64)) if dims else 1
    if payload.size != expected:
        raise ShapeError(
            dims,
            (payload.size, ),
            "Dimensions {} need {} values, got {}".format(
                dims, expected, payload.size
            )
        )
    header = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, len(dims))
    dims_bytes = struct.pack("<{}I".format(len(dims)), *dims)
    return header + dims_bytes + payload.tobytes()


def decode_tensor(content, path="<bytes>"):
    """Parse bytes created by 'encode_tensor'.

    Returns:
        tuple[tuple[int, ...], np.ndarray]: Dimensions and float32 array
            shaped by them.

    Raises:
        TensorFormatError: Magic, version or payload length mismatch.

    """
    if len(content) < _HEADER.size:
        raise TensorFormatError(path, "truncated header")
    magic, version, rank = _HEADER.unpack_from(content, 0)
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(path, "bad magic {!r}".format(magic))
    if version != TENSOR_VERSION:
        raise TensorFormatError(
            path, "unsupported version {}".format(version)
        )
    dims_end = _HEADER.size + 4 * rank
    if len(content) < dims_end:
        raise TensorFormatError(path, "truncated dimensions")
    dims = struct.unpack_from("<{}I".format(rank), content, _HEADER.size)
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload_size = len(content) - dims_end
    if payload_size != count * _PAYLOAD_DTYPE.itemsize:
        raise TensorFormatError(
            path,
            "payload has {} bytes, dimensions {} need {}".format(
                payload_size, tuple(dims), count * _PAYLOAD_DTYPE.itemsize
            )
        )
    data = np.frombuffer(content, dtype=_PAYLOAD_DTYPE, offset=dims_end)
    return tuple(dims), data.reshape(dims).astype(np.float32)


def tensor_write(path, dims, data):
    content = encode_tensor(dims, data)
    with open(path, "wb") as stream:
        stream.write(content)


def tensor_read(path):
    with open(path, "rb") as stream:
        content = stream.read()
    return decode_tensor(content, path)


def write_array(path, array):
    array = np.asarray(array)
    tensor_write(path, array.shape, array)


def read_array(path):
    return tensor_read(path)[1]


def write_pgm(path, values, unit=PGM_UNIT):
    """Write 2D map as 16-bit binary PGM.

    Values are divided by 'unit' (default 0.01 mm per level), rounded and
    clipped to [0, 65535].
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(None, values.shape, "PGM export needs a 2D map")
    levels = np.clip(np.round(values / unit), 0, 65535).astype(">u2")
    height, width = levels.shape
    with open(path, "wb") as stream:
        header = "P5\n{} {}\n65535\n".format(width, height)
        stream.write(header.encode("ascii"))
        stream.write(levels.tobytes())


def _read_netpbm_header(content, expected_magic, fields):
    tokens = []
    index = 0
    while len(tokens) < fields:
        while index < len(content) and content[index:index + 1].isspace():
            index += 1
        if content[index:index + 1] == b"#":
            while index < len(content) and content[index:index + 1] != b"\n":
                index += 1
            continue
        start = index
        while index < len(content) and not content[index:index + 1].isspace():
            index += 1
        if start == index:
            raise ValueError("Truncated image header")
        tokens.append(content[start:index])
    if tokens[0] != expected_magic:
        raise ValueError("Expected {!r} image got {!r}".format(
            expected_magic, tokens[0]
        ))
    # single whitespace byte separates header and raster
    return tokens, index + 1


def read_pgm(path, unit=PGM_UNIT):
    with open(path, "rb") as stream:
        content = stream.read()
    tokens, offset = _read_netpbm_header(content, b"P5", 4)
    width, height = int(tokens[1]), int(tokens[2])
    levels = np.frombuffer(
        content, dtype=">u2", count=width * height, offset=offset
    )
    return levels.reshape(height, width).astype(np.float64) * unit


def write_pbm(path, mask):
    """Write boolean mask as binary PBM (1 = ink, black)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ShapeError(None, mask.shape, "PBM export needs a 2D mask")
    height, width = mask.shape
    packed = np.packbits(mask, axis=1)
    with open(path, "wb") as stream:
        stream.write("P4\n{} {}\n".format(width, height).encode("ascii"))
        stream.write(packed.tobytes())


def read_pbm(path):
    with open(path, "rb") as stream:
        content = stream.read()
    tokens, offset = _read_netpbm_header(content, b"P4", 3)
    width, height = int(tokens[1]), int(tokens[2])
    row_bytes = (width + 7) // 8
    packed = np.frombuffer(
        content, dtype=np.uint8, count=row_bytes * height, offset=offset
    ).reshape(height, row_bytes)
    return np.unpackbits(packed, axis=1)[:, :width].astype(bool)
