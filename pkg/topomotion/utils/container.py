"""
Versioned binary container shared by corpus files and checkpoints.

Layout (little endian)::

    magic      8 bytes   b"TOPOMOT\\x00"
    version    uint32
    header_len uint64
    header     UTF-8 JSON: kind, meta, arrays[{name, dtype, shape, offset, nbytes}],
               payload_bytes, checksum (sha256 of payload)
    payload    raw array bytes, in header order
"""
import hashlib
import json
import struct
from collections.abc import Mapping
from typing import Any

import numpy as np
from loguru import logger

from topomotion.exceptions import DataFormatError
from topomotion.utils.io import read_bytes, write_bytes

MAGIC = b"TOPOMOT\x00"
CONTAINER_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_ALLOWED_DTYPES = {"<f8", "<i8", "|u1"}


def _canonical_dtype(array: np.ndarray) -> np.dtype:
    if array.dtype.kind == "f":
        return np.dtype("<f8")
    if array.dtype.kind in "iu" and array.dtype.itemsize > 1:
        return np.dtype("<i8")
    if array.dtype.kind in "ub":
        return np.dtype("|u1")
    raise DataFormatError(f"Unsupported array dtype {array.dtype}")


def write_container(path: str, kind: str, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> str:
    """
    Write a container file.

    :param path: Destination path
    :param kind: Container kind tag, e.g. "corpus" or "checkpoint"
    :param meta: JSON-serializable metadata stored in the header
    :param arrays: Named arrays stored in the payload, in insertion order
    :return: Hex sha256 checksum of the payload
    :raises IOError: If the file cannot be written
    """
    table: list[dict[str, Any]] = []
    chunks: list[bytes] = []
    offset = 0
    for name, array in arrays.items():
        dtype = _canonical_dtype(np.asarray(array))
        data = np.ascontiguousarray(np.asarray(array).astype(dtype, copy=False)).tobytes()
        table.append({
            "name": name,
            "dtype": dtype.str,
            "shape": list(np.shape(array)),
            "offset": offset,
            "nbytes": len(data),
        })
        chunks.append(data)
        offset += len(data)

    payload = b"".join(chunks)
    checksum = hashlib.sha256(payload).hexdigest()
    header = json.dumps({
        "version": CONTAINER_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": table,
        "payload_bytes": len(payload),
        "checksum": checksum,
    }, sort_keys=True).encode("utf-8")

    write_bytes(_PREFIX.pack(MAGIC, CONTAINER_VERSION, len(header)) + header + payload, path)
    logger.debug(f"Wrote {kind} container to {path} ({len(table)} arrays, {len(payload)} bytes)")
    return checksum


def read_container(path: str, kind: str | None = None) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """
    Read and verify a container file.

    :param path: Source path
    :param kind: Expected kind tag; checked when given
    :return: (header, arrays) where header["meta"] holds the stored metadata
    :raises IOError: If the file cannot be read
    :raises DataFormatError: On bad magic, version mismatch, truncation or checksum failure
    """
    blob = read_bytes(path)

    if len(blob) < _PREFIX.size:
        raise DataFormatError(f"'{path}' is truncated: {len(blob)} bytes")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise DataFormatError(f"'{path}' is not a topomotion container (bad magic {magic!r})")
    if version != CONTAINER_VERSION:
        raise DataFormatError(f"'{path}' has container version {version}, expected {CONTAINER_VERSION}")

    start = _PREFIX.size
    if len(blob) < start + header_len:
        raise DataFormatError(f"'{path}' is truncated inside the header")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"'{path}' has a corrupt header: {e}") from e

    if kind is not None and header.get("kind") != kind:
        raise DataFormatError(f"'{path}' holds a {header.get('kind')!r} container, expected {kind!r}")

    payload = blob[start + header_len:]
    if len(payload) != header["payload_bytes"]:
        raise DataFormatError(
            f"'{path}' is truncated: payload has {len(payload)} bytes, header declares {header['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise DataFormatError(f"'{path}' failed checksum verification")

    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise DataFormatError(f"'{path}' declares unsupported dtype {entry['dtype']}")
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return header, arrays
