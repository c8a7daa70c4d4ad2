"""Versioned checkpoint container.

Layout: 8-byte magic ``DIMAUGCK``, little-endian u32 format version, u64 header length, UTF-8
JSON header, then the raw little-endian bytes of every array in header order.
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
from loguru import logger

from dimaug.exceptions import CheckpointError
from dimaug.tensor.nn import Module


MAGIC = b'DIMAUGCK'
FORMAT_VERSION = 1
_PREFIX = struct.Struct('<8sIQ')


def save_checkpoint(
    path: Union[str, Path],
    arrays: Dict[str, np.ndarray],
    metadata: Dict[str, Any],
) -> Path:
    """Write named arrays plus JSON-serializable metadata.

    Args:
        path: Destination file.
        arrays: Arrays keyed by name; stored little-endian.
        metadata: Kind, config, config hash, seed, epoch, rng state and so on.

    Returns:
        Path: The written file.
    """
    path = Path(path)
    index = []
    blobs = []
    offset = 0
    for name, array in arrays.items():
        data = np.ascontiguousarray(array)
        data = data.astype(data.dtype.newbyteorder('<'), copy=False)
        raw = data.tobytes()
        index.append(
            {'name': name, 'dtype': data.dtype.str, 'shape': list(data.shape), 'offset': offset, 'nbytes': len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({'metadata': metadata, 'tensors': index}, sort_keys=True).encode('utf-8')
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    logger.debug(f'Wrote checkpoint {path} ({len(index)} arrays, {offset} bytes)')
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a checkpoint written by ``save_checkpoint``.

    Raises:
        CheckpointError: If the file is missing, truncated, or not a dimaug checkpoint.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'Checkpoint not found: {path}')
    payload = path.read_bytes()
    if len(payload) < _PREFIX.size:
        raise CheckpointError(f'{path}: file too short to be a checkpoint')
    magic, version, header_len = _PREFIX.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointError(f'{path}: bad magic {magic!r}')
    if version != FORMAT_VERSION:
        raise CheckpointError(f'{path}: unsupported format version {version}')
    start = _PREFIX.size
    try:
        header = json.loads(payload[start : start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'{path}: corrupt header: {e}') from e
    body = start + header_len
    arrays = {}
    for entry in header['tensors']:
        begin = body + entry['offset']
        end = begin + entry['nbytes']
        if end > len(payload):
            raise CheckpointError(f'{path}: truncated data for {entry["name"]}')
        arrays[entry['name']] = (
            np.frombuffer(payload[begin:end], dtype=np.dtype(entry['dtype'])).reshape(entry['shape']).copy()
        )
    return arrays, header['metadata']


def save_modules(path: Union[str, Path], modules: Dict[str, Module], metadata: Dict[str, Any]) -> Path:
    """Save several modules into one checkpoint, names prefixed by module key."""
    arrays = {
        f'{key}/{name}': value for key, module in modules.items() for name, value in module.state_dict().items()
    }
    return save_checkpoint(path, arrays, metadata)


def load_modules(path: Union[str, Path], modules: Dict[str, Module]) -> Dict[str, Any]:
    """Restore modules saved by ``save_modules``; returns the metadata."""
    arrays, metadata = load_checkpoint(path)
    for key, module in modules.items():
        prefix = f'{key}/'
        module.load_state_dict({name[len(prefix) :]: a for name, a in arrays.items() if name.startswith(prefix)})
    return metadata
