"""
Raw little-endian float64 arrays and JSON side files.

Every binary artifact in the pipeline is a flat `<f8` dump in row-major order;
the shape lives in a neighbouring JSON document.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from stonet.errors import DatasetFormatError

DTYPE = np.dtype('<f8')


def write_array(path, array: np.ndarray):
    np.ascontiguousarray(array, dtype=DTYPE).tofile(path)


def read_array(path, shape: Sequence[int]) -> np.ndarray:
    expected = int(np.prod(shape)) * DTYPE.itemsize
    size = os.path.getsize(path)
    if size != expected:
        raise DatasetFormatError(
            f'{path}: expected {expected} bytes for shape {tuple(shape)}, found {size}',
            offset=min(size, expected))
    return np.fromfile(path, dtype=DTYPE).reshape(shape)


def write_json(path, document: Mapping[str, Any]):
    with open(path, 'w') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write('\n')


def read_json(path) -> Any:
    with open(path) as f:
        return json.load(f)


def digest(path) -> str:
    """ sha256 of a file, or of every file below a directory in sorted order. """
    path = Path(path)
    h = hashlib.sha256()
    files = [path] if path.is_file() else sorted(p for p in path.rglob('*') if p.is_file())
    for p in files:
        if path.is_dir():
            h.update(str(p.relative_to(path)).encode())
        with open(p, 'rb') as f:
            for chunk in iter(lambda: f.read(1 << 20), b''):
                h.update(chunk)
    return h.hexdigest()
