"""
Small binary/tabular exchange formats shared by the pipeline commands.

Complex tensors travel as little-endian complex64 with a one-line ASCII
header carrying the kind tag and dimensions, so external tools can parse
them without guessing.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MAGIC = "cpx64"


def write_complex(path, array: np.ndarray, kind: str) -> None:
    """Dump a complex array with a self-describing header."""
    arr = np.ascontiguousarray(array, dtype=np.complex64)
    dims = "x".join(str(d) for d in arr.shape)
    with open(path, "wb") as fh:
        fh.write(f"{_MAGIC} kind={kind} dims={dims} layout=C\n".encode())
        fh.write(arr.astype("<c8").tobytes())


def read_complex(path) -> tuple[np.ndarray, str]:
    """Read back a dump written by :func:`write_complex`."""
    with open(path, "rb") as fh:
        header = fh.readline().decode().strip()
        fields = header.split()
        if not fields or fields[0] != _MAGIC:
            raise ValueError(f"{path}: not a {_MAGIC} dump (header {header!r})")
        meta = dict(f.split("=", 1) for f in fields[1:])
        shape = tuple(int(d) for d in meta["dims"].split("x"))
        data = np.frombuffer(fh.read(), dtype="<c8").reshape(shape)
    return data.astype(np.complex128), meta.get("kind", "")


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
