"""On-disk formats: the JADM binary matrix file and instance directories.

Matrix file layout (little-endian throughout):

    bytes 0-3    magic ``b"JADM"``
    bytes 4-7    format version, u32 (currently 1)
    bytes 8-15   rows, u64
    bytes 16-23  cols, u64
    payload      rows*cols float64, column-major

Vectors are stored as (n, 1) matrices.  An instance directory holds one file
per block matrix plus a ``manifest.json`` sidecar with dimensions, seed,
generator id, the file list, and a SHA-256 checksum over the payload files in
manifest order.
"""

import hashlib
import json
import os
import struct

import numpy as np

from .core import BlockOperator
from .problems import BasisPursuitInstance, ExchangeInstance
from .core import BlockVector

__all__ = [
    "FormatError",
    "write_matrix",
    "read_matrix",
    "write_vector",
    "read_vector",
    "save_block_operator",
    "load_block_operator",
    "save_instance",
    "load_instance",
    "instance_checksum",
]

MAGIC = b"JADM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class FormatError(ValueError):
    pass


def write_matrix(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise FormatError(f"can only store 2-D arrays, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes(order="F"))


def read_matrix(path):
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, rows, cols = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        payload = f.read(8 * rows * cols)
    if len(payload) != 8 * rows * cols:
        raise FormatError(f"{path}: truncated payload")
    data = np.frombuffer(payload, dtype="<f8")
    return np.ascontiguousarray(data.reshape((rows, cols), order="F"))


def write_vector(path, v):
    write_matrix(path, np.asarray(v, dtype=np.float64).reshape(-1, 1))


def read_vector(path):
    m = read_matrix(path)
    if m.shape[1] != 1:
        raise FormatError(f"{path}: expected a vector, got shape {m.shape}")
    return m.ravel()


def _sha256_files(directory, names):
    h = hashlib.sha256()
    for name in names:
        with open(os.path.join(directory, name), "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def save_block_operator(directory, A, prefix="A"):
    """Write per-block matrices plus rhs; returns the manifest fragment."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for i in range(A.n_blocks):
        name = f"{prefix}_{i:04d}.jadm"
        write_matrix(os.path.join(directory, name), A.block(i))
        files.append(name)
    write_vector(os.path.join(directory, f"{prefix}_rhs.jadm"), A.rhs)
    files.append(f"{prefix}_rhs.jadm")
    return {"m": A.m, "N": A.n_blocks, "col_sizes": list(A.col_sizes), "files": files}


def load_block_operator(directory, fragment, prefix="A"):
    blocks = [read_matrix(os.path.join(directory, f)) for f in fragment["files"][:-1]]
    rhs = read_vector(os.path.join(directory, fragment["files"][-1]))
    A = BlockOperator(blocks, rhs)
    if A.m != fragment["m"] or A.n_blocks != fragment["N"]:
        raise FormatError(f"{directory}: manifest does not match stored operator")
    return A


def save_instance(instance, directory):
    """Write an instance directory; returns the manifest dict (with checksum)."""
    os.makedirs(directory, exist_ok=True)
    meta = instance.metadata()
    files = []
    if isinstance(instance, ExchangeInstance):
        for i in range(instance.N):
            name = f"C_{i:04d}.jadm"
            write_matrix(os.path.join(directory, name), instance.C[i])
            files.append(name)
        for i in range(instance.N):
            name = f"d_{i:04d}.jadm"
            write_vector(os.path.join(directory, name), instance.d[i])
            files.append(name)
        write_matrix(os.path.join(directory, "x_star.jadm"),
                     np.stack(instance.x_star.blocks()))
        files.append("x_star.jadm")
    elif isinstance(instance, BasisPursuitInstance):
        write_matrix(os.path.join(directory, "A.jadm"), instance.A)
        write_vector(os.path.join(directory, "x_star.jadm"), instance.x_star)
        write_vector(os.path.join(directory, "c.jadm"), instance.c)
        write_vector(os.path.join(directory, "support.jadm"),
                     instance.support.astype(np.float64))
        files += ["A.jadm", "x_star.jadm", "c.jadm", "support.jadm"]
    else:
        raise FormatError(f"cannot save instance of type {type(instance).__name__}")
    manifest = dict(meta)
    manifest["format"] = "jadm-instance-v1"
    manifest["files"] = files
    manifest["checksum"] = _sha256_files(directory, files)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_instance(directory):
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format") != "jadm-instance-v1":
        raise FormatError(f"{directory}: not an instance directory")
    got = _sha256_files(directory, manifest["files"])
    if got != manifest["checksum"]:
        raise FormatError(f"{directory}: checksum mismatch (corrupt instance)")
    kind = manifest["kind"]
    if kind == "exchange":
        N = manifest["N"]
        C = [read_matrix(os.path.join(directory, f"C_{i:04d}.jadm")) for i in range(N)]
        d = [read_vector(os.path.join(directory, f"d_{i:04d}.jadm")) for i in range(N)]
        xs = read_matrix(os.path.join(directory, "x_star.jadm"))
        return ExchangeInstance(
            n=manifest["n"], N=N, p=manifest["p"], seed=manifest["seed"],
            C=tuple(C), d=tuple(d), x_star=BlockVector(list(xs)),
        )
    if kind == "bp":
        return BasisPursuitInstance(
            m=manifest["m"], n=manifest["n"], N=manifest["N"], k=manifest["k"],
            sigma=manifest["sigma"], seed=manifest["seed"],
            A=read_matrix(os.path.join(directory, "A.jadm")),
            x_star=read_vector(os.path.join(directory, "x_star.jadm")),
            support=read_vector(os.path.join(directory, "support.jadm")).astype(np.int64),
            c=read_vector(os.path.join(directory, "c.jadm")),
        )
    raise FormatError(f"{directory}: unknown instance kind {kind!r}")


def instance_checksum(directory):
    with open(os.path.join(directory, "manifest.json")) as f:
        return json.load(f)["checksum"]
