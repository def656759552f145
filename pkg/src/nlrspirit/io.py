"""Binary containers, run manifests and iteration logs.

Container layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"PMRI"
    4       4     version (uint32, currently 1)
    8       1     kind (uint8)
    9       16    dims: four uint32 extents (C, Nx, Ny, extra)
    25      ...   payload

Kinds and payloads:

0  complex multicoil ``(C, Nx, Ny)``; ``extra = 0``; interleaved float32
   ``(re, im)`` pairs, coil-major then row-major.
1  real image ``(Nx, Ny)``; ``C = 1``, ``extra = 0``; float32.
2  boolean mask ``(Nx, Ny)``; ``C = 1``, ``extra = 0``; one byte (0/1) per
   sample followed by four uint32 ACS bounds ``r0, r1, c0, c1``.
3  calibration kernel; dims ``(C, ks, ks, C)``; interleaved float32 pairs of
   ``weights[dx, dy, s, t]`` stored in ``t, dx, dy, s`` order.
"""

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .calibration import CalibKernel
from .fourier import SamplingMask

__all__ = [
    "ContainerError",
    "ManifestError",
    "KIND_COMPLEX",
    "KIND_REAL",
    "KIND_MASK",
    "KIND_KERNEL",
    "encode_container",
    "decode_container",
    "write_container",
    "read_container",
    "read_roi",
    "file_digest",
    "build_manifest",
    "write_manifest",
    "read_manifest",
    "LOG_COLUMNS",
    "METRIC_COLUMNS",
    "write_log_csv",
    "atomic_write_bytes",
]

MAGIC = b"PMRI"
VERSION = 1
HEADER = struct.Struct("<4sIB4I")
ACS_TRAILER = struct.Struct("<4I")
KIND_COMPLEX, KIND_REAL, KIND_MASK, KIND_KERNEL = 0, 1, 2, 3
MAX_ELEMENTS = 1 << 32
_U32_MAX = (1 << 32) - 1

LOG_COLUMNS = ("iter", "re", "elapsed_s")
METRIC_COLUMNS = ("snr_db", "hfen", "ssim")


class ContainerError(ValueError):
    """Malformed, truncated or inconsistent container."""


class ManifestError(ValueError):
    """Manifest digests do not match the files they describe."""


def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _interleave(z):
    z = np.ascontiguousarray(z, dtype=np.complex64)
    return z.view(np.float32).astype("<f4", copy=False).tobytes()


def _deinterleave(buf, shape):
    return np.frombuffer(buf, dtype="<f4").astype(np.float32).view(np.complex64).reshape(shape)


def _check_dims(dims):
    for d in dims:
        if not 0 <= int(d) <= _U32_MAX:
            raise ContainerError(f"extent {d} does not fit in an unsigned 32-bit field")


def encode_container(payload):
    """Serialize a payload to container bytes.

    ``payload`` may be a complex ``(C, Nx, Ny)`` array, a real 2D array, a
    :class:`SamplingMask` or a :class:`CalibKernel`.
    """
    if isinstance(payload, SamplingMask):
        nx, ny = payload.shape
        dims = (1, nx, ny, 0)
        body = payload.keep.astype(np.uint8).tobytes() + ACS_TRAILER.pack(*payload.acs_rows, *payload.acs_cols)
        kind = KIND_MASK
    elif isinstance(payload, CalibKernel):
        w = payload.weights
        ks, C = w.shape[0], w.shape[2]
        if C < 1:
            raise ContainerError("kernel has no coils")
        dims = (C, ks, ks, C)
        body = _interleave(np.transpose(w, (3, 0, 1, 2)))
        kind = KIND_KERNEL
    else:
        arr = np.asarray(payload)
        if np.iscomplexobj(arr):
            if arr.ndim != 3:
                raise ContainerError(f"complex payload must be (C, Nx, Ny), got shape {arr.shape}")
            if 0 in arr.shape:
                raise ContainerError(f"complex payload has an empty axis: shape {arr.shape}")
            dims = arr.shape + (0,)
            body = _interleave(arr)
            kind = KIND_COMPLEX
        elif arr.dtype.kind in "biuf":
            if arr.ndim != 2 or 0 in arr.shape:
                raise ContainerError(f"real payload must be a non-empty 2D array, got shape {arr.shape}")
            dims = (1,) + arr.shape + (0,)
            body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            kind = KIND_REAL
        else:
            raise ContainerError(f"unsupported payload type {type(payload).__name__}")
    _check_dims(dims)
    return HEADER.pack(MAGIC, VERSION, kind, *dims) + body


def _expected_size(kind, dims):
    C, nx, ny, extra = dims
    if kind == KIND_COMPLEX:
        if C < 1 or nx < 1 or ny < 1 or extra != 0:
            raise ContainerError(f"dims {dims} invalid for a complex multicoil container")
        n, item, tail = C * nx * ny, 8, 0
    elif kind in (KIND_REAL, KIND_MASK):
        if C != 1 or nx < 1 or ny < 1 or extra != 0:
            raise ContainerError(f"dims {dims} invalid for kind {kind}")
        n = nx * ny
        item, tail = (4, 0) if kind == KIND_REAL else (1, ACS_TRAILER.size)
    elif kind == KIND_KERNEL:
        if C < 1 or C != extra or nx != ny or nx % 2 != 1:
            raise ContainerError(f"dims {dims} invalid for a kernel container")
        n, item, tail = C * C * nx * ny, 8, 0
    else:
        raise ContainerError(f"unknown container kind {kind}")
    if n > MAX_ELEMENTS:
        raise ContainerError(f"dims {dims} overflow the supported payload size ({n} elements)")
    return n * item + tail


def decode_container(data):
    """Parse container bytes into the payload type written by :func:`encode_container`."""
    data = bytes(data)
    if len(data) < HEADER.size:
        raise ContainerError(f"truncated header: expected {HEADER.size} bytes, got {len(data)}")
    magic, version, kind, *dims = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"version mismatch: file has {version}, reader supports {VERSION}")
    dims = tuple(dims)
    expected = _expected_size(kind, dims)
    body = data[HEADER.size :]
    if len(body) < expected:
        raise ContainerError(f"truncated payload: expected {expected} bytes, got {len(body)}")
    if len(body) > expected:
        raise ContainerError(f"trailing data: expected {expected} payload bytes, got {len(body)}")
    C, nx, ny, extra = dims
    if kind == KIND_COMPLEX:
        return _deinterleave(body, (C, nx, ny))
    if kind == KIND_REAL:
        return np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(nx, ny)
    if kind == KIND_MASK:
        raw = np.frombuffer(body[: nx * ny], dtype=np.uint8)
        if raw.max(initial=0) > 1:
            raise ContainerError("mask bytes must be 0 or 1")
        r0, r1, c0, c1 = ACS_TRAILER.unpack_from(body, nx * ny)
        try:
            return SamplingMask(raw.reshape(nx, ny).astype(bool), (r0, r1), (c0, c1))
        except ValueError as exc:
            raise ContainerError(f"invalid mask: {exc}") from None
    w = _deinterleave(body, (C, nx, ny, extra))
    return CalibKernel(np.transpose(w, (1, 2, 3, 0)))


def write_container(path, payload):
    """Validate and atomically write ``payload``; nothing is written on error."""
    atomic_write_bytes(path, encode_container(payload))


def read_container(path):
    with open(path, "rb") as fh:
        return decode_container(fh.read())


def read_roi(path):
    """Boolean ROI from a mask container or a real image container (nonzero = inside)."""
    obj = read_container(path)
    if isinstance(obj, SamplingMask):
        return np.array(obj.keep)
    if isinstance(obj, np.ndarray) and obj.ndim == 2 and not np.iscomplexobj(obj):
        return obj != 0
    raise ContainerError(f"{path}: expected a mask or real image container for the ROI")


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command, config, inputs, outputs, seed=None, version=None, runtime=None):
    """Assemble a run manifest.

    ``inputs`` and ``outputs`` map a role name to a file path; each entry is
    stored with its path and sha256 digest. ``runtime`` holds wall-clock
    facts (timestamps, thread count) that legitimately differ between
    otherwise identical runs.
    """
    from . import __version__

    def entries(files):
        return {k: {"path": str(p), "sha256": file_digest(p)} for k, p in sorted(files.items())}

    return {
        "command": list(command),
        "config": config,
        "inputs": entries(inputs),
        "outputs": entries(outputs),
        "seed": seed,
        "version": version or __version__,
        "runtime": runtime or {},
    }


def write_manifest(path, manifest):
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, text.encode())


def read_manifest(path, verify=True):
    """Load a manifest; with ``verify`` every recorded digest is recomputed."""
    with open(path) as fh:
        manifest = json.load(fh)
    if verify:
        base = Path(path).parent
        for section in ("inputs", "outputs"):
            for role, entry in manifest.get(section, {}).items():
                p = Path(entry["path"])
                if not p.is_absolute() and not p.exists():
                    p = base / p
                actual = file_digest(p)
                if actual != entry["sha256"]:
                    raise ManifestError(f"{section}.{role}: digest of {p} is {actual}, manifest says {entry['sha256']}")
    return manifest


def write_log_csv(path, log):
    """Write an :class:`IterationLog` with columns ``iter, re, elapsed_s`` and,
    when metrics were tracked, ``snr_db, hfen, ssim``."""
    columns = LOG_COLUMNS + (METRIC_COLUMNS if log.has_metrics else ())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in log.rows():
        writer.writerow({k: (v if isinstance(v, int) else repr(float(v))) for k, v in row.items()})
    atomic_write_bytes(path, buf.getvalue().encode())
