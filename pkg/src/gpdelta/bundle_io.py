"""Binary container for derivative bundles.

Layout (all integers little-endian):

    bytes 0..3   magic "GPDB"
    u32          container format version (currently 1)
    u32          length of the meta block
    meta         canonical JSON (sorted keys, utf-8)
    tensors      fixed order: queries, mean_jacobian, mean_hessian_diag,
                 [mean_hessian_full if meta says so], cov_jacobian,
                 cov_hessian_diag

Each tensor is serialized as u32 rank, then u64 per dimension, then the
row-major float64 little-endian payload. Save/load round trips are
bit-exact.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import asdict

import numpy as np

from .derivatives import BundleMeta, CovDerivatives, DerivativeBundle, MeanDerivatives
from .errors import FormatError, IoError

__all__ = ["save_bundle", "load_bundle", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"GPDB"
FORMAT_VERSION = 1


def _write_tensor(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(np.uint32(arr.ndim).tobytes())
    fh.write(np.asarray(arr.shape, dtype="<u8").tobytes())
    fh.write(arr.tobytes())


def _read_exact(fh, count: int) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated bundle: wanted {count} bytes, got {len(buf)}")
    return buf


def _read_tensor(fh) -> np.ndarray:
    rank = int(np.frombuffer(_read_exact(fh, 4), dtype="<u4")[0])
    if rank > 8:
        raise FormatError(f"implausible tensor rank {rank}")
    dims = np.frombuffer(_read_exact(fh, 8 * rank), dtype="<u8").astype(int)
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
    return data.reshape(dims).copy()


def save_bundle(bundle: DerivativeBundle, path: str | os.PathLike) -> None:
    """Write a bundle to disk; overwrites an existing file."""
    meta = asdict(bundle.meta)
    meta["has_full_mean_hessian"] = bundle.has_full_hessian
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(np.uint32(FORMAT_VERSION).tobytes())
    buf.write(np.uint32(len(blob)).tobytes())
    buf.write(blob)
    _write_tensor(buf, bundle.queries)
    _write_tensor(buf, bundle.mean.jacobian)
    _write_tensor(buf, bundle.mean.hessian_diag)
    if bundle.has_full_hessian:
        _write_tensor(buf, bundle.mean.hessian_full)
    _write_tensor(buf, bundle.cov.jacobian)
    _write_tensor(buf, bundle.cov.hessian_diag)
    try:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise IoError(f"cannot write bundle to {path}: {exc}") from exc


def load_bundle(path: str | os.PathLike) -> DerivativeBundle:
    """Read a bundle written by save_bundle; validates header and shapes."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoError(f"cannot read bundle from {path}: {exc}") from exc
    with fh:
        if _read_exact(fh, 4) != MAGIC:
            raise FormatError(f"{path} is not a derivative bundle (bad magic)")
        version = int(np.frombuffer(_read_exact(fh, 4), dtype="<u4")[0])
        if version != FORMAT_VERSION:
            raise FormatError(
                f"bundle format version {version} not supported (expected {FORMAT_VERSION})")
        meta_len = int(np.frombuffer(_read_exact(fh, 4), dtype="<u4")[0])
        try:
            meta_raw = json.loads(_read_exact(fh, meta_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bundle meta block is not valid JSON: {exc}") from exc
        has_full = bool(meta_raw.pop("has_full_mean_hessian", False))
        try:
            meta = BundleMeta(**meta_raw)
        except TypeError as exc:
            raise FormatError(f"bundle meta block has wrong fields: {exc}") from exc

        queries = _read_tensor(fh)
        mean_jac = _read_tensor(fh)
        mean_hess = _read_tensor(fh)
        mean_full = _read_tensor(fh) if has_full else None
        cov_jac = _read_tensor(fh)
        cov_hess = _read_tensor(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after last tensor")

    n, t, p = meta.n, meta.t, meta.p
    expected = {
        "queries": (queries.shape, (t, p)),
        "mean jacobian": (mean_jac.shape, (t, n, p)),
        "mean hessian": (mean_hess.shape, (t, n, p, p)),
        "cov jacobian": (cov_jac.shape, (t, t, n, p)),
        "cov hessian": (cov_hess.shape, (t, t, n, p, p)),
    }
    if has_full:
        expected["full mean hessian"] = (mean_full.shape, (t, n * p, n * p))
    for name, (got, want) in expected.items():
        if got != want:
            raise FormatError(f"{name} has shape {got}, meta implies {want}")

    return DerivativeBundle(
        meta=meta,
        mean=MeanDerivatives(jacobian=mean_jac, hessian_diag=mean_hess,
                             hessian_full=mean_full),
        cov=CovDerivatives(jacobian=cov_jac, hessian_diag=cov_hess),
        queries=queries,
    )
