"""Matrix Market and binary PGM/PPM readers and writers."""
from __future__ import annotations

import os

import numpy as np
import scipy.io as sio
import scipy.sparse as sp
from PIL import Image

from .kernel import MatrixHandle


class UnsupportedFormatError(ValueError):
    pass


def read_matrix_market(path) -> MatrixHandle:
    """Load a real, general Matrix Market file (array -> dense, coordinate -> CSR)."""
    try:
        _, _, _, fmt, field, symmetry = sio.mminfo(path)
    except (ValueError, IndexError) as exc:
        raise UnsupportedFormatError(f"{path}: malformed Matrix Market header ({exc})") from exc
    if field not in ("real", "integer", "double"):
        raise UnsupportedFormatError(f"{path}: field {field!r} is not supported (real only)")
    if symmetry != "general":
        raise UnsupportedFormatError(f"{path}: symmetry {symmetry!r} is not supported (general only)")
    M = sio.mmread(path)
    if fmt == "coordinate":
        M = sp.csr_matrix(M, dtype=np.float64)
    else:
        M = np.asarray(M, dtype=np.float64)
    return MatrixHandle(M)


def write_matrix_market(M, path) -> None:
    """Write a dense array (array format) or sparse matrix (coordinate format)."""
    if isinstance(M, MatrixHandle):
        M = M.data
    if not sp.issparse(M):
        M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    # scipy appends .mtx unless the target is a file object
    with open(path, "wb") as fh:
        sio.mmwrite(fh, M, field="real", symmetry="general")


def read_image_pgm_ppm(path) -> tuple[np.ndarray, int]:
    """Read binary 8-bit PGM (P5) or PPM (P6) into a matrix scaled to [0, 1].

    Colour images are stacked channel by channel into a ``3*height x width``
    matrix so one factorization covers all channels.  Returns the matrix and
    the channel count.
    """
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"{path}: only binary PGM (P5) and PPM (P6) are supported, found {magic!r}")
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            raise UnsupportedFormatError(f"{path}: only 8-bit images are supported (mode {img.mode})")
        data = np.asarray(img, dtype=np.float64) / 255.0
    if data.ndim == 2:
        return data, 1
    return np.vstack([data[:, :, c] for c in range(3)]), 3


def write_image_pgm_ppm(M: np.ndarray, path, channels: int = 1) -> None:
    """Inverse of :func:`read_image_pgm_ppm`: clamp to [0, 1], quantize to 8 bits."""
    M = np.asarray(M, dtype=np.float64)
    pixels = np.rint(np.clip(M, 0.0, 1.0) * 255.0).astype(np.uint8)
    if channels == 3:
        if M.shape[0] % 3:
            raise ValueError(f"channel-stacked matrix has {M.shape[0]} rows, not a multiple of 3")
        pixels = np.dstack(np.split(pixels, 3, axis=0))
        img = Image.fromarray(pixels)
    elif channels == 1:
        img = Image.fromarray(pixels)
    else:
        raise ValueError(f"unsupported channel count {channels}")
    img.save(os.fspath(path), format="PPM")
