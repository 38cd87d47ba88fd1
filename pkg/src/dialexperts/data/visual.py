"""Raw visual payloads: an ASCII header line ``F C H W`` followed by little-endian float32 pixels."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DataError


def write_visual(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise ValueError(f"expected (F, C, H, W) frames, got {frames.shape}")
    header = " ".join(str(n) for n in frames.shape) + "\n"
    with Path(path).open("wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(frames.tobytes(order="C"))


def read_visual(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read visual payload ({exc.strerror})") from None
    newline = raw.find(b"\n")
    try:
        dims = tuple(int(x) for x in raw[:newline].decode("ascii").split())
    except (UnicodeDecodeError, ValueError):
        dims = ()
    if newline < 0 or len(dims) != 4:
        raise DataError(f"{path}: bad header, expected 'F C H W'")
    body = np.frombuffer(raw[newline + 1:], dtype="<f4")
    if body.size != int(np.prod(dims)):
        raise DataError(f"{path}: payload has {body.size} floats, header says {dims}")
    return body.reshape(dims).astype(np.float32)


def sample_frame_indices(total: int, num: int) -> np.ndarray:
    """Uniform sampling: index floor((i + 1/2) · total / num) for i < num."""
    if total < 1 or num < 1:
        raise ValueError("need at least one frame")
    return np.floor((np.arange(num) + 0.5) * total / num).astype(np.int64)
