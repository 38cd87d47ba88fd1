"""Checkpoint directories: ``manifest.json`` plus raw little-endian float32 blobs.

``params.bin`` holds the model parameters and ``optim.bin`` the AdamW moments,
both in manifest order. The manifest records a SHA-256 over both blobs.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..numerics import AdamW, Module

FORMAT = "dialexperts-ckpt/1"
LOCK = ".lock"


@dataclass
class Checkpoint:
    path: Path
    manifest: dict = field(repr=False)

    @property
    def stage(self) -> int:
        return int(self.manifest["stage"])

    @property
    def step(self) -> int:
        return int(self.manifest["step"])

    @property
    def config(self) -> dict:
        return self.manifest["config"]


@contextlib.contextmanager
def directory_lock(path: Path):
    """Exclusive lock file; a second writer fails instead of interleaving."""
    path.mkdir(parents=True, exist_ok=True)
    lock = path / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{path}: checkpoint directory is locked by another writer ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _pack(arrays: list[tuple[str, np.ndarray]]) -> tuple[list[dict], bytes]:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def _unpack(entries: list[dict], blob: bytes, where: Path) -> dict[str, np.ndarray]:
    out = {}
    for e in entries:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 4 * count
        if end > len(blob):
            raise DataError(f"{where}: blob too short for {e['name']}")
        out[e["name"]] = np.frombuffer(blob, dtype="<f4", count=count, offset=e["offset"]).reshape(e["shape"])
    return out


def save_checkpoint(
    path,
    model: Module,
    optimizer: AdamW | None,
    config: dict,
    config_hash: str,
    stage: int,
    step: int,
    extra: dict | None = None,
) -> Checkpoint:
    path = Path(path)
    params = list(model.named_parameters())
    entries, blob = _pack([(n, p.data) for n, p in params])
    optim_entries, optim_blob, steps = [], b"", {}
    if optimizer is not None:
        optim_entries, optim_blob = _pack(sorted(optimizer.state_arrays().items()))
        steps = optimizer.steps()
    digest = hashlib.sha256(blob + optim_blob).hexdigest()
    manifest = {
        "format": FORMAT,
        "config_hash": config_hash,
        "config": config,
        "stage": stage,
        "step": step,
        "params": entries,
        "optimizer": {"entries": optim_entries, "steps": steps},
        "sha256": digest,
        **(extra or {}),
    }
    with directory_lock(path):
        tmp = path / ".incoming"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        (tmp / "params.bin").write_bytes(blob)
        (tmp / "optim.bin").write_bytes(optim_blob)
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
        for name in ("params.bin", "optim.bin", "manifest.json"):
            os.replace(tmp / name, path / name)
        tmp.rmdir()
    return Checkpoint(path, manifest)


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{path}: not a checkpoint (no manifest.json)")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: malformed manifest ({exc.msg})") from None
    if manifest.get("format") != FORMAT:
        raise DataError(f"{manifest_path}: unsupported checkpoint format {manifest.get('format')!r}")
    return Checkpoint(path, manifest)


def load_checkpoint(ckpt: Checkpoint | str | Path, model: Module, optimizer: AdamW | None = None) -> Checkpoint:
    """Restore parameters (and optimizer moments when given); verifies the content hash."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = read_checkpoint(ckpt)
    blob = (ckpt.path / "params.bin").read_bytes()
    optim_blob = (ckpt.path / "optim.bin").read_bytes()
    if hashlib.sha256(blob + optim_blob).hexdigest() != ckpt.manifest["sha256"]:
        raise DataError(f"{ckpt.path}: content hash mismatch; checkpoint is corrupt")
    state = _unpack(ckpt.manifest["params"], blob, ckpt.path)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{ckpt.path}: checkpoint does not fit the model ({exc})") from None
    if optimizer is not None:
        opt = ckpt.manifest["optimizer"]
        optimizer.load_state(_unpack(opt["entries"], optim_blob, ckpt.path), opt["steps"])
    return ckpt
