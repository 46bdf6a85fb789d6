"""File formats: depth maps, masks, JSON/JSONL with atomic writes."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from PIL import Image

from .errors import ValidationError
from .geometry import DepthMap

RAW_DEPTH_SUFFIXES = (".bin", ".raw", ".f32")


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"


def write_json(path, obj: Any) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode("utf-8"))


def read_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    text = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)
    atomic_write_bytes(path, text.encode("utf-8"))


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    return rows


def write_depth(path, values: np.ndarray, valid: np.ndarray | None = None) -> None:
    """Write depth in meters; ``.png`` stores uint16 millimetres, raw suffixes float32."""
    path = Path(path)
    values = np.asarray(values, dtype=float)
    if valid is None:
        valid = np.isfinite(values) & (values > 0)
    if path.suffix.lower() == ".png":
        mm = np.where(valid, np.clip(np.round(values * 1000.0), 1, 65535), 0).astype(np.uint16)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp.png")
        Image.fromarray(mm).save(tmp)
        os.replace(tmp, path)
    else:
        h, w = values.shape
        payload = np.where(valid, values, 0.0).astype("<f4").tobytes()
        atomic_write_bytes(path, struct.pack("<II", w, h) + payload)


def read_depth(path) -> DepthMap:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"depth file not found: {path}")
    if path.suffix.lower() == ".png":
        arr = np.asarray(Image.open(path))
        if arr.ndim != 2:
            raise ValidationError(f"{path}: depth PNG must be single channel")
        valid = arr > 0
        return DepthMap(arr.astype(float) / 1000.0, valid)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ValidationError(f"{path}: truncated depth header")
    w, h = struct.unpack("<II", raw[:8])
    if len(raw) != 8 + 4 * w * h:
        raise ValidationError(f"{path}: expected {w}x{h} float32 payload")
    values = np.frombuffer(raw[8:], dtype="<f4").reshape(h, w).astype(float)
    valid = np.isfinite(values) & (values > 0)
    return DepthMap(np.where(valid, values, 0.0), valid)


def write_mask(path, mask: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp.png")
    Image.fromarray(np.asarray(mask, dtype=bool)).save(tmp)
    os.replace(tmp, path)


def read_mask(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask file not found: {path}")
    arr = np.asarray(Image.open(path))
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr > 0
