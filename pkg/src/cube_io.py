"""
On-disk artifacts: the HSC1 cube container, JSON run manifests with input
lineage, conversion to and from .npy / MATLAB .mat, and 8-bit PGM band previews.

HSC1 layout (little-endian): magic b"HSC1", version u16, H, W, L as u32,
dtype tag u8 (4 = float32, 8 = float64), then the (L, H, W) payload in C order.
A detector plane is stored with L = 1; an RGB image with L = C.
"""

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np
import scipy.io
from PIL import Image

logger = logging.getLogger(__name__)

MAGIC = b"HSC1"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIB")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}
_TAGS = {"f32": 4, "f64": 8}

CUBE_SUFFIX = ".hsc"


def write_cube(path: Path | str, data: np.ndarray, dtype: str = "f64") -> Path:
    """Write an (L, H, W) cube or an (H, W) plane."""
    if dtype not in _TAGS:
        raise ValueError(f"dtype must be one of {sorted(_TAGS)}, got {dtype!r}")
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3:
        raise ValueError(f"CubeFile holds 2-D or 3-D arrays, got shape {arr.shape}")
    L, H, W = arr.shape
    tag = _TAGS[dtype]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, H, W, L, tag))
        f.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes(order="C"))
    logger.debug("wrote %s (H=%d W=%d L=%d %s)", path, H, W, L, dtype)
    return path


def read_cube(path: Path | str) -> np.ndarray:
    """Read an HSC1 file as a float64 (L, H, W) array."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Cube file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, H, W, L, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if tag not in _DTYPES:
        raise ValueError(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPES[tag]
    expected = H * W * L * dtype.itemsize
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(L, H, W).astype(np.float64)


def read_plane(path: Path | str) -> np.ndarray:
    """Read an HSC1 file holding a single plane (L = 1) as (H, W)."""
    cube = read_cube(path)
    if cube.shape[0] != 1:
        raise ValueError(f"{path}: expected a plane (L = 1), got L = {cube.shape[0]}")
    return cube[0]


def file_sha256(path: Path | str) -> str:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(path: Path | str, manifest: dict[str, Any]) -> Path:
    """Sorted-key JSON, no timestamps, so identical runs give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False, default=str)
        f.write("\n")
    return path


def read_manifest(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _to_foreign(arr: np.ndarray) -> np.ndarray:
    """(L, H, W) -> (H, W, L); planes become (H, W)."""
    if arr.shape[0] == 1:
        return arr[0]
    return np.transpose(arr, (1, 2, 0))


def _from_foreign(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        return arr[np.newaxis]
    if arr.ndim != 3:
        raise ValueError(f"expected an (H, W) or (H, W, L) array, got shape {arr.shape}")
    return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))


def _load_mat(path: Path, var_name: Optional[str]) -> np.ndarray:
    contents = {k: v for k, v in scipy.io.loadmat(path).items() if not k.startswith("__")}
    if var_name is None:
        if len(contents) != 1:
            raise ValueError(f"{path}: holds {sorted(contents)}; pass a variable name")
        var_name = next(iter(contents))
    if var_name not in contents:
        raise ValueError(f"{path}: no variable {var_name!r}; found {sorted(contents)}")
    return contents[var_name]


def convert(src: Path | str, dst: Path | str, var_name: Optional[str] = None, dtype: str = "f64") -> Path:
    """
    Convert between HSC1 (.hsc) and .npy / .mat by suffix. The foreign side
    uses (H, W, L) order, (H, W) for planes.
    """
    src, dst = Path(src), Path(dst)
    if not src.exists():
        raise FileNotFoundError(f"Input file not found: {src}")
    s_suffix, d_suffix = src.suffix.lower(), dst.suffix.lower()
    if s_suffix == CUBE_SUFFIX and d_suffix in (".npy", ".mat"):
        foreign = _to_foreign(read_cube(src))
        dst.parent.mkdir(parents=True, exist_ok=True)
        if d_suffix == ".npy":
            np.save(dst, foreign)
        else:
            scipy.io.savemat(dst, {var_name or "cube": foreign})
    elif d_suffix == CUBE_SUFFIX and s_suffix in (".npy", ".mat"):
        foreign = np.load(src) if s_suffix == ".npy" else _load_mat(src, var_name)
        write_cube(dst, _from_foreign(foreign), dtype=dtype)
    else:
        raise ValueError(f"unsupported conversion {s_suffix} -> {d_suffix}; one side must be {CUBE_SUFFIX}")
    logger.info("converted %s -> %s", src, dst)
    return dst


def to_uint8(band: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a flat band maps to 0."""
    lo, hi = float(band.min()), float(band.max())
    if hi <= lo:
        return np.zeros(band.shape, dtype=np.uint8)
    return np.round((band - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_band_previews(cube: np.ndarray, out_dir: Path | str, prefix: str = "band") -> list[Path]:
    """One 8-bit PGM per band, named <prefix>_<01-based band>.pgm."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(cube.shape[0])))
    paths = []
    for index, band in enumerate(cube, start=1):
        path = out_dir / f"{prefix}_{index:0{width}d}.pgm"
        Image.fromarray(to_uint8(band)).save(path)
        paths.append(path)
    return paths
