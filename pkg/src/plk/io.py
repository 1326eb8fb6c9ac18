"""File formats: PFM images, PLPC point clouds, TNS tensors, JSON and CSV.

Every writer goes through a temp file and ``os.replace`` so readers never
see a half-written artifact. Float payloads are stored as little-endian
float32; that cast is the only lossy step.
"""

from __future__ import annotations

import json
import os
import re
import struct
import tempfile
from pathlib import Path

import numpy as np

from .camera import PointCloud
from .errors import FormatError, InvalidShape
from .softquant import VoxelGridSpec

__all__ = [
    "read_json",
    "read_pfm",
    "read_plpc",
    "read_tns",
    "load_scene",
    "save_scene",
    "write_bytes_atomic",
    "write_csv_trace",
    "write_json",
    "write_pfm",
    "write_plpc",
    "write_plpc_text",
    "write_occupancy",
    "write_tns",
]

PLPC_MAGIC = b"PLPC"
PLPC_VERSION = 1
_PLPC_HEADER = struct.Struct("<4sIII")


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read file ({exc.strerror})", path=path, offset=0) from exc


# -- PFM ---------------------------------------------------------------------


def write_pfm(path, image) -> None:
    """Write an (H, W) or (H, W, 3) grid; rows are stored bottom to top."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        magic = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
    elif img.ndim == 3 and img.shape[2] == 1:
        img, magic = img[..., 0], b"Pf"
    else:
        raise InvalidShape(f"PFM holds 1 or 3 channels, got shape {img.shape}")
    H, W = img.shape[:2]
    header = magic + b"\n" + f"{W} {H}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
    write_bytes_atomic(path, header + payload)


_TOKEN = re.compile(rb"\S+")


def read_pfm(path) -> np.ndarray:
    data = _read_bytes(path)
    pos = 0
    tokens = []
    # magic, width, height, scale: each followed by whitespace; one byte of
    # whitespace ends the header
    while len(tokens) < 4:
        m = _TOKEN.search(data, pos)
        if m is None:
            raise FormatError("truncated PFM header", path=path, offset=len(data))
        tokens.append((m.group(), m.start()))
        pos = m.end()
    if pos >= len(data) or data[pos : pos + 1] not in b" \t\r\n":
        raise FormatError("PFM header not terminated by whitespace", path=path, offset=pos)
    pos += 1
    (magic, off0), (w, off1), (h, off2), (scale, off3) = tokens
    if magic not in (b"PF", b"Pf"):
        raise FormatError(f"bad PFM magic {magic!r}", path=path, offset=off0)
    dims = []
    for tok, off in ((w, off1), (h, off2)):
        try:
            n = int(tok)
        except ValueError:
            raise FormatError(f"PFM dimension {tok!r} is not an integer", path=path, offset=off) from None
        if n < 1:
            raise FormatError("PFM dimensions must be positive", path=path, offset=off)
        dims.append(n)
    width, height = dims
    try:
        s = float(scale)
    except ValueError:
        raise FormatError("PFM scale is not a number", path=path, offset=off3) from None
    if s == 0 or not np.isfinite(s):
        raise FormatError("PFM scale must be a nonzero number", path=path, offset=off3)
    channels = 3 if magic == b"PF" else 1
    n = width * height * channels
    need = pos + 4 * n
    if len(data) < need:
        raise FormatError(
            f"PFM payload truncated: need {4 * n} bytes, have {len(data) - pos}",
            path=path,
            offset=len(data),
        )
    dtype = "<f4" if s < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(np.float64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.ascontiguousarray(arr.reshape(shape)[::-1])


# -- PLPC --------------------------------------------------------------------


def write_plpc(path, cloud: PointCloud) -> None:
    n = len(cloud)
    header = _PLPC_HEADER.pack(PLPC_MAGIC, PLPC_VERSION, n, 0)
    pts = np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()
    pix = np.ascontiguousarray(cloud.source_pixel, dtype="<u4").tobytes()
    write_bytes_atomic(path, header + pts + pix)


def read_plpc(path) -> PointCloud:
    data = _read_bytes(path)
    if len(data) < _PLPC_HEADER.size:
        raise FormatError("truncated PLPC header", path=path, offset=len(data))
    magic, version, count, flags = _PLPC_HEADER.unpack_from(data, 0)
    if magic != PLPC_MAGIC:
        raise FormatError(f"bad PLPC magic {magic!r}", path=path, offset=0)
    if version != PLPC_VERSION:
        raise FormatError(f"unsupported PLPC version {version}", path=path, offset=4)
    if flags != 0:
        raise FormatError(f"unsupported PLPC flags {flags}", path=path, offset=12)
    need = _PLPC_HEADER.size + count * 20
    if len(data) != need:
        raise FormatError(
            f"PLPC size mismatch: header says {count} points ({need} bytes), file has {len(data)}",
            path=path,
            offset=min(len(data), need),
        )
    off = _PLPC_HEADER.size
    pts = np.frombuffer(data, "<f4", count * 3, off).reshape(count, 3).astype(np.float64)
    pix = np.frombuffer(data, "<u4", count * 2, off + count * 12).reshape(count, 2).astype(np.int64)
    return PointCloud(pts, pix)


def write_plpc_text(path, cloud: PointCloud) -> None:
    pts = np.asarray(cloud.points, dtype=np.float32)
    lines = [f"{x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in pts.tolist()]
    write_bytes_atomic(path, "".join(lines).encode("ascii"))


# -- TNS ---------------------------------------------------------------------


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_tns(path, tensor, meta: dict) -> None:
    """Raw float32 payload plus ``<path>.json`` describing it; ``meta`` needs ``dims``."""
    t = np.asarray(tensor)
    if list(t.shape) != list(meta["dims"]):
        raise InvalidShape(f"tensor shape {t.shape} disagrees with sidecar dims {meta['dims']}")
    write_bytes_atomic(path, np.ascontiguousarray(t, dtype="<f4").tobytes())
    write_json(_sidecar(path), meta)


def write_occupancy(path, tensor, spec: VoxelGridSpec) -> None:
    meta = {"dims": list(spec.bins), **{k: v for k, v in spec.to_dict().items() if k != "bins"}}
    write_tns(path, tensor, meta)


def read_tns(path):
    """Return ``(tensor, meta)``."""
    meta = read_json(_sidecar(path))
    dims = meta.get("dims")
    if not isinstance(dims, list) or not dims or not all(isinstance(d, int) and d > 0 for d in dims):
        raise FormatError("sidecar 'dims' must be a list of positive integers", path=_sidecar(path), offset=0)
    data = _read_bytes(path)
    n = int(np.prod(dims))
    if len(data) != 4 * n:
        raise FormatError(
            f"TNS payload is {len(data)} bytes, dims need {4 * n}", path=path, offset=min(len(data), 4 * n)
        )
    arr = np.frombuffer(data, "<f4").astype(np.float64).reshape(dims)
    return arr, meta


# -- JSON / CSV --------------------------------------------------------------


def read_json(path):
    data = _read_bytes(path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("not valid UTF-8", path=path, offset=exc.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FormatError(f"invalid JSON ({exc.msg})", path=path, offset=offset) from None


def write_json(path, obj) -> None:
    write_bytes_atomic(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def write_csv_trace(path, values) -> None:
    lines = ["iteration,loss\n"] + [f"{i},{v!r}\n" for i, v in enumerate(values)]
    write_bytes_atomic(path, "".join(lines).encode("ascii"))


# -- scene directories -------------------------------------------------------

SCENE_FILES = ("image_t", "image_prev", "image_next", "gt_depth", "lidar")


def save_scene(directory, scene) -> None:
    """Write a synthetic scene as PFMs plus ``scene.json`` (camera, poses, provenance)."""
    d = Path(directory)
    for name in SCENE_FILES:
        write_pfm(d / f"{name}.pfm", getattr(scene, name))
    write_json(
        d / "scene.json",
        {
            "kind": scene.kind,
            "seed": scene.seed,
            "baseline": scene.baseline,
            "camera": scene.cam.to_dict(),
            "pose_to_prev": scene.pose_to_prev.to_dict(),
            "pose_to_next": scene.pose_to_next.to_dict(),
        },
    )


def load_scene(directory):
    from .camera import CameraIntrinsics, PoseSE3
    from .scene import SyntheticScene

    d = Path(directory)
    meta_path = d / "scene.json"
    meta = read_json(meta_path)
    try:
        cam = CameraIntrinsics(**meta["camera"])
        poses = PoseSE3.from_dict(meta["pose_to_prev"]), PoseSE3.from_dict(meta["pose_to_next"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad scene description: {exc}", path=meta_path, offset=0) from None
    arrays = {name: read_pfm(d / f"{name}.pfm") for name in SCENE_FILES}
    for name in ("gt_depth", "lidar"):
        if arrays[name].shape != cam.shape:
            raise InvalidShape(f"{name}.pfm is {arrays[name].shape}, camera is {cam.shape}")
    return SyntheticScene(
        pose_to_prev=poses[0],
        pose_to_next=poses[1],
        cam=cam,
        kind=meta.get("kind", "plane"),
        seed=meta.get("seed", 0),
        baseline=meta.get("baseline", 0.0),
        **arrays,
    )
