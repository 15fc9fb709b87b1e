"""Binary artifact formats, the JSONL manifest, and atomic file writes.

Formats (all integers/floats little-endian):
  volume      magic "X2VOL", 3 x u32 dims (nx,ny,nz), 3 x f32 spacing,
              payload f32 voxels with x fastest.
  radiograph  magic "X2IMG", 2 x u32 (width,height), f32 pixels row-major.
  embeddings  magic "X2EMB", u32 count, u32 dim, then per row:
              u16 id length, id bytes, dim x f32.
  checkpoint  magic "X2CKPT", u32 version, u32 tensor count, then per tensor:
              u16 name length, name bytes, u8 ndim, ndim x u32 shape,
              f64 payload.

Every writer goes through a temp-file-plus-rename so partially written
artifacts never appear under their final name.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import DataError

MAGIC_VOLUME = b"X2VOL"
MAGIC_IMAGE = b"X2IMG"
MAGIC_EMB = b"X2EMB"
MAGIC_CKPT = b"X2CKPT"
CKPT_VERSION = 1


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataError(f"truncated file while reading {what}")
    return data


# ---------------------------------------------------------------------------
# volumes


def volume_to_bytes(volume) -> bytes:
    nx, ny, nz = volume.dims
    header = MAGIC_VOLUME + struct.pack("<3I", nx, ny, nz)
    header += struct.pack("<3f", *volume.spacing_mm)
    # voxels stored [z, y, x] C-order: x varies fastest
    payload = np.ascontiguousarray(volume.voxels, dtype="<f4").tobytes()
    return header + payload


def write_volume(path: str, volume) -> None:
    atomic_write_bytes(path, volume_to_bytes(volume))


def read_volume(path: str):
    from .phantom import Volume
    with open(path, "rb") as fh:
        if _read_exact(fh, 5, "magic") != MAGIC_VOLUME:
            raise DataError(f"{path}: bad volume magic")
        nx, ny, nz = struct.unpack("<3I", _read_exact(fh, 12, "dims"))
        spacing = struct.unpack("<3f", _read_exact(fh, 12, "spacing"))
        raw = _read_exact(fh, 4 * nx * ny * nz, "voxels")
    voxels = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(nz, ny, nx)
    return Volume(dims=(nx, ny, nz), spacing_mm=tuple(float(s) for s in spacing),
                  voxels=voxels)


# ---------------------------------------------------------------------------
# radiographs


def radiograph_to_bytes(image) -> bytes:
    header = MAGIC_IMAGE + struct.pack("<2I", image.width, image.height)
    return header + np.ascontiguousarray(image.pixels, dtype="<f4").tobytes()


def write_radiograph(path: str, image) -> None:
    atomic_write_bytes(path, radiograph_to_bytes(image))


def read_radiograph(path: str):
    from .drr import Radiograph
    with open(path, "rb") as fh:
        if _read_exact(fh, 5, "magic") != MAGIC_IMAGE:
            raise DataError(f"{path}: bad radiograph magic")
        width, height = struct.unpack("<2I", _read_exact(fh, 8, "dims"))
        raw = _read_exact(fh, 4 * width * height, "pixels")
    pixels = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(height, width)
    return Radiograph(width=width, height=height, pixels=pixels)


def write_pgm(path: str, pixels: np.ndarray) -> None:
    """8-bit PGM export for eyeballing; values are clipped to [0, 1]."""
    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    gray = np.round(arr * 255.0).astype(np.uint8)
    h, w = gray.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())


# ---------------------------------------------------------------------------
# embeddings


def write_embeddings(path: str, ids: list[str], matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or len(ids) != matrix.shape[0]:
        raise ValueError(f"need one id per row, got {len(ids)} ids for shape {matrix.shape}")
    parts = [MAGIC_EMB, struct.pack("<2I", matrix.shape[0], matrix.shape[1])]
    for row_id, row in zip(ids, matrix):
        encoded = row_id.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(row.astype("<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_embeddings(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 5, "magic") != MAGIC_EMB:
            raise DataError(f"{path}: bad embedding magic")
        count, dim = struct.unpack("<2I", _read_exact(fh, 8, "header"))
        ids = []
        rows = np.empty((count, dim), dtype=np.float64)
        for i in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, "id length"))
            ids.append(_read_exact(fh, id_len, "id").decode("utf-8"))
            rows[i] = np.frombuffer(_read_exact(fh, 4 * dim, "row"), dtype="<f4")
    return ids, rows


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_to_bytes(named: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC_CKPT, struct.pack("<2I", CKPT_VERSION, len(named))]
    for name in sorted(named):
        arr = np.asarray(named[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def write_checkpoint(path: str, named: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, checkpoint_to_bytes(named))


def read_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 6, "magic") != MAGIC_CKPT:
            raise DataError(f"{path}: bad checkpoint magic")
        version, count = struct.unpack("<2I", _read_exact(fh, 8, "header"))
        if version != CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        named = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape")) if ndim else ()
            size = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(fh, 8 * size, f"tensor {name}")
            named[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return named


# ---------------------------------------------------------------------------
# manifest


def write_manifest(path: str, triplets) -> None:
    lines = []
    for t in triplets:
        record = {"id": t.id, "volume": t.volume, "report": t.report,
                  "labels": list(t.labels), "split": t.split}
        lines.append(json.dumps(record))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path: str):
    from .phantom import Triplet
    triplets = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    triplets.append(Triplet(id=rec["id"], volume=rec["volume"],
                                            report=rec["report"],
                                            labels=[int(v) for v in rec["labels"]],
                                            split=rec["split"]))
                except (KeyError, ValueError) as exc:
                    raise DataError(f"{path}:{line_no}: bad manifest record: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return triplets


# ---------------------------------------------------------------------------
# small text helpers shared by the CLI


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
