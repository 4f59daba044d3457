"""On-disk formats: raw volumes, manifests, candidate tables, checkpoints,
PGM rasters, and flat metric reports.

Volumes are stored as a JSON header next to a raw little-endian blob in
x-fastest order. Checkpoints are a single file: one JSON header line
followed by concatenated little-endian float32 blobs, one per tensor, in
header order. Both round-trip byte-identically.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .volume import Volume

SCHEMA_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def write_volume(path_base: str, vol: Volume) -> str:
    """Write ``<path_base>.json`` + ``<path_base>.raw``; returns the json path."""
    dtype = "u8" if vol.data.dtype == np.uint8 else "f32"
    header = {
        "schema_version": SCHEMA_VERSION,
        "shape": list(vol.shape),
        "spacing_mm": list(vol.spacing_mm),
        "phase": vol.phase,
        "dtype": dtype,
    }
    json_path = path_base + ".json"
    with open(json_path, "w") as f:
        json.dump(header, f, sort_keys=True)
        f.write("\n")
    # x varies fastest on disk; in memory data is (W,H,D) row-major
    blob = np.ascontiguousarray(vol.data.transpose(2, 1, 0)).astype(_DTYPES[dtype])
    with open(path_base + ".raw", "wb") as f:
        f.write(blob.tobytes())
    return json_path


def read_volume(json_path: str) -> Volume:
    with open(json_path) as f:
        header = json.load(f)
    dtype = _DTYPES[header["dtype"]]
    W, H, D = header["shape"]
    raw_path = json_path[:-5] + ".raw"
    blob = np.fromfile(raw_path, dtype=dtype)
    if blob.size != W * H * D:
        raise ValueError(
            f"{raw_path}: expected {W * H * D} voxels for shape {header['shape']}, "
            f"got {blob.size}")
    data = blob.reshape(D, H, W).transpose(2, 1, 0)
    return Volume(data, tuple(header["spacing_mm"]), header["phase"])


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")


def read_json(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


CANDIDATE_COLUMNS = ("study_id", "phase", "score", "x1", "y1", "z1", "x2", "y2", "z2")


def write_candidates(path: str, rows: list[dict]) -> None:
    """One record per candidate, fixed column order."""
    with open(path, "w") as f:
        f.write(",".join(CANDIDATE_COLUMNS) + "\n")
        for row in rows:
            f.write("{study_id},{phase},{score:.6f},{x1:.3f},{y1:.3f},{z1:.3f},"
                    "{x2:.3f},{y2:.3f},{z2:.3f}\n".format(**row))


def read_candidates(path: str) -> list[dict]:
    out = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if tuple(header) != CANDIDATE_COLUMNS:
            raise ValueError(f"{path}: unexpected candidate columns {header}")
        for line in f:
            items = line.strip().split(",")
            row = dict(zip(CANDIDATE_COLUMNS, items))
            row["score"] = float(row["score"])
            for k in ("x1", "y1", "z1", "x2", "y2", "z2"):
                row[k] = float(row[k])
            out.append(row)
    return out


def save_checkpoint(path: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in tensors.items()],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for v in tensors.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        tensors = {}
        for entry in header["tensors"]:
            n = int(np.prod(entry["shape"])) if entry["shape"] else 1
            blob = np.frombuffer(f.read(n * 4), dtype="<f4")
            if blob.size != n:
                raise ValueError(f"{path}: truncated blob for tensor {entry['name']}")
            tensors[entry["name"]] = blob.reshape(entry["shape"]).copy()
    return tensors, header["meta"]


def write_pgm(path: str, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError(f"PGM wants a 2D uint8 raster, got {img.dtype} {img.shape}")
    with open(path, "wb") as f:
        f.write(pgm_bytes(img))


def pgm_bytes(image: np.ndarray) -> bytes:
    h, w = image.shape
    return b"P5\n%d %d\n255\n" % (w, h) + image.tobytes()


def parse_pgm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) payload")
    parts = data.split(b"\n", 3)
    w, h = (int(t) for t in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    raster = np.frombuffer(parts[3][:w * h], dtype=np.uint8)
    return raster.reshape(h, w).copy()


def write_report(path: str, values: dict) -> None:
    """Flat key/value report, sorted by key for stable bytes."""
    with open(path, "w") as f:
        for k in sorted(values):
            f.write(f"{k} = {format_value(values[k])}\n")


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float) or isinstance(v, np.floating):
        return f"{v:.6f}"
    return str(v)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
