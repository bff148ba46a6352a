"""File formats: atomic writes, binary array dumps, YAML configs, label records."""
from __future__ import annotations

import contextlib
import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import yaml

from .errors import InputError

DUMP_MAGIC = b"BVLD"


@contextlib.contextmanager
def atomic_path(path: Path):
    """Yield a temporary path next to ``path``; rename over it on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        # mkstemp creates 0600; give the result ordinary umask permissions
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_path(Path(path)) as tmp:
        Path(tmp).write_text(text)


def write_dump(path, array) -> None:
    """Flat binary layout: magic, uint32 ndim, uint32 dims, float64 LE row-major data."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = DUMP_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    with atomic_path(Path(path)) as tmp:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes())


def read_dump(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DUMP_MAGIC:
        raise InputError(f"{path}: not a bevloc dump")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    offset = 8 + 4 * ndim
    data = np.frombuffer(raw, dtype="<f8", offset=offset)
    if data.size != int(np.prod(dims)):
        raise InputError(f"{path}: payload size does not match header")
    return data.reshape(dims).astype(np.float64)


def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: not valid YAML ({exc})") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a key-value document")
    return doc


LABEL_FIELDS = ("image_id", "lat", "lon", "center_lat", "center_lon", "zoom", "size")


def read_labels(path) -> list[dict]:
    """Read comma-separated label records with a header row.

    Required columns are ``LABEL_FIELDS``; ``legacy_u``/``legacy_v`` are optional.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in LABEL_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        records = []
        for n, row in enumerate(reader, start=2):
            try:
                rec = {
                    "image_id": row["image_id"],
                    "lat": float(row["lat"]),
                    "lon": float(row["lon"]),
                    "center_lat": float(row["center_lat"]),
                    "center_lon": float(row["center_lon"]),
                    "zoom": int(row["zoom"]),
                    "size": float(row["size"]),
                }
                if row.get("legacy_u") not in (None, "") and row.get("legacy_v") not in (None, ""):
                    rec["legacy_u"] = float(row["legacy_u"])
                    rec["legacy_v"] = float(row["legacy_v"])
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{n}: bad record ({exc})") from exc
            records.append(rec)
    return records
