"""File formats: JSON sidecars, raw little-endian float64 arrays, containers.

Every writer is atomic (temp file + rename) and deterministic: no
timestamps, sorted JSON keys, fixed float formatting through repr.  Raw
arrays are always row-major float64 little-endian, so a sidecar plus its
shape fully describes the payload.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ValidationError

_MAGIC = b"FODKIT\x00\x00"
_CONTAINER_VERSION = 1


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj, path: Path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    _atomic_write_bytes(Path(path), text.encode("utf-8") + b"\n")


def load_json(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_f64(path: Path, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array, dtype="<f8")
    _atomic_write_bytes(Path(path), data.tobytes())


def read_f64(path: Path, shape) -> np.ndarray:
    data = np.fromfile(path, dtype="<f8")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValidationError(
            f"{path}: expected {expected} float64 values, found {data.size}"
        )
    return data.reshape(shape)


def config_hash(config_dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def sidecar_header(kind: str, cfg_hash: str | None) -> dict:
    header = {"kind": kind, "tool_version": __version__}
    if cfg_hash is not None:
        header["config_hash"] = cfg_hash
    return header


# -- generic binary container ---------------------------------------------------

def write_container(path: Path, kind: str, meta: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    """Versioned binary container: magic, header JSON, packed f64 arrays."""
    offset = 0
    index = []
    blobs = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(np.asarray(arr).shape),
                      "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = dict(meta)
    header.update({"kind": kind, "tool_version": __version__, "arrays": index})
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = (_MAGIC + struct.pack("<IQ", _CONTAINER_VERSION, len(hdr))
               + hdr + b"".join(blobs))
    _atomic_write_bytes(Path(path), payload)


def read_container(path: Path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise ValidationError(f"{path}: not a fodkit container")
    version, hdr_len = struct.unpack("<IQ", raw[8:20])
    if version != _CONTAINER_VERSION:
        raise ValidationError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[20:20 + hdr_len].decode("utf-8"))
    base = 20 + hdr_len
    arrays = {}
    for ent in header["arrays"]:
        n = int(np.prod(ent["shape"])) if ent["shape"] else 1
        start = base + ent["offset"]
        arrays[ent["name"]] = np.frombuffer(
            raw[start:start + 8 * n], dtype="<f8").reshape(ent["shape"]).copy()
    return header, arrays


# -- signal volumes -------------------------------------------------------------

def write_signal_volume(stem: Path, dims, blocks, data: np.ndarray,
                        sigma, seed, cfg_hash=None) -> None:
    """blocks: list of (bval, directions); data: (V, total directions)."""
    stem = Path(stem)
    sidecar = sidecar_header("signal_volume", cfg_hash)
    sidecar.update({
        "dims": list(dims),
        "blocks": [{"bval": float(b), "directions": d.tolist()}
                   for b, d in blocks],
        "sigma": sigma,
        "seed": seed,
        "data_file": stem.name + ".f64",
        "shape": list(data.shape),
    })
    dump_json(sidecar, stem.with_suffix(".json"))
    write_f64(stem.with_suffix(".f64"), data)


def read_signal_volume(stem: Path):
    stem = Path(stem)
    sidecar = load_json(stem.with_suffix(".json"))
    if sidecar.get("kind") != "signal_volume":
        raise ValidationError(f"{stem}: not a signal volume sidecar")
    data = read_f64(stem.parent / sidecar["data_file"], sidecar["shape"])
    blocks = [(float(b["bval"]), np.array(b["directions"]))
              for b in sidecar["blocks"]]
    return sidecar, blocks, data


# -- ROI truth -------------------------------------------------------------------

def write_truth(path: Path, truth, cfg_hash=None) -> None:
    voxels = []
    for v in range(truth.n_voxels):
        k = int(truth.n_fibers[v])
        voxels.append([
            {"dir": truth.directions[v, s].tolist(),
             "frac": float(truth.fractions[v, s]),
             "bundle": int(truth.bundle_ids[v, s])}
            for s in range(k)
        ])
    obj = sidecar_header("roi_truth", cfg_hash)
    obj.update({"dims": list(truth.dims), "voxels": voxels})
    dump_json(obj, path)


def read_truth(path: Path):
    from .synthetic import RoiTruth

    obj = load_json(path)
    if obj.get("kind") != "roi_truth":
        raise ValidationError(f"{path}: not a truth file")
    dims = tuple(obj["dims"])
    n_vox = int(np.prod(dims))
    n_fibers = np.zeros(n_vox, dtype=np.int64)
    directions = np.zeros((n_vox, 2, 3))
    fractions = np.zeros((n_vox, 2))
    bundles = np.full((n_vox, 2), -1, dtype=np.int64)
    for v, fibers in enumerate(obj["voxels"]):
        n_fibers[v] = len(fibers)
        for s, fib in enumerate(fibers):
            directions[v, s] = fib["dir"]
            fractions[v, s] = fib["frac"]
            bundles[v, s] = fib["bundle"]
    return RoiTruth(dims, n_fibers, directions, fractions, bundles)


# -- FOD fields ------------------------------------------------------------------

def write_fod_field(stem: Path, dims, beta: np.ndarray, dense: np.ndarray,
                    grid_points: np.ndarray, grid_meta: dict, l_max: int,
                    estimator: dict, trace: dict | None, cfg_hash=None) -> None:
    stem = Path(stem)
    sidecar = sidecar_header("fod_field", cfg_hash)
    sidecar.update({
        "dims": list(dims),
        "l_max": l_max,
        "estimator": estimator,
        "n_coef": int(beta.shape[1]),
        "beta_file": stem.name + ".beta.f64",
        "fod_file": stem.name + ".fod.f64",
        "fod_shape": list(dense.shape),
        "beta_shape": list(beta.shape),
        "grid": dict(grid_meta, points=grid_points.tolist()),
    })
    dump_json(sidecar, stem.with_suffix(".json"))
    write_f64(Path(str(stem) + ".beta.f64"), beta)
    write_f64(Path(str(stem) + ".fod.f64"), dense)
    if trace is not None:
        dump_json(trace, Path(str(stem) + ".trace.json"))


def read_fod_field(stem: Path):
    stem = Path(stem)
    sidecar = load_json(stem.with_suffix(".json"))
    if sidecar.get("kind") != "fod_field":
        raise ValidationError(f"{stem}: not a FOD field sidecar")
    beta = read_f64(stem.parent / sidecar["beta_file"], sidecar["beta_shape"])
    dense = read_f64(stem.parent / sidecar["fod_file"], sidecar["fod_shape"])
    return sidecar, beta, dense


# -- metric reports ----------------------------------------------------------------

CSV_COLUMNS = ("estimator", "class", "co", "ov", "un", "err_median_deg",
               "hdist_truth_mean", "hdist_truth_sd",
               "hdist_ref_mean", "hdist_ref_sd")


def write_metrics(stem: Path, rows: list[dict], cfg_hash=None) -> None:
    """rows follow CSV_COLUMNS; missing entries serialize as empty cells."""
    obj = sidecar_header("metrics", cfg_hash)
    obj["rows"] = rows
    dump_json(obj, Path(str(stem) + ".json"))
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        cells = []
        for col in CSV_COLUMNS:
            val = row.get(col)
            if val is None:
                cells.append("")
            elif isinstance(val, float):
                cells.append(f"{val:.6g}")
            else:
                cells.append(str(val))
        lines.append(",".join(cells))
    _atomic_write_bytes(Path(str(stem) + ".csv"),
                        ("\n".join(lines) + "\n").encode("utf-8"))


# -- tracts -------------------------------------------------------------------------

def write_tracts(stem: Path, tracts, summary: dict, cfg_hash=None) -> None:
    lines = []
    for t in tracts:
        lines.append(json.dumps(
            {"points": np.round(t.points, 9).tolist(),
             "length": round(t.length, 9)},
            sort_keys=True))
    _atomic_write_bytes(Path(str(stem) + ".jsonl"),
                        ("\n".join(lines) + ("\n" if lines else "")).encode())
    obj = sidecar_header("tract_summary", cfg_hash)
    obj.update(summary)
    dump_json(obj, Path(str(stem) + ".summary.json"))


def read_tracts(stem: Path):
    path = Path(str(stem) + ".jsonl")
    tracts = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                tracts.append(json.loads(line))
    summary = load_json(Path(str(stem) + ".summary.json"))
    return tracts, summary
